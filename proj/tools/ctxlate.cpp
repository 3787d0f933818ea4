// ctxlate command-line driver. One subcommand per invocation; progress goes
// to stderr, artifacts to the paths given. Exit codes: 0 success, 1 runtime
// failure, 2 usage/config error.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctxlate/phantom.hpp"
#include "ctxlate/preprocess.hpp"
#include "ctxlate/trainer.hpp"
#include "ctxlate/translator.hpp"
#include "ctxlate/volume.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ctxlate;

std::optional<uint64_t> env_seed() {
    const char* s = std::getenv("CTXLATE_SEED");
    if (!s || !*s) return std::nullopt;
    return std::stoull(s);  // stoull throws on garbage -> usage error
}

/// Config files accept flat dotted keys ("weights.cycle": 10) as well as
/// nested objects; dotted keys are expanded here before parsing.
nlohmann::json expand_dotted(const nlohmann::json& flat) {
    nlohmann::json out = nlohmann::json::object();
    for (auto it = flat.begin(); it != flat.end(); ++it) {
        std::string key = it.key();
        std::replace(key.begin(), key.end(), '.', '/');
        out[nlohmann::json::json_pointer("/" + key)] = it.value();
    }
    return out;
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("bad JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

/// `out` with `suffix` appended to its stem ("runs/syn" -> "runs/syn_cycle").
fs::path with_suffix(fs::path out, const std::string& suffix) {
    if (out.extension() == ".json" || out.extension() == ".raw") out.replace_extension();
    out += suffix;
    return out;
}

// ---------------------------------------------------------------- phantom

void add_phantom(CLI::App& app) {
    auto sub = app.add_subcommand("phantom", "Generate a synthetic pelvis dataset "
                                             "(paired truth + pseudo-CBCT volumes)");
    auto patients = std::make_shared<int>(8);
    auto out = std::make_shared<std::string>();
    auto seed = std::make_shared<uint64_t>(0);
    sub->add_option("--patients", *patients, "Number of patients to generate")
        ->capture_default_str();
    sub->add_option("--out", *out, "Dataset output directory")->required();
    auto* seed_opt = sub->add_option("--seed", *seed, "Seed for geometry and degradation "
                                                      "(falls back to CTXLATE_SEED)");
    sub->callback([=] {
        phantom::PhantomSpec ps = phantom::default_phantom_spec();
        phantom::DegradationSpec ds;
        uint64_t s = ps.seed;
        if (seed_opt->count())
            s = *seed;
        else if (auto es = env_seed())
            s = *es;
        ps.seed = s;
        ds.seed = s;
        nlohmann::json manifest = phantom::emit_dataset(*patients, ps, ds, *out);
        std::cerr << "phantom: wrote " << manifest["patients"].size() << " patients ("
                  << 2 * manifest["patients"].size() << " volumes) to " << *out << " with seed "
                  << s << "\n";
    });
}

// ------------------------------------------------------------- preprocess

void add_preprocess(CLI::App& app) {
    auto sub = app.add_subcommand("preprocess", "Apply body masking to a volume "
                                                "(out-of-body voxels become -1000 HU)");
    auto input = std::make_shared<std::string>();
    auto output = std::make_shared<std::string>();
    auto per_volume = std::make_shared<bool>(false);
    auto no_largest = std::make_shared<bool>(false);
    auto no_fill = std::make_shared<bool>(false);
    auto threshold = std::make_shared<int>(0);
    sub->add_option("--input", *input, "Input volume (sidecar or stem)")->required();
    sub->add_option("--output", *output, "Output volume path")->required();
    sub->add_flag("--per-volume-otsu", *per_volume, "Pool the Otsu histogram over all slices");
    sub->add_flag("--no-largest-component", *no_largest, "Keep all mask components");
    sub->add_flag("--no-fill-holes", *no_fill, "Leave interior holes unmasked");
    auto* thr_opt = sub->add_option("--threshold", *threshold, "Fixed HU threshold instead of Otsu");
    sub->callback([=] {
        CTVolume vol = load_volume(*input);
        MaskOptions opts;
        opts.largest_component = !*no_largest;
        opts.fill_holes = !*no_fill;
        if (thr_opt->count())
            opts.threshold = static_cast<int16_t>(*threshold);
        else if (*per_volume)
            opts.threshold = otsu_threshold(vol);
        CTVolume out = vol;
        for (int z = 0; z < vol.depth(); ++z) {
            const HUSliceView view = slice_view(vol, z);
            const std::vector<int16_t> masked = apply_body_mask(view, make_body_mask(view, opts));
            std::copy(masked.begin(), masked.end(), out.slice(z));
        }
        save_volume(out, *output);
        std::cerr << "preprocess: masked " << vol.depth() << " slices -> " << *output << "\n";
    });
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string config, cbct, plan, out, resume;
    uint64_t seed = 0;
    int epochs = 0, epochs_constant = 0, epochs_decay = 0, checkpoint_every = 0;
    int crop_height = 0, crop_width = 0;
    double lr = 0;
};

void add_train(CLI::App& app) {
    auto sub = app.add_subcommand("train", "Train the CycleGAN on an unpaired dataset");
    auto a = std::make_shared<TrainArgs>();
    sub->add_option("--config", a->config, "JSON training config (flat dotted or nested keys)")
        ->check(CLI::ExistingFile);
    auto* seed_opt = sub->add_option("--seed", a->seed, "Run seed (falls back to CTXLATE_SEED)");
    auto* cbct_opt = sub->add_option("--cbct", a->cbct, "CBCT-domain dataset directory");
    auto* plan_opt = sub->add_option("--plan", a->plan, "PlanCT-domain dataset directory");
    auto* out_opt = sub->add_option("--out", a->out, "Run output directory");
    auto* ep_opt = sub->add_option("--epochs", a->epochs, "Total epochs at constant lr (sets decay to 0)");
    auto* epc_opt = sub->add_option("--epochs-constant", a->epochs_constant, "Constant-lr epochs");
    auto* epd_opt = sub->add_option("--epochs-decay", a->epochs_decay, "Linear-decay epochs");
    auto* lr_opt = sub->add_option("--lr", a->lr, "Base learning rate");
    auto* ck_opt = sub->add_option("--checkpoint-every", a->checkpoint_every, "Epochs between checkpoints");
    auto* ch_opt = sub->add_option("--crop-height", a->crop_height, "Training crop height");
    auto* cw_opt = sub->add_option("--crop-width", a->crop_width, "Training crop width");
    sub->add_option("--resume", a->resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    sub->callback([=] {
        TrainConfig cfg;
        bool file_has_seed = false;
        if (!a->config.empty()) {
            nlohmann::json j = expand_dotted(read_json_file(a->config));
            file_has_seed = j.contains("seed");
            cfg = train_config_from_json(j);
        }
        // precedence: flag > config file > CTXLATE_SEED > default
        if (seed_opt->count())
            cfg.seed = a->seed;
        else if (!file_has_seed)
            if (auto es = env_seed()) cfg.seed = *es;
        if (cbct_opt->count()) cfg.cbct_dir = a->cbct;
        if (plan_opt->count()) cfg.plan_dir = a->plan;
        if (out_opt->count()) cfg.out_dir = a->out;
        if (ep_opt->count()) {
            cfg.epochs_constant = a->epochs;
            cfg.epochs_decay = 0;
        }
        if (epc_opt->count()) cfg.epochs_constant = a->epochs_constant;
        if (epd_opt->count()) cfg.epochs_decay = a->epochs_decay;
        if (lr_opt->count()) cfg.base_lr = a->lr;
        if (ck_opt->count()) cfg.checkpoint_every = a->checkpoint_every;
        if (ch_opt->count()) cfg.crop.height = a->crop_height;
        if (cw_opt->count()) cfg.crop.width = a->crop_width;
        cfg.validate();

        std::cerr << "train: seed " << cfg.seed << ", " << cfg.total_epochs() << " epochs ("
                  << cfg.epochs_constant << " constant + " << cfg.epochs_decay << " decay), crop "
                  << cfg.crop.height << "x" << cfg.crop.width << ", out " << cfg.out_dir.string()
                  << "\n";
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult res = run_training(cfg, a->resume.empty() ? fs::path{} : fs::path(a->resume));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "train: " << res.iterations << " iterations in " << secs
                  << " s, reference cycle loss " << res.reference_cycle_loss << "\n"
                  << "train: final checkpoint " << res.final_checkpoint.string() << "\n";
    });
}

// -------------------------------------------------------------- translate

struct TranslateArgs {
    std::string checkpoint, input, output, direction = "c2p";
    std::string cycle_output;
    int crop_height = 0, crop_width = 0;
    bool full = false, cycle = false, per_volume = false;
};

void add_translate(CLI::App& app) {
    auto sub = app.add_subcommand("translate", "Run a trained generator over a volume");
    auto a = std::make_shared<TranslateArgs>();
    sub->add_option("--checkpoint", a->checkpoint, "Training checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--input", a->input, "Input volume (sidecar or stem)")->required();
    sub->add_option("--output", a->output, "Output volume path")->required();
    sub->add_option("--direction", a->direction, "c2p (CBCT->PlanCT) or p2c")
        ->check(CLI::IsMember({"c2p", "p2c"}))
        ->capture_default_str();
    auto* ch_opt = sub->add_option("--crop-height", a->crop_height, "Override trained crop height");
    auto* cw_opt = sub->add_option("--crop-width", a->crop_width, "Override trained crop width");
    sub->add_flag("--full", a->full, "Translate the full canvas (symmetric air padding) "
                                     "instead of the trained center crop");
    sub->add_flag("--cycle", a->cycle, "Also write the cyclically translated volume");
    sub->add_option("--cycle-output", a->cycle_output,
                    "Cycle volume path (default: output stem + _cycle)");
    sub->add_flag("--per-volume-otsu", a->per_volume, "Pool the Otsu threshold over the volume");
    sub->callback([=] {
        Translator tr(a->checkpoint);
        CTVolume in = load_volume(a->input);
        TranslationJob job;
        job.checkpoint = a->checkpoint;
        job.direction = a->direction == "c2p" ? Direction::kCToP : Direction::kPToC;
        job.preprocess.per_volume_otsu = a->per_volume;
        if (a->full) {
            job.crop.reset();
        } else if (ch_opt->count() || cw_opt->count()) {
            if (!ch_opt->count() || !cw_opt->count())
                throw std::invalid_argument("--crop-height and --crop-width go together");
            job.crop = CropSpec{a->crop_height, a->crop_width, 0};
        } else {
            job.crop = tr.trained_crop();
        }

        const auto t0 = std::chrono::steady_clock::now();
        CTVolume out = tr.translate(in, job);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        save_volume(out, a->output);
        std::cerr << "translate: " << in.depth() << " slices in " << secs << " s ("
                  << double(in.depth()) / secs << " slices/s) -> " << a->output << "\n";

        if (a->cycle) {
            CTVolume cyc = tr.cycle(in, job);
            const fs::path cyc_path = a->cycle_output.empty()
                                          ? with_suffix(a->output, "_cycle")
                                          : fs::path(a->cycle_output);
            save_volume(cyc, cyc_path);
            std::cerr << "translate: cycle volume -> " << cyc_path.string() << "\n";
        }
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ctxlate: unpaired CBCT -> PlanCT translation pipeline"};
    app.require_subcommand(1);
    add_phantom(app);
    add_preprocess(app);
    add_train(app);
    add_translate(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "ctxlate: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ctxlate: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
