#include "ctxlate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ctxlate/nn/checkpoint.hpp"
#include "ctxlate/nn/rng.hpp"
#include "ctxlate/volume.hpp"

namespace ctxlate {

using nn::Rng;
using nn::derive_rng;
using nn::Tensor;
using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (epochs_constant < 0 || epochs_decay < 0 || total_epochs() <= 0)
        throw std::invalid_argument("TrainConfig: epoch counts must be positive");
    if (!(base_lr > 0)) throw std::invalid_argument("TrainConfig: base_lr must be positive");
    if (batch_size <= 0)
        throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (batch_size != 1)
        throw std::invalid_argument(
            "TrainConfig: only batch_size 1 is implemented (the reference schedule)");
    if (checkpoint_every <= 0)
        throw std::invalid_argument("TrainConfig: checkpoint_every must be positive");
    weights.validate();
    generator.validate();
    discriminator.validate();
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    const int total = cfg.total_epochs();
    if (epoch < 0 || epoch > total)
        throw std::out_of_range("lr_schedule: epoch " + std::to_string(epoch) +
                                " outside [0, " + std::to_string(total) + "]");
    if (epoch < cfg.epochs_constant) return cfg.base_lr;
    if (cfg.epochs_decay == 0) return epoch < total ? cfg.base_lr : 0.0;
    return cfg.base_lr * double(total - epoch) / double(cfg.epochs_decay);
}

namespace {

void assign_known(const json& j, const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

template <typename T>
void assign_path(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).template get<std::string>();
}

void check_keys(const json& j, std::initializer_list<const char*> known,
                const std::string& scope) {
    for (const auto& [key, _] : j.items())
        if (std::find_if(known.begin(), known.end(),
                         [&](const char* k) { return key == k; }) == known.end())
            throw std::invalid_argument("train config: unknown key '" + scope + key + "'");
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    check_keys(j, {"epochs_constant", "epochs_decay", "base_lr", "adam", "batch_size",
                   "seed", "crop", "weights", "checkpoint_every", "cbct_dir", "plan_dir",
                   "out_dir", "generator", "discriminator", "preprocess"},
               "");
    assign_known(j, "epochs_constant", c.epochs_constant);
    assign_known(j, "epochs_decay", c.epochs_decay);
    assign_known(j, "base_lr", c.base_lr);
    assign_known(j, "batch_size", c.batch_size);
    assign_known(j, "seed", c.seed);
    assign_known(j, "checkpoint_every", c.checkpoint_every);
    assign_path(j, "cbct_dir", c.cbct_dir);
    assign_path(j, "plan_dir", c.plan_dir);
    assign_path(j, "out_dir", c.out_dir);
    if (j.contains("adam")) {
        const json& a = j.at("adam");
        check_keys(a, {"beta1", "beta2", "eps"}, "adam.");
        assign_known(a, "beta1", c.adam.beta1);
        assign_known(a, "beta2", c.adam.beta2);
        assign_known(a, "eps", c.adam.eps);
    }
    if (j.contains("crop")) {
        const json& a = j.at("crop");
        check_keys(a, {"height", "width", "jitter"}, "crop.");
        assign_known(a, "height", c.crop.height);
        assign_known(a, "width", c.crop.width);
        assign_known(a, "jitter", c.crop.jitter);
    }
    if (j.contains("weights")) {
        const json& a = j.at("weights");
        check_keys(a, {"lambda_cycle", "lambda_adv", "lambda_grad", "lambda_tv",
                       "lambda_air", "lambda_idem", "lambda_d"},
                   "weights.");
        assign_known(a, "lambda_cycle", c.weights.lambda_cycle);
        assign_known(a, "lambda_adv", c.weights.lambda_adv);
        assign_known(a, "lambda_grad", c.weights.lambda_grad);
        assign_known(a, "lambda_tv", c.weights.lambda_tv);
        assign_known(a, "lambda_air", c.weights.lambda_air);
        assign_known(a, "lambda_idem", c.weights.lambda_idem);
        assign_known(a, "lambda_d", c.weights.lambda_d);
    }
    if (j.contains("generator")) {
        const json& a = j.at("generator");
        check_keys(a, {"base_channels", "residual_blocks", "noise_after_block", "noise_sd"},
                   "generator.");
        assign_known(a, "base_channels", c.generator.base_channels);
        assign_known(a, "residual_blocks", c.generator.residual_blocks);
        assign_known(a, "noise_after_block", c.generator.noise_after_block);
        assign_known(a, "noise_sd", c.generator.noise_sd);
    }
    if (j.contains("discriminator")) {
        const json& a = j.at("discriminator");
        check_keys(a, {"base_channels"}, "discriminator.");
        assign_known(a, "base_channels", c.discriminator.base_channels);
    }
    if (j.contains("preprocess")) {
        const json& a = j.at("preprocess");
        check_keys(a, {"per_volume_otsu", "largest_component", "fill_holes"}, "preprocess.");
        assign_known(a, "per_volume_otsu", c.preprocess.per_volume_otsu);
        assign_known(a, "largest_component", c.preprocess.mask.largest_component);
        assign_known(a, "fill_holes", c.preprocess.mask.fill_holes);
    }
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    return json{
        {"epochs_constant", c.epochs_constant},
        {"epochs_decay", c.epochs_decay},
        {"base_lr", c.base_lr},
        {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
        {"batch_size", c.batch_size},
        {"seed", c.seed},
        {"crop",
         {{"height", c.crop.height}, {"width", c.crop.width}, {"jitter", c.crop.jitter}}},
        {"weights",
         {{"lambda_cycle", c.weights.lambda_cycle},
          {"lambda_adv", c.weights.lambda_adv},
          {"lambda_grad", c.weights.lambda_grad},
          {"lambda_tv", c.weights.lambda_tv},
          {"lambda_air", c.weights.lambda_air},
          {"lambda_idem", c.weights.lambda_idem},
          {"lambda_d", c.weights.lambda_d}}},
        {"checkpoint_every", c.checkpoint_every},
        {"cbct_dir", c.cbct_dir.string()},
        {"plan_dir", c.plan_dir.string()},
        {"out_dir", c.out_dir.string()},
        {"generator",
         {{"base_channels", c.generator.base_channels},
          {"residual_blocks", c.generator.residual_blocks},
          {"noise_after_block", c.generator.noise_after_block},
          {"noise_sd", c.generator.noise_sd}}},
        {"discriminator", {{"base_channels", c.discriminator.base_channels}}},
        {"preprocess",
         {{"per_volume_otsu", c.preprocess.per_volume_otsu},
          {"largest_component", c.preprocess.mask.largest_component},
          {"fill_holes", c.preprocess.mask.fill_holes}}}};
}

TrainState::TrainState(const TrainConfig& config)
    : cfg(config),
      g_cp(cfg.generator, nn::hash_combine(cfg.seed, nn::hash_str("init.g_cp"))),
      g_pc(cfg.generator, nn::hash_combine(cfg.seed, nn::hash_str("init.g_pc"))),
      d_p(cfg.discriminator, nn::hash_combine(cfg.seed, nn::hash_str("init.d_p"))),
      d_c(cfg.discriminator, nn::hash_combine(cfg.seed, nn::hash_str("init.d_c"))),
      opt_g_cp(g_cp.params(), cfg.adam),
      opt_g_pc(g_pc.params(), cfg.adam),
      opt_d_p(d_p.params(), cfg.adam),
      opt_d_c(d_c.params(), cfg.adam) {
    cfg.validate();
}

namespace {

std::vector<nn::CheckpointNet> checkpoint_nets(TrainState& st) {
    return {{"g_cp", st.g_cp.params(), &st.opt_g_cp},
            {"g_pc", st.g_pc.params(), &st.opt_g_pc},
            {"d_p", st.d_p.params(), &st.opt_d_p},
            {"d_c", st.d_c.params(), &st.opt_d_c}};
}

}  // namespace

void save_state(const TrainState& state, const fs::path& path) {
    auto& st = const_cast<TrainState&>(state);  // params() is non-const; no mutation
    json meta{{"epoch", state.epoch},
              {"iteration", state.iteration},
              {"reference_cycle_loss", state.reference_cycle_loss},
              {"config", train_config_to_json(state.cfg)}};
    nn::save_checkpoint(path, meta, checkpoint_nets(st));
}

void load_state(TrainState& state, const fs::path& path) {
    const json meta = nn::load_checkpoint(path, checkpoint_nets(state));
    state.epoch = meta.at("epoch").get<int64_t>();
    state.iteration = meta.at("iteration").get<int64_t>();
    state.reference_cycle_loss = meta.value("reference_cycle_loss", 0.0);
    state.epoch_cycle_a_sum = 0;
    state.epoch_step_count = 0;
}

LossBreakdown train_step(TrainState& st, const ScaledSlice& x, const ScaledSlice& y) {
    validate_network_input(x);
    validate_network_input(y);
    nn::Scratch s;
    const double lr = lr_schedule(int(st.epoch), st.cfg);
    const LossWeights& w = st.cfg.weights;
    const uint64_t seed = st.cfg.seed, it = uint64_t(st.iteration);
    auto noise = [&](uint64_t slot) { return derive_rng(seed, "gen.noise", it, slot); };

    // --- Discriminator update (generators held fixed, no ctx kept). ---
    Rng n0 = noise(0), n1 = noise(1);
    const Tensor fake_p = st.g_cp.forward(x.pixels, nullptr, s, &n0);
    const Tensor fake_c = st.g_pc.forward(y.pixels, nullptr, s, &n1);

    nn::Discriminator::Ctx dp_fake_ctx, dp_real_ctx, dc_fake_ctx, dc_real_ctx;
    const Tensor dp_fake = st.d_p.forward(fake_p, &dp_fake_ctx, s);
    const Tensor dp_real = st.d_p.forward(y.pixels, &dp_real_ctx, s);
    const Tensor dc_fake = st.d_c.forward(fake_c, &dc_fake_ctx, s);
    const Tensor dc_real = st.d_c.forward(x.pixels, &dc_real_ctx, s);

    Tensor g_dp_fake(1, dp_fake.h(), dp_fake.w()), g_dp_real(1, dp_real.h(), dp_real.w());
    Tensor g_dc_fake(1, dc_fake.h(), dc_fake.w()), g_dc_real(1, dc_real.h(), dc_real.w());
    const double d_value = loss_discriminator_grad(dp_fake, dc_real, dc_fake, dp_real, w,
                                                   &g_dp_fake, &g_dc_real, &g_dc_fake,
                                                   &g_dp_real);
    if (!std::isfinite(d_value))
        throw std::runtime_error("train_step: non-finite discriminator loss at iteration " +
                                 std::to_string(st.iteration));
    st.d_p.zero_grads();
    st.d_c.zero_grads();
    st.d_p.backward(dp_fake_ctx, g_dp_fake, s);
    st.d_p.backward(dp_real_ctx, g_dp_real, s);
    st.d_c.backward(dc_fake_ctx, g_dc_fake, s);
    st.d_c.backward(dc_real_ctx, g_dc_real, s);
    st.opt_d_p.step(lr);
    st.opt_d_c.step(lr);

    // --- Generator update on fresh forwards through the updated critics. ---
    nn::Generator::Ctx cp_x, pc_cyc, pc_y, cp_cyc, cp_idem, pc_idem;
    Rng n2 = noise(2), n3 = noise(3), n4 = noise(4), n5 = noise(5);
    const Tensor gx = st.g_cp.forward(x.pixels, &cp_x, s, &n2);        // fake plan
    const Tensor x_cyc = st.g_pc.forward(gx, &pc_cyc, s, &n3);
    const Tensor gy = st.g_pc.forward(y.pixels, &pc_y, s, &n4);        // fake CBCT
    const Tensor y_cyc = st.g_cp.forward(gy, &cp_cyc, s, &n5);
    Rng n6 = noise(6), n7 = noise(7);
    const Tensor ggx = st.g_cp.forward(gx, &cp_idem, s, &n6);
    const Tensor ggy = st.g_pc.forward(gy, &pc_idem, s, &n7);

    nn::Discriminator::Ctx dp_gx_ctx, dc_gy_ctx;
    const Tensor dp_gx = st.d_p.forward(gx, &dp_gx_ctx, s);
    const Tensor dc_gy = st.d_c.forward(gy, &dc_gy_ctx, s);

    Tensor d_gx(1, gx.h(), gx.w()), d_gy(1, gy.h(), gy.w());
    Tensor d_xcyc(1, x_cyc.h(), x_cyc.w()), d_ycyc(1, y_cyc.h(), y_cyc.w());
    Tensor d_ggx(1, ggx.h(), ggx.w()), d_ggy(1, ggy.h(), ggy.w());
    Tensor d_dp_gx(1, dp_gx.h(), dp_gx.w()), d_dc_gy(1, dc_gy.h(), dc_gy.w());

    GeneratorLossTerms terms;
    terms.d = d_value;
    terms.cycle_a = l1_mean_grad(x_cyc, x.pixels, float(w.lambda_cycle), &d_xcyc, nullptr);
    terms.cycle_b = l1_mean_grad(y_cyc, y.pixels, float(w.lambda_cycle), &d_ycyc, nullptr);
    terms.adv = mse_to_const_grad(dp_gx, 1.f, float(w.lambda_adv), &d_dp_gx) +
                mse_to_const_grad(dc_gy, 1.f, float(w.lambda_adv), &d_dc_gy);
    terms.tv = loss_tv_grad(gx, float(w.lambda_tv), &d_gx);
    terms.air = loss_air_grad(x.pixels, gx, w.air_threshold_scaled, float(w.lambda_air),
                              &d_gx) +
                loss_air_grad(y.pixels, gy, w.air_threshold_scaled, float(w.lambda_air),
                              &d_gy);
    terms.grad = loss_grad_grad(x.pixels, gx, float(w.lambda_grad), &d_gx) +
                 loss_grad_grad(y.pixels, gy, float(w.lambda_grad), &d_gy);
    terms.idem = l1_mean_grad(gx, ggx, float(w.lambda_idem), &d_gx, &d_ggx) +
                 l1_mean_grad(gy, ggy, float(w.lambda_idem), &d_gy, &d_ggy);
    const LossBreakdown breakdown = compose_generator_loss(terms, w);

    st.g_cp.zero_grads();
    st.g_pc.zero_grads();
    Tensor into(1, gx.h(), gx.w());

    // Chain-rule paths feeding d_gx / d_gy before the trunk backwards.
    st.g_pc.backward(pc_cyc, d_xcyc, s, &into);
    d_gx += into;
    into.fill(0);
    st.g_cp.backward(cp_cyc, d_ycyc, s, &into);
    d_gy += into;
    into.fill(0);
    st.g_cp.backward(cp_idem, d_ggx, s, &into);
    d_gx += into;
    into.fill(0);
    st.g_pc.backward(pc_idem, d_ggy, s, &into);
    d_gy += into;
    into.fill(0);
    // Adversarial terms arrive through the (frozen-for-this-update) critics;
    // the critic gradients polluted here are zeroed by the next D update.
    st.d_p.backward(dp_gx_ctx, d_dp_gx, s, &into);
    d_gx += into;
    into.fill(0);
    st.d_c.backward(dc_gy_ctx, d_dc_gy, s, &into);
    d_gy += into;

    st.g_cp.backward(cp_x, d_gx, s);
    st.g_pc.backward(pc_y, d_gy, s);
    st.opt_g_cp.step(lr);
    st.opt_g_pc.step(lr);

    ++st.iteration;
    ++st.epoch_step_count;
    st.epoch_cycle_a_sum += breakdown.cycle_a;
    return breakdown;
}

namespace {

bool is_cbct_domain(Modality m) {
    return m == Modality::CBCT || m == Modality::PhantomCBCT;
}
bool is_plan_domain(Modality m) {
    return m == Modality::PlanCT || m == Modality::PhantomTruth;
}

/// All slices of every matching volume under `dir`, masked and scaled once;
/// cropping happens per step so the jitter can be redrawn.
std::vector<ScaledSlice> load_domain_slices(const fs::path& dir, bool cbct,
                                            const TrainConfig& cfg) {
    if (!fs::is_directory(dir))
        throw std::runtime_error("trainer: dataset directory not found: " + dir.string());
    std::vector<fs::path> sidecars;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json" || e.path().filename() == "manifest.json")
            continue;
        sidecars.push_back(e.path());
    }
    std::sort(sidecars.begin(), sidecars.end());

    std::vector<ScaledSlice> slices;
    for (const auto& p : sidecars) {
        const CTVolume vol = load_volume(p);
        if (cbct ? !is_cbct_domain(vol.modality()) : !is_plan_domain(vol.modality()))
            continue;
        PreprocessOptions opts = cfg.preprocess;
        if (opts.per_volume_otsu) opts.mask.threshold = otsu_threshold(vol);
        for (int z = 0; z < vol.depth(); ++z) {
            validate_crop(cfg.crop, vol.height(), vol.width());
            slices.push_back(preprocess_slice(slice_view(vol, z), opts));
        }
    }
    if (slices.empty())
        throw std::runtime_error("trainer: no " + std::string(cbct ? "CBCT" : "PlanCT") +
                                 "-domain volumes under " + dir.string());
    return slices;
}

std::vector<size_t> shuffled_indices(size_t n, Rng rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) {
        const size_t j = size_t(rng.uniform_int(0, int64_t(i) - 1));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::string csv_row(const TrainState& st, double lr, const LossBreakdown& b) {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "%lld,%lld,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g\n",
                  static_cast<long long>(st.iteration), static_cast<long long>(st.epoch),
                  lr, b.loss_g, b.loss_d, b.cycle_a, b.cycle_b, b.adv, b.tv, b.air, b.grad,
                  b.idem);
    return buf;
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const fs::path& resume_from) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    TrainState st(cfg);
    if (!resume_from.empty()) load_state(st, resume_from);

    const auto cb = load_domain_slices(cfg.cbct_dir, true, cfg);
    const auto plan = load_domain_slices(cfg.plan_dir, false, cfg);
    const size_t steps_per_epoch = std::min(cb.size(), plan.size());

    // Resuming appends, so a run that continues in its own out_dir keeps one
    // continuous log; a fresh directory still gets the header.
    const fs::path log_path = cfg.out_dir / "training_log.csv";
    const bool log_has_rows = st.iteration > 0 && fs::exists(log_path) &&
                              fs::file_size(log_path) > 0;
    std::ofstream log(log_path, log_has_rows ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("trainer: cannot write " + log_path.string());
    if (!log_has_rows)
        log << "iteration,epoch,lr,loss_g,loss_d,cycle_a,cycle_b,adv,tv,air,grad,idem\n";

    const fs::path final_path = cfg.out_dir / "checkpoint_final.ckpt";
    while (st.epoch < cfg.total_epochs()) {
        st.epoch_cycle_a_sum = 0;
        st.epoch_step_count = 0;
        const auto cb_order =
            shuffled_indices(cb.size(), derive_rng(cfg.seed, "shuffle.cbct",
                                                   uint64_t(st.epoch)));
        const auto plan_order =
            shuffled_indices(plan.size(), derive_rng(cfg.seed, "shuffle.plan",
                                                     uint64_t(st.epoch)));
        const double lr = lr_schedule(int(st.epoch), cfg);
        for (size_t k = 0; k < steps_per_epoch; ++k) {
            const ScaledSlice& xs = cb[cb_order[k]];
            const ScaledSlice& ys = plan[plan_order[k]];
            ScaledSlice x{center_crop(xs.pixels, cfg.crop,
                                      nn::hash_combine(nn::hash_combine(cfg.seed,
                                                                        nn::hash_str(
                                                                            "crop.cbct")),
                                                       uint64_t(st.iteration)))};
            ScaledSlice y{center_crop(ys.pixels, cfg.crop,
                                      nn::hash_combine(nn::hash_combine(cfg.seed,
                                                                        nn::hash_str(
                                                                            "crop.plan")),
                                                       uint64_t(st.iteration)))};
            const LossBreakdown b = train_step(st, x, y);
            log << csv_row(st, lr, b);
        }
        log.flush();
        st.reference_cycle_loss = st.epoch_mean_cycle_a();
        ++st.epoch;  // epoch complete; stored checkpoints resume from here
        if (st.epoch % cfg.checkpoint_every == 0 && st.epoch != cfg.total_epochs()) {
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_epoch_%04lld.ckpt",
                          static_cast<long long>(st.epoch));
            save_state(st, cfg.out_dir / name);
        }
    }
    save_state(st, final_path);
    return {final_path, log_path, st.reference_cycle_loss, st.iteration};
}

Verdict failure_check(double current_cycle_loss, double reference_cycle_loss) {
    if (!(reference_cycle_loss > 0))
        throw std::invalid_argument("failure_check: reference cycle loss must be positive");
    return current_cycle_loss > 3.0 * reference_cycle_loss ? Verdict::kSuspect
                                                           : Verdict::kOk;
}

}  // namespace ctxlate
