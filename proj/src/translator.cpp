#include "ctxlate/translator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "ctxlate/nn/checkpoint.hpp"

namespace ctxlate {
namespace {

TrainConfig checkpoint_config(const std::filesystem::path& path) {
    nlohmann::json meta = nn::read_checkpoint_meta(path);
    if (!meta.contains("config"))
        throw std::runtime_error("checkpoint carries no training config: " + path.string());
    return train_config_from_json(meta["config"]);
}

// Symmetric padding frame for the full-canvas path. Targets are multiples
// of 8 (generator stride product) and at least 24 so the bottleneck keeps
// enough pixels for the residual blocks' reflect padding.
struct PadPlan {
    int h = 0, w = 0;    // padded extents
    int top = 0, left = 0;
};

PadPlan plan_padding(int src_h, int src_w) {
    auto extent = [](int src) { return (std::max(src, 24) + 7) / 8 * 8; };
    PadPlan p;
    p.h = extent(src_h);
    p.w = extent(src_w);
    p.top = (p.h - src_h) / 2;
    p.left = (p.w - src_w) / 2;
    return p;
}

nn::Tensor pad_with_air(const nn::Tensor& x, const PadPlan& p) {
    nn::Tensor out = nn::Tensor::full(1, p.h, p.w, -1.f);
    for (int y = 0; y < x.h(); ++y)
        for (int c = 0; c < x.w(); ++c) out.at(0, y + p.top, c + p.left) = x.at(0, y, c);
    return out;
}

int16_t scaled_to_hu(float v) {
    // tanh keeps activations inside [-1,1]; the clamp guards float rounding.
    double hu = unscale_value(std::clamp(static_cast<double>(v), -1.0, 1.0));
    return static_cast<int16_t>(std::lround(hu));
}

Modality output_modality(Direction dir) {
    return dir == Direction::kCToP ? Modality::SynPlanCT : Modality::CBCT;
}

}  // namespace

Translator::Translator(const std::filesystem::path& checkpoint)
    : Translator(checkpoint, checkpoint_config(checkpoint)) {}

Translator::Translator(const std::filesystem::path& checkpoint, const TrainConfig& cfg)
    : gen_spec_(cfg.generator),
      trained_crop_(cfg.crop),
      g_cp_(cfg.generator, 0),
      g_pc_(cfg.generator, 0),
      d_p_(cfg.discriminator, 0),
      d_c_(cfg.discriminator, 0) {
    trained_crop_.jitter = 0;
    // The checkpoint layout stores all four networks; discriminators are
    // loaded to satisfy it but never run. Null opt skips the Adam moments.
    nlohmann::json meta = nn::load_checkpoint(checkpoint, {{"g_cp", g_cp_.params(), nullptr},
                                                           {"g_pc", g_pc_.params(), nullptr},
                                                           {"d_p", d_p_.params(), nullptr},
                                                           {"d_c", d_c_.params(), nullptr}});
    reference_cycle_loss_ = meta.value("reference_cycle_loss", 0.0);
}

nn::Tensor Translator::forward_scaled(const nn::Tensor& x, Direction dir) const {
    nn::Scratch s;
    const nn::Generator& g = dir == Direction::kCToP ? g_cp_ : g_pc_;
    return g.forward(x, nullptr, s);  // no ctx, no noise: eval mode
}

nn::Tensor Translator::cycle_scaled(const nn::Tensor& x, Direction dir) const {
    nn::Scratch s;
    const nn::Generator& fwd = dir == Direction::kCToP ? g_cp_ : g_pc_;
    const nn::Generator& back = dir == Direction::kCToP ? g_pc_ : g_cp_;
    nn::Tensor mid = fwd.forward(x, nullptr, s);
    return back.forward(mid, nullptr, s);
}

namespace {

/// Shared slice loop for translate/cycle; `apply` maps a scaled tensor to a
/// scaled tensor of the same shape.
template <typename Apply>
CTVolume run_slices(const CTVolume& input, const TranslationJob& job, Modality out_modality,
                    Apply&& apply) {
    input.validate();
    CTVolume out(input.height(), input.width(), input.depth(), input.spacing(), out_modality,
                 input.patient_id());
    std::fill(out.voxels().begin(), out.voxels().end(), kHuAir);

    PreprocessOptions opts = job.preprocess;
    if (opts.per_volume_otsu) opts.mask.threshold = otsu_threshold(input);

    std::optional<CropSpec> crop = job.crop;
    int oy = 0, ox = 0;
    if (crop) {
        crop->jitter = 0;  // deterministic center crop at inference
        validate_crop(*crop, input.height(), input.width());
        std::tie(oy, ox) = crop_origin(*crop, input.height(), input.width(), 0);
    }

    for (int z = 0; z < input.depth(); ++z) {
        ScaledSlice scaled = preprocess_slice(slice_view(input, z), opts);
        if (crop) {
            nn::Tensor window = center_crop(scaled.pixels, *crop, 0);
            nn::Tensor result = apply(window);
            for (int y = 0; y < result.h(); ++y)
                for (int x = 0; x < result.w(); ++x)
                    out.at(oy + y, ox + x, z) = scaled_to_hu(result.at(0, y, x));
        } else {
            PadPlan pad = plan_padding(input.height(), input.width());
            nn::Tensor result = apply(pad_with_air(scaled.pixels, pad));
            for (int y = 0; y < input.height(); ++y)
                for (int x = 0; x < input.width(); ++x)
                    out.at(y, x, z) = scaled_to_hu(result.at(0, y + pad.top, x + pad.left));
        }
    }
    return out;
}

}  // namespace

CTVolume Translator::translate(const CTVolume& input, const TranslationJob& job) const {
    return run_slices(input, job, output_modality(job.direction),
                      [&](const nn::Tensor& x) { return forward_scaled(x, job.direction); });
}

CTVolume Translator::cycle(const CTVolume& input, const TranslationJob& job) const {
    // A full cycle lands back in the input's domain.
    return run_slices(input, job, input.modality(),
                      [&](const nn::Tensor& x) { return cycle_scaled(x, job.direction); });
}

CTVolume translate_volume(const TranslationJob& job) {
    Translator tr(job.checkpoint);
    CTVolume out = tr.translate(load_volume(job.input), job);
    if (!job.output.empty()) save_volume(out, job.output);
    return out;
}

CTVolume cycle_translate(const TranslationJob& job) {
    Translator tr(job.checkpoint);
    CTVolume out = tr.cycle(load_volume(job.input), job);
    if (!job.output.empty()) save_volume(out, job.output);
    return out;
}

}  // namespace ctxlate
