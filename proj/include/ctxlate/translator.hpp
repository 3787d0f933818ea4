// Inference: applies trained generators slice-by-slice to whole volumes,
// with deterministic center cropping (or full-canvas padding) and HU
// re-embedding into the original geometry.
#pragma once

#include <filesystem>
#include <optional>

#include "ctxlate/nn/networks.hpp"
#include "ctxlate/preprocess.hpp"
#include "ctxlate/trainer.hpp"
#include "ctxlate/volume.hpp"

namespace ctxlate {

enum class Direction { kCToP, kPToC };

struct TranslationJob {
    std::filesystem::path checkpoint;
    std::filesystem::path input;
    std::filesystem::path output;  // used by the CLI; empty means don't write
    /// Deterministic center crop fed to the generator (jitter is forced to
    /// 0). When unset the whole slice is translated, symmetrically padded
    /// with air to the generator's 8-divisibility/minimum-size needs.
    std::optional<CropSpec> crop;
    Direction direction = Direction::kCToP;
    PreprocessOptions preprocess;
};

/// Frozen generator pair rebuilt from a training checkpoint. Forward passes
/// run in eval mode (no latent noise), so outputs are deterministic.
class Translator {
public:
    explicit Translator(const std::filesystem::path& checkpoint);
    Translator(const Translator&) = delete;
    Translator& operator=(const Translator&) = delete;

    const nn::GeneratorSpec& generator_spec() const { return gen_spec_; }
    /// The crop the networks were trained on, with jitter zeroed.
    const CropSpec& trained_crop() const { return trained_crop_; }
    double reference_cycle_loss() const { return reference_cycle_loss_; }

    /// One generator application on a scaled [-1,1] tensor.
    nn::Tensor forward_scaled(const nn::Tensor& x, Direction dir) const;
    /// Round trip through both generators (the cycle diagnostic).
    nn::Tensor cycle_scaled(const nn::Tensor& x, Direction dir) const;

    CTVolume translate(const CTVolume& input, const TranslationJob& job) const;
    CTVolume cycle(const CTVolume& input, const TranslationJob& job) const;

private:
    Translator(const std::filesystem::path& checkpoint, const TrainConfig& cfg);

    nn::GeneratorSpec gen_spec_;
    CropSpec trained_crop_;
    double reference_cycle_loss_ = 0;
    nn::Generator g_cp_;
    nn::Generator g_pc_;
    nn::Discriminator d_p_;  // loaded only to satisfy the checkpoint layout
    nn::Discriminator d_c_;
};

/// Loads checkpoint + input, translates, writes job.output when set.
CTVolume translate_volume(const TranslationJob& job);
/// Same plumbing for G_{P->C}(G_{C->P}(x)) (or the mirrored direction).
CTVolume cycle_translate(const TranslationJob& job);

}  // namespace ctxlate
