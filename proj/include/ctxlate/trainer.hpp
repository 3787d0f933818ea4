// Adversarial training loop: four networks, Adam, the constant-then-linear
// lr schedule, unpaired per-epoch sampling, CSV logging, checkpoints, and
// the cycle-loss failure monitor.
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "ctxlate/losses.hpp"
#include "ctxlate/nn/adam.hpp"
#include "ctxlate/nn/networks.hpp"
#include "ctxlate/preprocess.hpp"

namespace ctxlate {

struct TrainConfig {
    int epochs_constant = 25;
    int epochs_decay = 25;
    double base_lr = 1e-4;
    nn::AdamConfig adam;
    int batch_size = 1;
    uint64_t seed = 0;
    CropSpec crop;
    LossWeights weights;
    int checkpoint_every = 10;  // epochs
    std::filesystem::path cbct_dir;
    std::filesystem::path plan_dir;
    std::filesystem::path out_dir;
    nn::GeneratorSpec generator;
    nn::DiscriminatorSpec discriminator;
    PreprocessOptions preprocess;

    int total_epochs() const { return epochs_constant + epochs_decay; }
    /// Throws std::invalid_argument on non-positive epochs/lr/batch size
    /// (and on batch_size != 1, which this implementation pins).
    void validate() const;
};

/// base_lr through the constant phase, then linear to zero. `epoch` may
/// equal total_epochs() (the post-training point, lr exactly 0); anything
/// outside [0, total] throws std::out_of_range.
double lr_schedule(int epoch, const TrainConfig& cfg);

/// Strict field-name mirror of TrainConfig; unknown keys throw.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

/// The four networks plus optimizer and bookkeeping state. Addresses of the
/// parameter vectors are registered with the optimizers, so the state is
/// pinned to its construction site (no copies, no moves).
class TrainState {
public:
    explicit TrainState(const TrainConfig& cfg);
    TrainState(const TrainState&) = delete;
    TrainState& operator=(const TrainState&) = delete;

    TrainConfig cfg;
    nn::Generator g_cp;  // G_{C->P}
    nn::Generator g_pc;  // G_{P->C}
    nn::Discriminator d_p;
    nn::Discriminator d_c;
    nn::Adam opt_g_cp, opt_g_pc, opt_d_p, opt_d_c;

    int64_t epoch = 0;      // current epoch index
    int64_t iteration = 0;  // total train_step calls so far
    double epoch_cycle_a_sum = 0;
    int64_t epoch_step_count = 0;
    double reference_cycle_loss = 0;

    double epoch_mean_cycle_a() const {
        return epoch_step_count ? epoch_cycle_a_sum / double(epoch_step_count) : 0.0;
    }
};

/// One discriminator update followed by one generator update on a fresh
/// forward pass, both at the current epoch's lr. Throws std::runtime_error
/// with the term breakdown if any loss goes non-finite.
LossBreakdown train_step(TrainState& state, const ScaledSlice& x, const ScaledSlice& y);

/// Writes networks + optimizer moments + progress counters.
void save_state(const TrainState& state, const std::filesystem::path& path);
/// Restores everything save_state wrote. The state must have been built
/// from a config with identical network shapes.
void load_state(TrainState& state, const std::filesystem::path& path);

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path log_path;
    double reference_cycle_loss = 0;
    int64_t iterations = 0;
};

/// Full run: epochs x min(set sizes) steps, reshuffled unpaired pairing per
/// epoch, per-iteration CSV log, periodic + final checkpoints. Passing a
/// checkpoint path resumes from its stored epoch with the identical
/// trajectory (all randomness is keyed on absolute counters).
TrainResult run_training(const TrainConfig& cfg,
                         const std::filesystem::path& resume_from = {});

enum class Verdict { kOk, kSuspect };

/// suspect iff current > 3 x reference. reference must be positive.
Verdict failure_check(double current_cycle_loss, double reference_cycle_loss);

}  // namespace ctxlate
