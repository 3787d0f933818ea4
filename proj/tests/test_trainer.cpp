#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "ctxlate/phantom.hpp"
#include "ctxlate/trainer.hpp"
#include "test_util.hpp"

using namespace ctxlate;

namespace {

/// Desk-scale config: tiny nets, tiny crop, ten muscle-only slices per
/// domain, everything sized so a full run takes well under a second.
TrainConfig tiny_config(const std::filesystem::path& data_dir,
                        const std::filesystem::path& out_dir) {
    TrainConfig cfg;
    cfg.epochs_constant = 1;
    cfg.epochs_decay = 1;
    cfg.checkpoint_every = 1;
    cfg.seed = 11;
    cfg.crop = {24, 32, 2};
    cfg.generator.base_channels = 4;
    cfg.generator.residual_blocks = 2;
    cfg.generator.noise_after_block = 1;
    cfg.discriminator.base_channels = 4;
    cfg.cbct_dir = data_dir;
    cfg.plan_dir = data_dir;
    cfg.out_dir = out_dir;
    return cfg;
}

/// One 10-slice muscle-only phantom pair in `dir` (32x40 canvas).
void write_tiny_dataset(const std::filesystem::path& dir) {
    phantom::PhantomSpec ps = phantom::default_phantom_spec();
    ps.height = 32;
    ps.width = 40;
    ps.slices = 10;
    ps.body_ax = 15;
    ps.body_ay = 12;
    ps.regions.clear();
    ps.seed = 3;
    phantom::DegradationSpec ds;
    ds.ring_amplitude = 40;
    ds.streak_amplitude = 25;
    ds.noise_sd = 20;
    phantom::emit_dataset(1, ps, ds, dir);
}

std::vector<float> snapshot(std::vector<nn::ParamRef> params) {
    std::vector<float> all;
    for (const auto& p : params) all.insert(all.end(), p.value->begin(), p.value->end());
    return all;
}

size_t count_rows(const std::filesystem::path& csv) {
    std::ifstream in(csv);
    std::string line;
    size_t n = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// All network weights and optimizer moments restored from a checkpoint.
/// (Raw file bytes differ across runs because the meta embeds the out_dir.)
std::vector<float> restored_params(const TrainConfig& cfg,
                                   const std::filesystem::path& ckpt) {
    TrainState st(cfg);
    load_state(st, ckpt);
    std::vector<float> all;
    for (auto* g : {&st.g_cp, &st.g_pc}) {
        const auto s = snapshot(g->params());
        all.insert(all.end(), s.begin(), s.end());
    }
    for (auto* d : {&st.d_p, &st.d_c}) {
        const auto s = snapshot(d->params());
        all.insert(all.end(), s.begin(), s.end());
    }
    for (auto* o : {&st.opt_g_cp, &st.opt_g_pc, &st.opt_d_p, &st.opt_d_c}) {
        all.insert(all.end(), o->moment1().begin(), o->moment1().end());
        all.insert(all.end(), o->moment2().begin(), o->moment2().end());
    }
    return all;
}

}  // namespace

TEST_CASE("lr schedule holds constant then decays linearly to zero") {
    TrainConfig cfg;
    CHECK(lr_schedule(0, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(10, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(24, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(25, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(37, cfg) == doctest::Approx(5.2e-5).epsilon(1e-12));
    CHECK(lr_schedule(49, cfg) == doctest::Approx(1e-4 / 25).epsilon(1e-12));
    CHECK(lr_schedule(50, cfg) == 0.0);
    CHECK_THROWS_AS(lr_schedule(-1, cfg), std::out_of_range);
    CHECK_THROWS_AS(lr_schedule(51, cfg), std::out_of_range);
}

TEST_CASE("config validation rejects bad values") {
    TrainConfig cfg;
    cfg.base_lr = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.epochs_constant = 0;
    cfg.epochs_decay = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.batch_size = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("config json round trip and unknown-key rejection") {
    TrainConfig cfg;
    cfg.seed = 77;
    cfg.base_lr = 3e-4;
    cfg.crop = {96, 128, 8};
    cfg.generator.residual_blocks = 5;
    cfg.weights.lambda_tv = 0.5;
    cfg.cbct_dir = "/tmp/a";
    const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
    CHECK(back.seed == 77);
    CHECK(back.base_lr == doctest::Approx(3e-4));
    CHECK(back.crop.height == 96);
    CHECK(back.crop.jitter == 8);
    CHECK(back.generator.residual_blocks == 5);
    CHECK(back.weights.lambda_tv == doctest::Approx(0.5));
    CHECK(back.cbct_dir == "/tmp/a");

    CHECK_THROWS_WITH_AS(train_config_from_json({{"learning_rate", 1e-4}}),
                         doctest::Contains("unknown key"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(train_config_from_json({{"crop", {{"hight", 2}}}}),
                         doctest::Contains("crop.hight"), std::invalid_argument);
}

TEST_CASE("cycle-only loss on identical zero inputs takes a zero generator step") {
    TrainConfig cfg;
    cfg.crop = {24, 24, 0};
    cfg.generator.base_channels = 4;
    cfg.generator.residual_blocks = 1;
    cfg.generator.noise_after_block = 1;
    cfg.discriminator.base_channels = 4;
    cfg.weights.lambda_adv = 0;
    cfg.weights.lambda_grad = 0;
    cfg.weights.lambda_tv = 0;
    cfg.weights.lambda_air = 0;
    cfg.weights.lambda_idem = 0;
    cfg.weights.lambda_d = 0;
    TrainState st(cfg);
    for (auto& net : {&st.g_cp, &st.g_pc})
        for (auto& p : net->params()) std::fill(p.value->begin(), p.value->end(), 0.f);

    // Zero weights map the zero image to zero, so both cycle terms sit at
    // their minimum and L1's subgradient there is zero.
    ScaledSlice x{nn::Tensor(1, 24, 24)}, y{nn::Tensor(1, 24, 24)};
    const auto before_cp = snapshot(st.g_cp.params());
    const auto before_pc = snapshot(st.g_pc.params());
    const LossBreakdown b = train_step(st, x, y);
    CHECK(b.cycle_a == 0.0);
    CHECK(b.cycle_b == 0.0);
    CHECK(b.loss_g == 0.0);
    CHECK(snapshot(st.g_cp.params()) == before_cp);
    CHECK(snapshot(st.g_pc.params()) == before_pc);
}

TEST_CASE("update parity: every network steps once per train_step") {
    TrainConfig cfg;
    cfg.crop = {24, 24, 0};
    cfg.generator.base_channels = 4;
    cfg.generator.residual_blocks = 1;
    cfg.generator.noise_after_block = 1;
    cfg.discriminator.base_channels = 4;
    TrainState st(cfg);
    for (int i = 0; i < 3; ++i) {
        ScaledSlice x{testutil::random_tensor(1, 24, 24, uint64_t(40 + i), -0.9f, 0.9f)};
        ScaledSlice y{testutil::random_tensor(1, 24, 24, uint64_t(60 + i), -0.9f, 0.9f)};
        train_step(st, x, y);
    }
    CHECK(st.iteration == 3);
    CHECK(st.opt_g_cp.update_count() == 3);
    CHECK(st.opt_g_pc.update_count() == 3);
    CHECK(st.opt_d_p.update_count() == 3);
    CHECK(st.opt_d_c.update_count() == 3);
}

TEST_CASE("run_training executes epochs x min-set-size steps and logs each") {
    testutil::TempDir data, out;
    write_tiny_dataset(data.path);
    TrainConfig cfg = tiny_config(data.path, out.path);

    const TrainResult res = run_training(cfg);
    // 1 patient x 10 slices per domain, 2 epochs.
    CHECK(res.iterations == 20);
    CHECK(count_rows(res.log_path) == 21);  // header + one row per iteration
    CHECK(std::filesystem::exists(res.final_checkpoint));
    CHECK(res.reference_cycle_loss > 0);

    std::ifstream in(res.log_path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "iteration,epoch,lr,loss_g,loss_d,cycle_a,cycle_b,adv,tv,air,grad,idem");
}

TEST_CASE("identical config and seed reproduce the identical loss log") {
    testutil::TempDir data, out_a, out_b;
    write_tiny_dataset(data.path);
    const TrainResult a = run_training(tiny_config(data.path, out_a.path));
    const TrainResult b = run_training(tiny_config(data.path, out_b.path));
    CHECK(read_file(a.log_path) == read_file(b.log_path));
    CHECK(restored_params(tiny_config(data.path, out_a.path), a.final_checkpoint) ==
          restored_params(tiny_config(data.path, out_b.path), b.final_checkpoint));
}

TEST_CASE("resuming from a checkpoint reproduces the tail of the trajectory") {
    testutil::TempDir data, out_full, out_resume;
    write_tiny_dataset(data.path);

    const TrainResult full = run_training(tiny_config(data.path, out_full.path));

    // Fresh run directory resumed from the full run's epoch-1 checkpoint.
    const auto mid = out_full.path / "checkpoint_epoch_0001.ckpt";
    REQUIRE(std::filesystem::exists(mid));
    const TrainResult resumed =
        run_training(tiny_config(data.path, out_resume.path), mid);
    CHECK(resumed.iterations == 20);
    CHECK(resumed.reference_cycle_loss ==
          doctest::Approx(full.reference_cycle_loss).epsilon(1e-12));
    CHECK(restored_params(tiny_config(data.path, out_resume.path),
                          resumed.final_checkpoint) ==
          restored_params(tiny_config(data.path, out_full.path),
                          full.final_checkpoint));

    // The resumed log holds exactly the second epoch's rows.
    CHECK(count_rows(resumed.log_path) == 11);
    std::ifstream fl(full.log_path), rl(resumed.log_path);
    std::string line_f, line_r;
    std::getline(rl, line_r);  // header
    for (int i = 0; i < 11; ++i) std::getline(fl, line_f);  // header + epoch 0
    while (std::getline(rl, line_r)) {
        std::getline(fl, line_f);
        CHECK(line_f == line_r);
    }
}

TEST_CASE("training state counters satisfy the iteration identity") {
    testutil::TempDir data, out;
    write_tiny_dataset(data.path);
    TrainConfig cfg = tiny_config(data.path, out.path);
    run_training(cfg);

    TrainState st(cfg);
    load_state(st, out.path / "checkpoint_final.ckpt");
    CHECK(st.epoch == 2);
    CHECK(st.iteration == st.epoch * 10);  // dataset size 10 per epoch
    CHECK(st.reference_cycle_loss > 0);
}

TEST_CASE("empty dataset directories are rejected") {
    testutil::TempDir data, out;
    TrainConfig cfg = tiny_config(data.path, out.path);
    CHECK_THROWS_WITH_AS(run_training(cfg), doctest::Contains("no CBCT"),
                         std::runtime_error);
}

TEST_CASE("failure monitor flags only losses above three times the reference") {
    CHECK(failure_check(1.0, 1.0) == Verdict::kOk);
    CHECK(failure_check(2.99, 1.0) == Verdict::kOk);
    CHECK(failure_check(3.0, 1.0) == Verdict::kOk);
    CHECK(failure_check(3.01, 1.0) == Verdict::kSuspect);
    CHECK(failure_check(0.02994, 0.01) == Verdict::kOk);
    CHECK(failure_check(0.03006, 0.01) == Verdict::kSuspect);
    CHECK_THROWS_AS(failure_check(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(failure_check(1.0, -2.0), std::invalid_argument);
}
