#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <png.h>

#include "ctxlate/evaluation.hpp"
#include "ctxlate/phantom.hpp"
#include "ctxlate/trainer.hpp"
#include "test_util.hpp"

using namespace ctxlate;
using eval::ROISpec;

namespace {

/// Deterministic HU noise in [-500, 200], reproduced bit-identically by the
/// python reference that froze the oracle values below.
nn::Tensor lcg_image(int h, int w, uint64_t seed = 12345) {
    nn::Tensor img(1, h, w);
    uint64_t x = seed;
    for (int y = 0; y < h; ++y)
        for (int c = 0; c < w; ++c) {
            x = x * 6364136223846793005ULL + 1442695040888963407ULL;
            img.at(0, y, c) = float(-500 + int((x >> 33) % 701));
        }
    return img;
}

nn::Tensor checker_image() {  // 8 px fat/muscle tiles
    nn::Tensor img(1, 64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(0, y, x) = ((y / 8 + x / 8) % 2 == 0) ? -104.f : 52.f;
    return img;
}

CTVolume tensor_volume(const nn::Tensor& t, int depth = 1) {
    CTVolume vol(t.h(), t.w(), depth, {1, 1, 1}, Modality::PlanCT, "test");
    for (int z = 0; z < depth; ++z)
        for (int y = 0; y < t.h(); ++y)
            for (int x = 0; x < t.w(); ++x) vol.at(y, x, z) = int16_t(t.at(0, y, x));
    return vol;
}

struct PngData {
    int h = 0, w = 0, channels = 0;
    std::vector<uint8_t> px;
};

PngData read_png_back(const std::filesystem::path& path) {
    PngData out;
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    REQUIRE(fp != nullptr);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, fp);
    png_read_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    out.h = int(png_get_image_height(png, info));
    out.w = int(png_get_image_width(png, info));
    out.channels = int(png_get_channels(png, info));
    png_bytepp rows = png_get_rows(png, info);
    for (int y = 0; y < out.h; ++y)
        out.px.insert(out.px.end(), rows[y], rows[y] + size_t(out.w) * out.channels);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("roi_stats: constants, brute-force agreement, bounds checks") {
    CTVolume vol = tensor_volume(lcg_image(20, 24), 3);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) vol.at(5 + y, 5 + x, 1) = 52;

    const eval::RoiStats constant = eval::roi_stats(vol, {1, 5, 5, 10, 10, "muscle"});
    CHECK(constant.mean == 52.0);
    CHECK(constant.sd == 0.0);

    const ROISpec roi{2, 3, 7, 10, 10, "any"};
    const eval::RoiStats st = eval::roi_stats(vol, roi);
    double sum = 0;
    for (int y = roi.y; y < roi.y + roi.height; ++y)
        for (int x = roi.x; x < roi.x + roi.width; ++x) sum += vol.at(y, x, roi.slice);
    const double mean = sum / 100.0;
    double ss = 0;
    for (int y = roi.y; y < roi.y + roi.height; ++y)
        for (int x = roi.x; x < roi.x + roi.width; ++x)
            ss += (vol.at(y, x, roi.slice) - mean) * (vol.at(y, x, roi.slice) - mean);
    CHECK(st.mean == mean);  // two-pass in both: exact
    CHECK(st.sd == std::sqrt(ss / 100.0));

    CHECK_THROWS_AS(eval::roi_stats(vol, {1, 15, 5, 10, 10, ""}), std::out_of_range);
    CHECK_THROWS_AS(eval::roi_stats(vol, {1, 5, 20, 10, 10, ""}), std::out_of_range);
    CHECK_THROWS_AS(eval::roi_stats(vol, {3, 0, 0, 10, 10, ""}), std::out_of_range);
    CHECK_THROWS_AS(eval::roi_stats(vol, {0, -1, 0, 10, 10, ""}), std::out_of_range);
    CHECK_THROWS_AS(eval::roi_stats(vol, {0, 0, 0, 0, 10, ""}), std::out_of_range);
}

TEST_CASE("roi_stats: phantom muscle ROI sits on the PlanCT target") {
    phantom::PhantomSpec ps = phantom::default_phantom_spec();
    ps.seed = 17;
    ps.regions.clear();  // pure muscle interior
    const phantom::PhantomPatient p = phantom::generate_truth_patient(ps, 0);
    const int zc = ps.slices / 2;
    const ROISpec roi{zc, p.truth.height() / 2 - 5, p.truth.width() / 2 - 5, 10, 10, "muscle"};
    const eval::RoiStats st = eval::roi_stats(p.truth, roi);
    CHECK(std::abs(st.mean - 52.0) < 3.0 * st.sd / 10.0);
}

TEST_CASE("volume_histogram: counting oracles and edge behavior") {
    nn::Tensor flat(1, 10, 10);
    flat.fill(52.f);
    const eval::Histogram single = eval::volume_histogram(tensor_volume(flat, 2));
    int nonzero = 0;
    int64_t total = 0;
    for (int64_t c : single.counts) {
        nonzero += c != 0;
        total += c;
    }
    CHECK(single.bins() == 70);
    CHECK(nonzero == 1);
    CHECK(total == 200);

    // two-value volume: exact counts in exactly two bins
    nn::Tensor pair_img(1, 10, 10);
    for (int i = 0; i < 100; ++i) pair_img[size_t(i)] = i < 37 ? -104.f : 52.f;
    const eval::Histogram two = eval::volume_histogram(tensor_volume(pair_img));
    CHECK(two.counts[size_t((-104 + 500) / 10)] == 37);
    CHECK(two.counts[size_t((52 + 500) / 10)] == 63);

    // out-of-range values land in edge bins so counts still sum to size
    nn::Tensor wide(1, 2, 2);
    wide[0] = -1000.f;
    wide[1] = 3000.f;
    wide[2] = -500.f;
    wide[3] = 199.f;
    const eval::Histogram clamped = eval::volume_histogram(tensor_volume(wide));
    CHECK(clamped.counts.front() == 2);
    CHECK(clamped.counts.back() == 2);

    CHECK_THROWS_AS(eval::volume_histogram(tensor_volume(flat), 1), std::invalid_argument);
    CHECK_THROWS_AS(eval::volume_histogram(tensor_volume(flat), 70, 200, -500),
                    std::invalid_argument);
}

TEST_CASE("volume_histogram: fat and muscle form distinct phantom modes") {
    phantom::PhantomSpec ps = phantom::default_phantom_spec();
    ps.seed = 23;
    const eval::Histogram h = eval::volume_histogram(phantom::generate_truth_patient(ps, 0).truth);
    const size_t fat_bin = (-104 + 500) / 10, muscle_bin = (52 + 500) / 10, valley = (-30 + 500) / 10;
    CHECK(h.counts[fat_bin] > 4 * h.counts[valley]);
    CHECK(h.counts[muscle_bin] > 4 * h.counts[valley]);
    CHECK(h.counts[fat_bin] > 1000);
    CHECK(h.counts[muscle_bin] > 1000);
}

TEST_CASE("gaussian_blur2d matches the scipy-frozen reference") {
    const nn::Tensor noise = lcg_image(48, 48);
    // anchor the generator against the python reference first
    CHECK(noise.at(0, 0, 0) == -225.f);
    CHECK(noise.at(0, 0, 1) == -113.f);
    CHECK(noise.at(0, 47, 47) == -268.f);

    const nn::Tensor blurred = eval::gaussian_blur2d(noise, 3.0);
    CHECK(blurred.at(0, 0, 0) == doctest::Approx(-160.732711).epsilon(1e-5));
    CHECK(blurred.at(0, 24, 24) == doctest::Approx(-151.651189).epsilon(1e-5));
    CHECK(blurred.at(0, 47, 47) == doctest::Approx(-157.920811).epsilon(1e-5));

    nn::Tensor flat(1, 16, 16);
    flat.fill(77.f);
    const nn::Tensor fb = eval::gaussian_blur2d(flat, 3.0);
    for (int i = 0; i < fb.size(); ++i) CHECK(fb[size_t(i)] == doctest::Approx(77.f).epsilon(1e-6));

    CHECK_THROWS_AS(eval::gaussian_blur2d(noise, 0.0), std::invalid_argument);
}

TEST_CASE("self_ssim: frozen oracles and the sharpness ordering") {
    nn::Tensor flat(1, 32, 32);
    flat.fill(52.f);
    CHECK(eval::self_ssim(flat) == doctest::Approx(1.0).epsilon(1e-9));

    const double sharp = eval::self_ssim(checker_image());
    const double smooth = eval::self_ssim(eval::gaussian_blur2d(checker_image(), 3.0));
    const double noisy = eval::self_ssim(lcg_image(48, 48));
    CHECK(sharp == doctest::Approx(0.4254178376).epsilon(1e-4));
    CHECK(smooth == doctest::Approx(0.8858368020).epsilon(1e-4));
    CHECK(noisy == doctest::Approx(0.0253948686).epsilon(1e-4));
    // blur-like content scores high: constant > pre-blurred > sharp > noise
    CHECK(smooth < 1.0);
    CHECK(sharp < smooth);
    CHECK(noisy < sharp);

    nn::Tensor tiny(1, 10, 10);
    CHECK_THROWS_AS(eval::self_ssim(tiny), std::invalid_argument);
}

TEST_CASE("ssim: identity, symmetry, and a cross-image value") {
    const nn::Tensor a = eval::hu_to_display(lcg_image(32, 40));
    CHECK(eval::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    const nn::Tensor c = eval::hu_to_display(checker_image());
    const nn::Tensor cb = eval::hu_to_display(eval::gaussian_blur2d(checker_image(), 3.0));
    CHECK(eval::ssim(c, cb) == doctest::Approx(0.4254178376).epsilon(1e-4));
    CHECK(eval::ssim(c, cb) == eval::ssim(cb, c));

    nn::Tensor wrong(1, 32, 32);
    CHECK_THROWS_AS(eval::ssim(a, wrong), std::invalid_argument);
}

TEST_CASE("cycle_difference_image: zero case and boundary localization") {
    const nn::Tensor x = lcg_image(40, 40);
    const nn::Tensor zero = eval::cycle_difference_image(x, x);
    for (int i = 0; i < zero.size(); ++i) REQUIRE(zero[size_t(i)] == 0.f);

    // constant image with one inserted bright disk: the difference rings the
    // disk boundary and vanishes beyond the Sobel kernel's reach
    nn::Tensor base(1, 48, 48);
    base.fill(-150.f);
    nn::Tensor cyc = base;
    const int cy = 24, cx = 24, r = 6;
    for (int y = 0; y < 48; ++y)
        for (int x2 = 0; x2 < 48; ++x2)
            if ((y - cy) * (y - cy) + (x2 - cx) * (x2 - cx) <= r * r) cyc.at(0, y, x2) = 300.f;
    const nn::Tensor d = eval::cycle_difference_image(base, cyc);
    double ring_sum = 0, far_sum = 0, inner_sum = 0;
    int ring_n = 0, far_n = 0, inner_n = 0;
    for (int y = 0; y < 48; ++y)
        for (int x2 = 0; x2 < 48; ++x2) {
            const double dist = std::hypot(y - cy, x2 - cx);
            const double v = std::abs(d.at(0, y, x2));
            if (dist > r + 3) {
                far_sum += v;
                ++far_n;
            } else if (dist >= r - 2 && dist <= r + 2) {
                ring_sum += v;
                ++ring_n;
            } else if (dist < r - 2) {
                inner_sum += v;
                ++inner_n;
            }
        }
    CHECK(far_sum == 0.0);  // identically zero beyond kernel reach
    CHECK(inner_sum == 0.0);
    CHECK(ring_n > 0);
    // anomaly localization bound (far mean is exactly zero here)
    CHECK(ring_sum / ring_n > 3.0 * (far_sum / far_n) + 100.0);

    nn::Tensor small(1, 8, 8);
    CHECK_THROWS_AS(eval::cycle_difference_image(x, small), std::invalid_argument);
}

TEST_CASE("air_dice: identity, disjoint, and partial overlap") {
    nn::Tensor img(1, 10, 10);
    img.fill(52.f);
    for (int x = 0; x < 5; ++x) img.at(0, 0, x) = -1000.f;
    const CTVolume a = tensor_volume(img);
    CHECK(eval::air_dice(a, a) == 1.0);

    nn::Tensor solid(1, 10, 10);
    solid.fill(52.f);
    const CTVolume b = tensor_volume(solid);
    CHECK(eval::air_dice(a, b) == 0.0);
    CHECK(eval::air_dice(b, b) == 1.0);  // both air sets empty

    nn::Tensor img2 = img;  // air on 3 of the same 5 voxels + 2 new ones
    img2.at(0, 0, 3) = 52.f;
    img2.at(0, 0, 4) = 52.f;
    img2.at(0, 1, 0) = -1000.f;
    img2.at(0, 1, 1) = -1000.f;
    CHECK(eval::air_dice(a, tensor_volume(img2)) == doctest::Approx(2.0 * 3 / (5 + 5)));

    CTVolume other(8, 10, 1, {1, 1, 1}, Modality::CBCT, "x");
    CHECK_THROWS_AS(eval::air_dice(a, other), std::invalid_argument);
}

TEST_CASE("checkerboard_overlay: tile provenance oracle") {
    nn::Tensor dark(1, 32, 48), bright(1, 32, 48);
    dark.fill(-500.f);   // display 0
    bright.fill(200.f);  // display 255
    const eval::Checkerboard cb = eval::checkerboard_overlay(dark, bright, 8);
    REQUIRE(cb.image.h == 32);
    REQUIRE(cb.image.w == 48);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 48; ++x) {
            const bool expect_b = ((y / 8) + (x / 8)) % 2 == 1;
            const size_t i = size_t(y) * 48 + x;
            REQUIRE(cb.from_b[i] == uint8_t(expect_b));
            REQUIRE(cb.image.px[i] == (expect_b ? 255 : 0));
        }

    // non-divisible tile still tiles deterministically
    const eval::Checkerboard odd = eval::checkerboard_overlay(dark, bright, 5);
    CHECK(odd.from_b[size_t(0) * 48 + 5] == 1);
    CHECK(odd.from_b[size_t(5) * 48 + 0] == 1);
    CHECK(odd.from_b[size_t(5) * 48 + 5] == 0);

    CHECK_THROWS_AS(eval::checkerboard_overlay(dark, bright, 0), std::invalid_argument);
    nn::Tensor small(1, 8, 8);
    CHECK_THROWS_AS(eval::checkerboard_overlay(dark, small, 8), std::invalid_argument);
}

TEST_CASE("write_png: round trip for gray and rgb, deterministic bytes") {
    testutil::TempDir tmp;
    eval::GrayImage g;
    g.h = 16;
    g.w = 20;
    uint64_t x = 99;
    for (int i = 0; i < 16 * 20; ++i) {
        x = x * 6364136223846793005ULL + 1442695040888963407ULL;
        g.px.push_back(uint8_t(x >> 56));
    }
    eval::write_png(tmp.path / "g.png", g);
    const PngData back = read_png_back(tmp.path / "g.png");
    CHECK(back.h == 16);
    CHECK(back.w == 20);
    CHECK(back.channels == 1);
    CHECK(std::vector<uint8_t>(back.px) == g.px);

    eval::RgbImage rgb;
    rgb.h = 8;
    rgb.w = 9;
    rgb.px.assign(3 * 8 * 9, 0);
    rgb.set(2, 3, 255, 10, 30);
    eval::write_png(tmp.path / "c.png", rgb);
    const PngData cb = read_png_back(tmp.path / "c.png");
    CHECK(cb.channels == 3);
    CHECK(cb.px == rgb.px);

    eval::write_png(tmp.path / "g2.png", g);
    CHECK(file_bytes(tmp.path / "g.png") == file_bytes(tmp.path / "g2.png"));

    eval::GrayImage bad;
    bad.h = 4;
    bad.w = 4;
    bad.px.resize(3);
    CHECK_THROWS_AS(eval::write_png(tmp.path / "bad.png", bad), std::invalid_argument);
}

namespace {

/// Tiny dataset + random-weight checkpoint shared by the report tests.
struct ReportFixture {
    testutil::TempDir dir;
    std::filesystem::path data = dir.path / "data";
    std::filesystem::path ckpt = dir.path / "net.ckpt";
    size_t n_rois = 0;

    ReportFixture() {
        phantom::PhantomSpec ps = phantom::default_phantom_spec();
        ps.height = 32;
        ps.width = 40;
        ps.slices = 6;
        ps.body_ax = 15;
        ps.body_ay = 12;
        ps.regions.clear();
        ps.seed = 3;
        phantom::DegradationSpec ds;
        ds.ring_amplitude = 40;
        ds.streak_amplitude = 25;
        ds.noise_sd = 20;
        const nlohmann::json manifest = phantom::emit_dataset(1, ps, ds, data);
        n_rois = manifest["patients"][0]["rois"].size();

        TrainConfig cfg;
        cfg.seed = 7;
        cfg.crop = {24, 32, 0};
        cfg.generator.base_channels = 4;
        cfg.generator.residual_blocks = 2;
        cfg.generator.noise_after_block = 1;
        cfg.discriminator.base_channels = 4;
        TrainState st(cfg);
        save_state(st, ckpt);
    }
};

const ReportFixture& report_fixture() {
    static ReportFixture f;
    return f;
}

}  // namespace

TEST_CASE("emit_report: full bundle, schema, row counts, determinism") {
    const auto& f = report_fixture();
    testutil::TempDir out;
    eval::ReportJob job;
    job.dataset_dir = f.data;
    job.checkpoint = f.ckpt;
    job.out_dir = out.path;
    job.ssim_rois = 5;
    job.ssim_roi_size = 24;
    const nlohmann::json report = eval::emit_report(job);

    CHECK(report.at("schema") == "ctxlate-eval-report");
    CHECK(report.at("version") == 1);
    CHECK(report.at("patients").size() == 1);
    CHECK(report.at("roi_stats").size() == 3 * f.n_rois);
    CHECK(report.at("tissue_summary").at("muscle").at("truth").at("n") == f.n_rois);
    CHECK(report.at("tissue_summary").at("muscle").at("syn").at("n") == f.n_rois);
    for (const char* kind : {"truth", "cbct", "syn"}) {
        CHECK(report.at("histograms").at(kind).size() == 70);
        int64_t total = 0;
        for (int64_t c : report.at("histograms").at(kind).get<std::vector<int64_t>>()) total += c;
        CHECK(total == 32 * 40 * 6);
        CHECK(report.at("self_ssim").at(kind).at("n") == 5);
    }
    const double dice_min = report.at("air_dice").at("min").get<double>();
    CHECK(dice_min >= 0.0);
    CHECK(dice_min <= 1.0);
    CHECK(report.at("cycle_difference").at("mean_abs").get<double>() >= 0.0);
    CHECK(report.at("provenance").at("reference_cycle_loss").get<double>() == 0.0);

    for (const char* name : {"report.json", "roi_stats.csv", "histograms.png", "roi_violins.png"})
        CHECK(std::filesystem::exists(out.path / name));
    CHECK(std::filesystem::exists(out.path / "checkerboard_phantom_000.png"));
    CHECK(std::filesystem::exists(out.path / "cyclediff_phantom_000.png"));

    std::ifstream csv(out.path / "roi_stats.csv");
    std::string line;
    size_t rows = 0;
    std::getline(csv, line);
    CHECK(line == "volume,roi_id,tissue,mean_hu,sd_hu");
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3 * f.n_rois);

    // deterministic re-run: identical report and identical plot bytes
    testutil::TempDir out2;
    eval::ReportJob job2 = job;
    job2.out_dir = out2.path;
    const nlohmann::json report2 = eval::emit_report(job2);
    CHECK(report2.dump() == report.dump());
    CHECK(file_bytes(out.path / "histograms.png") == file_bytes(out2.path / "histograms.png"));
}

TEST_CASE("emit_report: missing manifest names the expected path") {
    const auto& f = report_fixture();
    testutil::TempDir empty;
    eval::ReportJob job;
    job.dataset_dir = empty.path;
    job.checkpoint = f.ckpt;
    job.out_dir = empty.path / "out";
    CHECK_THROWS_WITH_AS(eval::emit_report(job), doctest::Contains("manifest"),
                         std::runtime_error);
}
