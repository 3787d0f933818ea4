#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "ctxlate/phantom.hpp"
#include "test_util.hpp"

using namespace ctxlate;
using namespace ctxlate::phantom;

namespace {

struct Cohort {
    std::vector<PhantomPatient> patients;
    std::vector<CTVolume> cbcts;
};

/// Eight default patients with default degradation, generated once. ROI
/// statistics below aggregate across the cohort so per-ROI noise averages
/// out (>= 16 ROIs per tissue).
const Cohort& cohort() {
    static const Cohort c = [] {
        Cohort c;
        const PhantomSpec ps = default_phantom_spec();
        const DegradationSpec ds;
        for (uint64_t i = 0; i < 8; ++i) {
            c.patients.push_back(generate_truth_patient(ps, i));
            c.cbcts.push_back(degrade_to_cbct(c.patients.back(), ds, i));
        }
        return c;
    }();
    return c;
}

struct RoiStats {
    std::vector<double> means, sds;
    double mean() const {
        double m = 0;
        for (double v : means) m += v;
        return m / double(means.size());
    }
    double mean_sd() const {
        double m = 0;
        for (double v : sds) m += v;
        return m / double(sds.size());
    }
};

RoiStats collect(Tissue tissue, bool degraded) {
    RoiStats out;
    const Cohort& c = cohort();
    for (size_t i = 0; i < c.patients.size(); ++i) {
        const CTVolume& vol = degraded ? c.cbcts[i] : c.patients[i].truth;
        for (const RoiBox& b : roi_boxes(c.patients[i])) {
            if (b.tissue != tissue) continue;
            double m = 0;
            for (int y = b.y; y < b.y + b.size; ++y)
                for (int x = b.x; x < b.x + b.size; ++x) m += vol.at(y, x, b.z);
            m /= double(b.size) * b.size;
            double v = 0;
            for (int y = b.y; y < b.y + b.size; ++y)
                for (int x = b.x; x < b.x + b.size; ++x)
                    v += (vol.at(y, x, b.z) - m) * (vol.at(y, x, b.z) - m);
            out.means.push_back(m);
            out.sds.push_back(std::sqrt(v / (double(b.size) * b.size)));
        }
    }
    return out;
}

DegradationSpec zero_degradation() {
    DegradationSpec d;
    d.hu_bias.fill(0);
    d.smoothing_sigma = 0;
    d.cupping_amplitude = 0;
    d.ring_amplitude = 0;
    d.streak_amplitude = 0;
    d.noise_sd = 0;
    return d;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("muscle-only phantom matches planning-CT muscle statistics") {
    PhantomSpec spec = default_phantom_spec();
    spec.regions.clear();
    spec.seed = 7;
    CTVolume vol = generate_truth(spec);

    // Central 10x10 ROI, safely inside the body ellipse.
    const int y0 = vol.height() / 2 - 5, x0 = vol.width() / 2 - 5, z = vol.depth() / 2;
    double m = 0;
    for (int y = y0; y < y0 + 10; ++y)
        for (int x = x0; x < x0 + 10; ++x) m += vol.at(y, x, z);
    m /= 100;
    double v = 0;
    for (int y = y0; y < y0 + 10; ++y)
        for (int x = x0; x < x0 + 10; ++x) v += (vol.at(y, x, z) - m) * (vol.at(y, x, z) - m);
    const double sd = std::sqrt(v / 100);

    CHECK(std::abs(m - 52.0) < 3.0);
    CHECK(sd >= 8.0);
    CHECK(sd <= 20.0);
}

TEST_CASE("zero-sd phantom is piecewise constant at the class means") {
    PhantomSpec spec = default_phantom_spec();
    for (auto& t : spec.tissue_hu) t.sd_hu = 0;
    PhantomPatient p = generate_truth_patient(spec, 0);

    std::map<int, int> seen;
    for (int z = 0; z < p.truth.depth(); ++z)
        for (int y = 0; y < p.truth.height(); ++y)
            for (int x = 0; x < p.truth.width(); ++x) {
                const int cls = p.labels.at(y, x, z);
                const float want =
                    cls == 0 ? -1000.0f : spec.tissue_hu[size_t(cls)].mean_hu;
                REQUIRE(p.truth.at(y, x, z) == int16_t(std::lround(want)));
                ++seen[cls];
            }
    // Every tissue of the default layout is actually present.
    for (int cls = 0; cls < kTissueCount; ++cls) CHECK(seen[cls] > 0);
}

TEST_CASE("same seed reproduces the identical volume") {
    PhantomSpec spec = default_phantom_spec();
    spec.seed = 123;
    CHECK(generate_truth(spec) == generate_truth(spec));

    spec.seed = 124;
    CHECK(generate_truth(spec) != generate_truth_patient(PhantomSpec(spec), 1).truth);
}

TEST_CASE("regions that do not fit inside the body are rejected") {
    PhantomSpec spec = default_phantom_spec();
    Region r;
    r.shape = Region::Shape::kEllipse;
    r.tissue = Tissue::kBladder;
    r.dx = 45;
    r.ax = 10;
    r.ay = 8;
    spec.regions.push_back(r);
    CHECK_THROWS_WITH_AS(generate_truth(spec), doctest::Contains("body ellipse"),
                         std::invalid_argument);

    PhantomSpec bad_shell = default_phantom_spec();
    bad_shell.regions[0].outer = 1.2f;
    CHECK_THROWS_AS(generate_truth(bad_shell), std::invalid_argument);
}

TEST_CASE("truth ROI statistics sit on the planning-CT targets") {
    const RoiStats muscle = collect(Tissue::kMuscle, false);
    REQUIRE(muscle.means.size() >= 16);
    CHECK(std::abs(muscle.mean() - 52.0) < 3.0);
    CHECK(muscle.mean_sd() >= 8.0);
    CHECK(muscle.mean_sd() <= 20.0);

    CHECK(std::abs(collect(Tissue::kFat, false).mean() - -104.0) < 5.0);
    CHECK(std::abs(collect(Tissue::kProstate, false).mean() - 33.0) < 8.0);
    CHECK(std::abs(collect(Tissue::kBladder, false).mean() - 8.0) < 8.0);
}

TEST_CASE("default degradation hits the CBCT muscle mean") {
    const RoiStats muscle = collect(Tissue::kMuscle, true);
    REQUIRE(muscle.means.size() >= 16);
    CHECK(std::abs(muscle.mean() - -138.0) < 5.0);
}

TEST_CASE("default degradation keeps fat ROI noise in the CBCT band") {
    const RoiStats fat = collect(Tissue::kFat, true);
    REQUIRE(fat.sds.size() >= 16);
    CHECK(fat.mean_sd() >= 30.0);
    CHECK(fat.mean_sd() <= 55.0);
}

TEST_CASE("all-zero degradation is the identity") {
    const PhantomPatient& p = cohort().patients[0];
    CTVolume cbct = degrade_to_cbct(p, zero_degradation(), 0);
    CHECK(cbct.voxels() == p.truth.voxels());
    CHECK(cbct.modality() == Modality::PhantomCBCT);
    CHECK(cbct.patient_id() == p.truth.patient_id());
}

TEST_CASE("degradation preserves the air set exactly") {
    const Cohort& c = cohort();
    for (size_t i = 0; i < 2; ++i) {
        const auto& t = c.patients[i].truth.voxels();
        const auto& d = c.cbcts[i].voxels();
        REQUIRE(t.size() == d.size());
        size_t air = 0;
        for (size_t v = 0; v < t.size(); ++v) {
            REQUIRE((t[v] < -465) == (d[v] < -465));
            air += t[v] < -465;
        }
        CHECK(air > 0);
    }
}

TEST_CASE("degradation is deterministic under its seed") {
    const PhantomPatient& p = cohort().patients[1];
    const DegradationSpec ds;
    CHECK(degrade_to_cbct(p, ds, 1) == degrade_to_cbct(p, ds, 1));
    DegradationSpec other = ds;
    other.seed = 99;
    CHECK(degrade_to_cbct(p, ds, 1) != degrade_to_cbct(p, other, 1));
}

TEST_CASE("bias lifting air above the boundary is rejected") {
    const PhantomPatient& p = cohort().patients[0];
    DegradationSpec ds;
    ds.hu_bias[0] = 600;
    CHECK_THROWS_WITH_AS(degrade_to_cbct(p, ds, 0), doctest::Contains("air"),
                         std::invalid_argument);
}

TEST_CASE("tissue bias cannot push body voxels into the air set") {
    const PhantomPatient& p = cohort().patients[0];
    DegradationSpec ds = zero_degradation();
    ds.hu_bias[int(Tissue::kFat)] = -800;  // fat would land near -900
    CTVolume cbct = degrade_to_cbct(p, ds, 0);
    for (size_t v = 0; v < cbct.voxels().size(); ++v)
        REQUIRE((p.truth.voxels()[v] < -465) == (cbct.voxels()[v] < -465));
}

TEST_CASE("roi boxes are label-pure and cover all four tissues") {
    const Cohort& c = cohort();
    std::map<Tissue, int> count;
    for (const PhantomPatient& p : c.patients)
        for (const RoiBox& b : roi_boxes(p)) {
            for (int y = b.y; y < b.y + b.size; ++y)
                for (int x = b.x; x < b.x + b.size; ++x)
                    REQUIRE(p.labels.at(y, x, b.z) == uint8_t(b.tissue));
            ++count[b.tissue];
        }
    CHECK(count[Tissue::kMuscle] >= 16);
    CHECK(count[Tissue::kFat] >= 16);
    CHECK(count[Tissue::kProstate] >= 16);
    CHECK(count[Tissue::kBladder] >= 16);
}

TEST_CASE("emit_dataset writes volumes, manifest and pure ROI coordinates") {
    testutil::TempDir tmp;
    PhantomSpec ps = default_phantom_spec();
    ps.seed = 21;
    DegradationSpec ds;
    ds.seed = 22;
    const auto manifest = emit_dataset(2, ps, ds, tmp.path);

    CHECK(manifest.at("n_patients") == 2);
    REQUIRE(manifest.at("patients").size() == 2);
    size_t volume_files = 0;
    for (const auto& e : std::filesystem::directory_iterator(tmp.path))
        volume_files += e.path().extension() == ".raw";
    CHECK(volume_files == 4);

    for (const auto& entry : manifest.at("patients")) {
        const CTVolume truth =
            load_volume(tmp.path / entry.at("truth").get<std::string>());
        const CTVolume cbct =
            load_volume(tmp.path / entry.at("cbct").get<std::string>());
        CHECK(truth.modality() == Modality::PhantomTruth);
        CHECK(cbct.modality() == Modality::PhantomCBCT);
        CHECK(truth.patient_id() == entry.at("patient_id").get<std::string>());

        // ROI coordinates must address voxels of their declared class: the
        // labels are reproducible from the recorded seeds.
        const PhantomPatient p =
            generate_truth_patient(ps, entry.at("index").get<uint64_t>());
        CHECK(p.truth == truth);
        REQUIRE(entry.at("rois").size() > 0);
        for (const auto& roi : entry.at("rois")) {
            const Tissue t = tissue_from_string(roi.at("tissue").get<std::string>());
            const int z = roi.at("z"), y0 = roi.at("y"), x0 = roi.at("x"),
                      size = roi.at("size");
            for (int y = y0; y < y0 + size; ++y)
                for (int x = x0; x < x0 + size; ++x)
                    REQUIRE(p.labels.at(y, x, z) == uint8_t(t));
        }
    }
}

TEST_CASE("regenerating a dataset is byte-identical") {
    testutil::TempDir a, b;
    PhantomSpec ps = default_phantom_spec();
    ps.seed = 5;
    DegradationSpec ds;
    ds.seed = 6;
    emit_dataset(2, ps, ds, a.path);
    emit_dataset(2, ps, ds, b.path);

    size_t compared = 0;
    for (const auto& e : std::filesystem::directory_iterator(a.path)) {
        const auto name = e.path().filename();
        REQUIRE(read_file(a.path / name) == read_file(b.path / name));
        ++compared;
    }
    CHECK(compared == 9);  // 2 patients x 2 volumes x 2 files + manifest
}

TEST_CASE("emit_dataset rejects a non-positive patient count") {
    testutil::TempDir tmp;
    CHECK_THROWS_AS(emit_dataset(0, default_phantom_spec(), DegradationSpec{}, tmp.path),
                    std::invalid_argument);
}
