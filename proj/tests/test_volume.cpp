#include "doctest.h"

#include <fstream>

#include "json.hpp"

#include "ctxlate/volume.hpp"
#include "test_util.hpp"

using namespace ctxlate;

namespace {

CTVolume make_volume(int h, int w, int d, Modality m = Modality::PlanCT) {
    CTVolume v(h, w, d, {1.0, 1.0, 2.5}, m, "test01");
    for (size_t i = 0; i < v.voxel_count(); ++i)
        v.voxels()[i] = int16_t(int(i * 37 % 4096) - 1024);
    return v;
}

void write_sidecar(const std::filesystem::path& p, const nlohmann::json& j) {
    std::ofstream(p) << j.dump(2);
}

nlohmann::json basic_sidecar() {
    return {{"format", "ctvol"},  {"version", 1},
            {"dims", {4, 4, 2}},  {"spacing", {1.0, 1.0, 1.0}},
            {"modality", "CBCT"}, {"patient_id", "p"},
            {"dtype", "int16"},   {"byte_order", "little"}};
}

void write_payload(const std::filesystem::path& p, size_t bytes) {
    std::vector<char> payload(bytes, 0);
    std::ofstream(p, std::ios::binary).write(payload.data(), std::streamsize(payload.size()));
}

}  // namespace

TEST_CASE("volume round trip is bit exact") {
    testutil::TempDir tmp;
    CTVolume v = make_volume(6, 5, 4, Modality::CBCT);
    save_volume(v, tmp.path / "vol");
    CTVolume r = load_volume(tmp.path / "vol.json");
    CHECK(r == v);
    CHECK(r.voxels() == v.voxels());
    CHECK(r.modality() == Modality::CBCT);
    CHECK(r.patient_id() == "test01");
}

TEST_CASE("load resolves sidecar, raw, or stem paths identically") {
    testutil::TempDir tmp;
    CTVolume v = make_volume(3, 4, 2);
    save_volume(v, tmp.path / "vol");
    CHECK(load_volume(tmp.path / "vol") == v);
    CHECK(load_volume(tmp.path / "vol.json") == v);
    CHECK(load_volume(tmp.path / "vol.raw") == v);
}

TEST_CASE("sidecar with 64-byte payload yields 32 voxels") {
    testutil::TempDir tmp;
    write_sidecar(tmp.path / "v.json", basic_sidecar());
    write_payload(tmp.path / "v.raw", 64);
    CTVolume v = load_volume(tmp.path / "v");
    CHECK(v.voxel_count() == 32);
    CHECK(v.height() == 4);
    CHECK(v.width() == 4);
    CHECK(v.depth() == 2);
}

TEST_CASE("payload of 63 bytes for dims [4,4,2] is a dimension mismatch") {
    testutil::TempDir tmp;
    write_sidecar(tmp.path / "v.json", basic_sidecar());
    write_payload(tmp.path / "v.raw", 63);
    CHECK_THROWS_WITH_AS(load_volume(tmp.path / "v"), doctest::Contains("dims"),
                         std::runtime_error);
}

TEST_CASE("missing sidecar fields are named in the diagnostic") {
    testutil::TempDir tmp;
    auto j = basic_sidecar();
    j.erase("spacing");
    write_sidecar(tmp.path / "v.json", j);
    write_payload(tmp.path / "v.raw", 64);
    CHECK_THROWS_WITH_AS(load_volume(tmp.path / "v"), doctest::Contains("spacing"),
                         std::runtime_error);
}

TEST_CASE("missing file is rejected") {
    testutil::TempDir tmp;
    CHECK_THROWS_AS(load_volume(tmp.path / "absent"), std::runtime_error);
}

TEST_CASE("HU outside [-1024, 3071] is rejected naming the voxel field") {
    testutil::TempDir tmp;
    CTVolume v = make_volume(2, 2, 1);
    save_volume(v, tmp.path / "v");
    std::fstream raw(tmp.path / "v.raw", std::ios::binary | std::ios::in | std::ios::out);
    int16_t bad = 3500;
    raw.write(reinterpret_cast<const char*>(&bad), 2);
    raw.close();
    CHECK_THROWS_WITH_AS(load_volume(tmp.path / "v"), doctest::Contains("voxels"),
                         std::runtime_error);
}

TEST_CASE("spacing 0 is rejected before write") {
    testutil::TempDir tmp;
    CTVolume v(2, 2, 1, {1.0, 0.0, 1.0}, Modality::PlanCT, "p");
    CHECK_THROWS_WITH_AS(save_volume(v, tmp.path / "v"), doctest::Contains("spacing"),
                         std::invalid_argument);
    CHECK(!std::filesystem::exists(tmp.path / "v.json"));
    CHECK(!std::filesystem::exists(tmp.path / "v.raw"));
}

TEST_CASE("non-positive dimensions are rejected at construction") {
    CHECK_THROWS_AS(CTVolume(0, 4, 4, {1, 1, 1}, Modality::CBCT, "p"), std::invalid_argument);
    CHECK_THROWS_AS(CTVolume(4, 4, -1, {1, 1, 1}, Modality::CBCT, "p"), std::invalid_argument);
}

TEST_CASE("512x512x1 zero volume writes exactly 524288 payload bytes") {
    testutil::TempDir tmp;
    CTVolume v(512, 512, 1, {1.0, 1.0, 1.0}, Modality::PhantomTruth, "zero");
    save_volume(v, tmp.path / "z");
    CHECK(std::filesystem::file_size(tmp.path / "z.raw") == 524288);
}

TEST_CASE("all modality tags survive a round trip") {
    testutil::TempDir tmp;
    for (Modality m : {Modality::CBCT, Modality::PlanCT, Modality::SynPlanCT,
                       Modality::PhantomTruth, Modality::PhantomCBCT}) {
        CTVolume v = make_volume(3, 3, 2, m);
        save_volume(v, tmp.path / "m");
        CHECK(load_volume(tmp.path / "m").modality() == m);
    }
}

TEST_CASE("unknown modality string is rejected") {
    CHECK_THROWS_AS(modality_from_string("MRI"), std::invalid_argument);
}

TEST_CASE("slice accessor walks slice-major storage") {
    CTVolume v = make_volume(2, 3, 4);
    for (int z = 0; z < v.depth(); ++z)
        CHECK(v.slice(z) == v.voxels().data() + size_t(z) * v.height() * v.width());
}
