#include "ctxlate/volume.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

namespace ctxlate {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Modality m) {
    switch (m) {
        case Modality::CBCT: return "CBCT";
        case Modality::PlanCT: return "PlanCT";
        case Modality::SynPlanCT: return "SynPlanCT";
        case Modality::PhantomTruth: return "PhantomTruth";
        case Modality::PhantomCBCT: return "PhantomCBCT";
    }
    throw std::logic_error("unknown modality");
}

Modality modality_from_string(const std::string& s) {
    if (s == "CBCT") return Modality::CBCT;
    if (s == "PlanCT") return Modality::PlanCT;
    if (s == "SynPlanCT") return Modality::SynPlanCT;
    if (s == "PhantomTruth") return Modality::PhantomTruth;
    if (s == "PhantomCBCT") return Modality::PhantomCBCT;
    throw std::invalid_argument("unknown modality '" + s + "'");
}

CTVolume::CTVolume(int height, int width, int depth, std::array<double, 3> spacing_mm,
                   Modality modality, std::string patient_id)
    : h_(height),
      w_(width),
      d_(depth),
      spacing_(spacing_mm),
      modality_(modality),
      patient_id_(std::move(patient_id)) {
    if (h_ <= 0 || w_ <= 0 || d_ <= 0)
        throw std::invalid_argument("CTVolume: dims must be positive, got " + std::to_string(h_) +
                                    "x" + std::to_string(w_) + "x" + std::to_string(d_));
    voxels_.assign(static_cast<size_t>(h_) * w_ * d_, 0);
}

void CTVolume::validate() const {
    if (h_ <= 0 || w_ <= 0 || d_ <= 0)
        throw std::invalid_argument("CTVolume: dims must be positive");
    for (double s : spacing_)
        if (!(s > 0.0))
            throw std::invalid_argument("CTVolume: spacing must be positive, got " +
                                        std::to_string(s));
    if (voxels_.size() != static_cast<size_t>(h_) * w_ * d_)
        throw std::invalid_argument("CTVolume: voxel count does not match dims");
    for (int16_t v : voxels_)
        if (v < kHuMin || v > kHuMax)
            throw std::invalid_argument("CTVolume: voxels contain HU value " + std::to_string(v) +
                                        " outside [" + std::to_string(kHuMin) + ", " +
                                        std::to_string(kHuMax) + "]");
}

namespace {

std::pair<fs::path, fs::path> resolve_pair(const fs::path& path) {
    fs::path stem = path;
    auto ext = path.extension().string();
    if (ext == ".json" || ext == ".raw") stem.replace_extension();
    fs::path sidecar = stem;
    sidecar += ".json";
    fs::path raw = stem;
    raw += ".raw";
    return {sidecar, raw};
}

// The payload is declared little-endian; convert if the host differs.
void to_little_endian(std::vector<int16_t>& v) {
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& x : v) {
            const auto u = static_cast<uint16_t>(x);
            x = static_cast<int16_t>(static_cast<uint16_t>((u << 8) | (u >> 8)));
        }
    }
}

}  // namespace

CTVolume load_volume(const fs::path& path) {
    auto [sidecar, raw] = resolve_pair(path);
    std::ifstream js(sidecar);
    if (!js) throw std::runtime_error("load_volume: cannot open sidecar " + sidecar.string());
    json j;
    try {
        js >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_volume: bad sidecar " + sidecar.string() + ": " + e.what());
    }

    auto require = [&](const char* key) {
        if (!j.contains(key))
            throw std::runtime_error("load_volume: sidecar " + sidecar.string() +
                                     " is missing field '" + key + "'");
    };
    require("dims");
    require("spacing");
    require("modality");

    auto dims = j.at("dims").get<std::vector<int>>();
    if (dims.size() != 3)
        throw std::runtime_error("load_volume: field 'dims' must have 3 entries");
    auto spacing = j.at("spacing").get<std::vector<double>>();
    if (spacing.size() != 3)
        throw std::runtime_error("load_volume: field 'spacing' must have 3 entries");
    if (j.value("dtype", std::string("int16")) != "int16")
        throw std::runtime_error("load_volume: field 'dtype' must be int16");
    if (j.value("byte_order", std::string("little")) != "little")
        throw std::runtime_error("load_volume: field 'byte_order' must be little");

    // Constructor and validate() flag caller bugs with invalid_argument, but
    // here the bad values come from the file, so re-brand as runtime errors.
    auto vol = [&]() -> CTVolume {
        try {
            return CTVolume(dims[0], dims[1], dims[2], {spacing[0], spacing[1], spacing[2]},
                            modality_from_string(j.at("modality").get<std::string>()),
                            j.value("patient_id", std::string{}));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("load_volume: " + std::string(e.what()));
        }
    }();

    std::ifstream rs(raw, std::ios::binary);
    if (!rs) throw std::runtime_error("load_volume: cannot open payload " + raw.string());
    rs.seekg(0, std::ios::end);
    const auto bytes = static_cast<size_t>(rs.tellg());
    const size_t expected = vol.voxel_count() * sizeof(int16_t);
    if (bytes != expected)
        throw std::runtime_error("load_volume: payload " + raw.string() + " holds " +
                                 std::to_string(bytes) + " bytes but field 'dims' implies " +
                                 std::to_string(expected));
    rs.seekg(0);
    rs.read(reinterpret_cast<char*>(vol.voxels().data()), static_cast<std::streamsize>(expected));
    if (!rs) throw std::runtime_error("load_volume: short read from " + raw.string());
    to_little_endian(vol.voxels());  // self-inverse on LE hosts

    try {
        vol.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("load_volume: " + std::string(e.what()));
    }
    return vol;
}

fs::path save_volume(const CTVolume& vol, const fs::path& path) {
    vol.validate();
    auto [sidecar, raw] = resolve_pair(path);
    if (!sidecar.parent_path().empty()) fs::create_directories(sidecar.parent_path());

    json j{{"format", "ctvol"},
           {"version", 1},
           {"dims", {vol.height(), vol.width(), vol.depth()}},
           {"spacing", {vol.spacing()[0], vol.spacing()[1], vol.spacing()[2]}},
           {"modality", to_string(vol.modality())},
           {"patient_id", vol.patient_id()},
           {"dtype", "int16"},
           {"byte_order", "little"}};
    {
        std::ofstream js(sidecar);
        if (!js) throw std::runtime_error("save_volume: cannot write " + sidecar.string());
        js << j.dump(2) << "\n";
    }
    {
        std::vector<int16_t> payload = vol.voxels();
        to_little_endian(payload);
        std::ofstream rs(raw, std::ios::binary);
        if (!rs) throw std::runtime_error("save_volume: cannot write " + raw.string());
        rs.write(reinterpret_cast<const char*>(payload.data()),
                 static_cast<std::streamsize>(payload.size() * sizeof(int16_t)));
        if (!rs) throw std::runtime_error("save_volume: short write to " + raw.string());
    }
    return sidecar;
}

}  // namespace ctxlate
