// CT volume data model and the sidecar/raw on-disk format shared by the
// whole pipeline. A volume on disk is a pair <name>.json + <name>.raw:
// the sidecar carries dims/spacing/modality/patient_id, the raw payload is
// headerless little-endian int16 HU, axial slices stored contiguously.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctxlate {

enum class Modality { CBCT, PlanCT, SynPlanCT, PhantomTruth, PhantomCBCT };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// Valid stored HU range (standard 12-bit CT range).
constexpr int16_t kHuMin = -1024;
constexpr int16_t kHuMax = 3071;
constexpr int16_t kHuAir = -1000;

/// A 3D scalar field of Hounsfield units. Immutable by convention once
/// built: every consumer treats it as read-only, so shared use across
/// threads is safe.
class CTVolume {
public:
    CTVolume() = default;
    CTVolume(int height, int width, int depth, std::array<double, 3> spacing_mm,
             Modality modality, std::string patient_id);

    int height() const { return h_; }
    int width() const { return w_; }
    int depth() const { return d_; }
    size_t voxel_count() const { return voxels_.size(); }
    const std::array<double, 3>& spacing() const { return spacing_; }
    Modality modality() const { return modality_; }
    const std::string& patient_id() const { return patient_id_; }

    int16_t at(int y, int x, int z) const { return voxels_[index(y, x, z)]; }
    int16_t& at(int y, int x, int z) { return voxels_[index(y, x, z)]; }

    /// Contiguous h*w block of slice z.
    const int16_t* slice(int z) const { return voxels_.data() + static_cast<size_t>(z) * h_ * w_; }
    int16_t* slice(int z) { return voxels_.data() + static_cast<size_t>(z) * h_ * w_; }

    const std::vector<int16_t>& voxels() const { return voxels_; }
    std::vector<int16_t>& voxels() { return voxels_; }

    void set_modality(Modality m) { modality_ = m; }
    void set_patient_id(std::string id) { patient_id_ = std::move(id); }

    /// Throws std::invalid_argument naming the offending field if any
    /// invariant is violated (positive dims, positive spacing, HU range).
    void validate() const;

    bool operator==(const CTVolume& o) const = default;

private:
    size_t index(int y, int x, int z) const {
        return (static_cast<size_t>(z) * h_ + y) * w_ + x;
    }

    int h_ = 0, w_ = 0, d_ = 0;
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
    Modality modality_ = Modality::CBCT;
    std::string patient_id_;
    std::vector<int16_t> voxels_;
};

/// Loads a sidecar/raw pair. `path` may point at the .json sidecar, the
/// .raw payload, or the common stem; the pair is resolved either way.
CTVolume load_volume(const std::filesystem::path& path);

/// Writes sidecar + payload. Returns the sidecar path. The volume is
/// validated before anything is written.
std::filesystem::path save_volume(const CTVolume& vol, const std::filesystem::path& path);

}  // namespace ctxlate
