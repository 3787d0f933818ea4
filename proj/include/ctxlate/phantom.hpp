// Synthetic pelvic phantoms: labelled "truth" volumes with known tissue
// geometry, plus an artifact model that degrades them into pseudo-CBCT.
// Every voxel's class is known, so ROI statistics and air masks used by
// tests and evaluation are exact rather than estimated.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctxlate/volume.hpp"
#include "json.hpp"

namespace ctxlate::phantom {

enum class Tissue : uint8_t { kAir = 0, kMuscle, kFat, kProstate, kBladder, kBone };
constexpr int kTissueCount = 6;

std::string to_string(Tissue t);
Tissue tissue_from_string(const std::string& s);

struct TissueStats {
    float mean_hu = 0;
    float sd_hu = 0;
};

/// A painted tissue region, positioned relative to the body-ellipse center.
/// Regions are painted in list order over a muscle-filled body.
struct Region {
    enum class Shape { kEllipse, kShell, kCircle };
    Shape shape = Shape::kEllipse;
    Tissue tissue = Tissue::kMuscle;
    float dy = 0, dx = 0;      // center offset (ellipse, circle)
    float ax = 0, ay = 0;      // semi-axes in px (ellipse)
    float inner = 0, outer = 0;// body elliptical-norm band (shell)
    float r = 0;               // radius in px (circle)
    bool scale_with_z = false; // organ cross-section follows the z profile
    bool jitter = false;       // center offset receives per-patient jitter
};

struct PhantomSpec {
    int height = 128;
    int width = 160;
    int slices = 25;
    std::array<double, 3> spacing_mm{3.125, 3.125, 3.0};
    float body_ax = 48;  // body ellipse semi-axis along x, px
    float body_ay = 38;  // along y
    std::vector<Region> regions;
    std::array<TissueStats, kTissueCount> tissue_hu{};
    // Per-patient variation so patients are not copies of each other.
    float center_jitter_px = 2;
    float scale_jitter = 0.06f;
    float organ_jitter_px = 2;
    // Organs shrink toward the volume ends: scale = sqrt(1 - (dz/halfwidth)^2).
    float z_halfwidth = 16;
    uint64_t seed = 0;
};

/// Standard pelvic layout: fat rim, bladder, prostate, two bone cores,
/// tissue HU tuned to planning-CT soft-tissue statistics.
PhantomSpec default_phantom_spec();

struct DegradationSpec {
    /// Per-class HU shift, indexed by Tissue.
    std::array<float, kTissueCount> hu_bias{0, -190, -110, -194, -166, 0};
    float smoothing_sigma = 1.5f;   // in-body resolution loss, px
    float cupping_amplitude = 3;    // HU, radial shading
    int ring_count = 3;
    float ring_amplitude = 90;      // HU, at the body edge
    int streak_count = 6;
    float streak_amplitude = 55;    // HU, at the body edge
    float streak_width = 0.3f;      // angular sigma, radians
    float noise_sd = 30;            // HU, correlated noise
    float noise_corr = 2;           // correlation length, px
    uint64_t seed = 0;
};

/// Realized per-patient geometry after jitter, in canvas coordinates.
struct PatientGeometry {
    float cy = 0, cx = 0;  // body center
    float ax = 0, ay = 0;  // body semi-axes
    std::vector<Region> regions;
};

struct LabelVolume {
    int height = 0, width = 0, depth = 0;
    std::vector<uint8_t> voxels;  // Tissue per voxel, same layout as CTVolume
    uint8_t at(int y, int x, int z) const {
        return voxels[(static_cast<size_t>(z) * height + y) * width + x];
    }
};

/// A generated patient: HU truth, per-voxel labels, and the geometry the
/// labels were painted from. Labels live here, not in the volume file.
struct PhantomPatient {
    CTVolume truth;
    LabelVolume labels;
    PatientGeometry geometry;
};

/// Deterministic geometry for patient `index` under `spec.seed`.
PatientGeometry realize_geometry(const PhantomSpec& spec, uint64_t index);

/// Paints and noises one patient. Throws std::invalid_argument if a region
/// does not fit inside the body ellipse.
PhantomPatient generate_truth_patient(const PhantomSpec& spec, uint64_t index = 0);

/// Convenience wrapper returning only the HU volume for patient 0.
CTVolume generate_truth(const PhantomSpec& spec);

/// Applies bias, shading, rings, streaks and noise to a generated patient.
/// The air set {v < -465} of the truth is preserved exactly. Throws
/// std::invalid_argument if hu_bias would lift air voxels above -465.
CTVolume degrade_to_cbct(const PhantomPatient& patient, const DegradationSpec& spec,
                         uint64_t index = 0);

struct RoiBox {
    Tissue tissue = Tissue::kMuscle;
    int z = 0, y = 0, x = 0;  // top-left corner
    int size = 10;
};

/// Label-pure 10x10 ROI boxes for the four reported soft tissues, placed
/// from the realized geometry (muscle interior, fat rim, organ centers).
std::vector<RoiBox> roi_boxes(const PhantomPatient& patient);

/// Writes truth/CBCT pairs for `n_patients` plus manifest.json describing
/// files, seeds, geometry and ROI boxes. Returns the manifest.
nlohmann::json emit_dataset(int n_patients, const PhantomSpec& pspec,
                            const DegradationSpec& dspec,
                            const std::filesystem::path& out_dir);

}  // namespace ctxlate::phantom
