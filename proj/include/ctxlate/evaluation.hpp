// Quantitative evaluation: ROI HU statistics, volume histograms, the
// SelfSSIM no-reference sharpness score, cycle-difference maps, and the
// report/plot emitter that ties them to a dataset manifest.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxlate/nn/tensor.hpp"
#include "ctxlate/preprocess.hpp"
#include "ctxlate/volume.hpp"

namespace ctxlate::eval {

struct ROISpec {
    int slice = 0;
    int y = 0, x = 0;  // top-left corner
    int height = 10, width = 10;
    std::string tissue;
};

/// Throws std::out_of_range unless the ROI lies fully inside the volume.
void validate_roi(const ROISpec& roi, const CTVolume& vol);

struct RoiStats {
    double mean = 0;
    double sd = 0;  // population
};
RoiStats roi_stats(const CTVolume& vol, const ROISpec& roi);

struct Histogram {
    double lo = 0, hi = 0;
    std::vector<int64_t> counts;
    int bins() const { return int(counts.size()); }
};
/// Left-closed equal-width bins; out-of-range values land in the edge bins
/// so the counts always sum to the voxel count.
Histogram volume_histogram(const CTVolume& vol, int bins = 70, double lo = -500, double hi = 200);

/// Separable Gaussian blur, kernel truncated at radius round(3*sigma),
/// half-sample reflect boundary. Input is (1, h, w).
nn::Tensor gaussian_blur2d(const nn::Tensor& img, double sigma);

/// Clamp to [-500, 200] and rescale affinely to [0, 255].
nn::Tensor hu_to_display(const nn::Tensor& hu);
nn::Tensor hu_to_display(const HUSliceView& slice);

/// Mean SSIM between two images in display units [0, 255]: 11x11 Gaussian
/// window (sigma 1.5), K1=0.01, K2=0.03, L=255, reflect boundary.
double ssim(const nn::Tensor& a, const nn::Tensor& b);

/// SelfSSIM(img) = SSIM(img, blur(img, sigma=3)) on the display-scaled
/// image. High values mean the image is already blur-like (smooth); sharp
/// or noisy content scores lower. Throws if the image is under 11x11.
double self_ssim(const nn::Tensor& img_hu);

/// Pixelwise Sobel gradient magnitude of x_cyc minus that of x; flags
/// translation failures as structure invented or lost by the cycle.
nn::Tensor cycle_difference_image(const nn::Tensor& x, const nn::Tensor& x_cyc);

/// Dice overlap of the air masks (HU < -465) of two equal-shaped volumes.
double air_dice(const CTVolume& a, const CTVolume& b);

// ---------------------------------------------------------------- images

struct GrayImage {
    int h = 0, w = 0;
    std::vector<uint8_t> px;  // row-major
};
struct RgbImage {
    int h = 0, w = 0;
    std::vector<uint8_t> px;  // row-major, 3 bytes per pixel
    void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
        size_t i = 3 * (size_t(y) * w + x);
        px[i] = r;
        px[i + 1] = g;
        px[i + 2] = b;
    }
};
void write_png(const std::filesystem::path& path, const GrayImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);

/// Alternating 8x8-tile composite of two display-scaled images (alignment
/// check, after the paper's Fig. 3). `from_b` records per-pixel provenance.
struct Checkerboard {
    GrayImage image;
    std::vector<uint8_t> from_b;  // 1 where the pixel came from `b`
};
Checkerboard checkerboard_overlay(const nn::Tensor& a_hu, const nn::Tensor& b_hu, int tile = 8);

/// Signed map rendered symmetrically around mid-gray, peak-normalized.
GrayImage diff_to_gray(const nn::Tensor& diff);

/// Body-masked HU slice clamped to the clip range: the cycle-difference
/// baseline (keeps uncropped bone from registering as spurious gradient).
nn::Tensor masked_clipped_slice(const CTVolume& vol, int z, const MaskOptions& mask);

// ---------------------------------------------------------------- report

struct ReportJob {
    std::filesystem::path dataset_dir;  // must hold manifest.json
    std::filesystem::path checkpoint;
    std::filesystem::path out_dir;
    std::optional<CropSpec> crop;  // translation window; default: trained crop
    bool full_canvas = false;      // translate whole slices (padded) instead
    bool per_volume_otsu = false;
    bool write_json = true;
    bool write_csv = true;
    bool write_plots = true;
    int ssim_rois = 30;
    int ssim_roi_size = 48;
};

/// Translates every CBCT in the manifest, computes the full metric set
/// against truth, writes report.json / roi_stats.csv / PNG plots into
/// out_dir, and returns the report. Throws on unreadable inputs.
nlohmann::json emit_report(const ReportJob& job);

}  // namespace ctxlate::eval
