// Slice preparation chain: Otsu body masking, out-of-body HU replacement,
// clip/scale to [-1,1], and center cropping with optional jitter.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ctxlate/nn/tensor.hpp"
#include "ctxlate/volume.hpp"

namespace ctxlate {

/// Non-owning view of one axial slice in HU.
struct HUSliceView {
    const int16_t* data = nullptr;
    int h = 0, w = 0;
    int16_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
};

inline HUSliceView slice_view(const CTVolume& vol, int z) {
    return {vol.slice(z), vol.height(), vol.width()};
}

/// A 2D image in [-1,1], the tensor unit fed to the networks.
struct ScaledSlice {
    nn::Tensor pixels;  // (1, h, w)
    int height() const { return pixels.h(); }
    int width() const { return pixels.w(); }
};

/// Checks the ScaledSlice invariants (range and 8-divisibility). Network
/// entry points call this; loss functions accept arbitrary shapes.
void validate_network_input(const ScaledSlice& s);

struct BodyMask {
    std::vector<uint8_t> mask;  // 1 = inside body
    int h = 0, w = 0;
    int16_t source_threshold = 0;
    bool inside(int y, int x) const { return mask[static_cast<size_t>(y) * w + x] != 0; }
    size_t count_inside() const;
};

/// Threshold maximizing between-class variance on a 256-bin histogram over
/// the slice's HU range. Ties are broken by taking the midpoint of the
/// maximizing run. Throws std::invalid_argument on a constant slice.
int16_t otsu_threshold(const HUSliceView& slice);

/// Same histogram/threshold computation pooled over every slice of a volume.
int16_t otsu_threshold(const CTVolume& vol);

struct MaskOptions {
    bool largest_component = true;
    bool fill_holes = true;
    /// When set, use this threshold instead of per-slice Otsu (the
    /// per-volume mode precomputes one).
    std::optional<int16_t> threshold;
};

BodyMask make_body_mask(const HUSliceView& slice, const MaskOptions& opts = {});

/// Inside-mask voxels unchanged; outside-mask voxels exactly -1000 HU.
std::vector<int16_t> apply_body_mask(const HUSliceView& slice, const BodyMask& mask);

/// v -> (clamp(v, -500, 200) + 150) / 350, monotone into [-1,1].
double clip_and_scale_hu(double hu);
ScaledSlice clip_and_scale(const HUSliceView& slice);
ScaledSlice clip_and_scale(const nn::Tensor& hu_slice);

/// v -> 350*v - 150. Throws on input outside [-1,1].
double unscale_value(double scaled);
nn::Tensor unscale(const ScaledSlice& slice);

/// Scaled value of the -465 HU air threshold used by the air loss (-0.9).
inline float air_threshold_scaled() { return static_cast<float>(clip_and_scale_hu(-465.0)); }

struct CropSpec {
    int height = 384;
    int width = 480;
    int jitter = 16;  // max offset in px from the exact center
};

void validate_crop(const CropSpec& spec, int src_h, int src_w);

/// Top-left corner of the crop window for the given source size and seed.
/// jitter = 0 is the exact center crop; otherwise offsets are uniform in
/// [-jitter, jitter] per axis, deterministic under the seed.
std::pair<int, int> crop_origin(const CropSpec& spec, int src_h, int src_w, uint64_t seed);

nn::Tensor center_crop(const nn::Tensor& img, const CropSpec& spec, uint64_t seed);
std::vector<int16_t> center_crop(const HUSliceView& slice, const CropSpec& spec, uint64_t seed);

struct PreprocessOptions {
    MaskOptions mask;
    bool per_volume_otsu = false;
};

/// mask -> clip/scale. Cropping is applied separately so training can
/// re-draw the jitter per step. Degenerate (constant) slices get an
/// all-outside mask, i.e. they come out as constant -1 (air).
ScaledSlice preprocess_slice(const HUSliceView& slice, const PreprocessOptions& opts = {});

/// Rigid pre-alignment hook. Phantom data is aligned by construction, so
/// this is the identity; externally registered volumes can be slotted in
/// by replacing this call site.
inline CTVolume align_to_reference(CTVolume moving, const CTVolume& /*fixed*/) { return moving; }

}  // namespace ctxlate
