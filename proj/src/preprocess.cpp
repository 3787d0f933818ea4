#include "ctxlate/preprocess.hpp"

#include "ctxlate/nn/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace ctxlate {

namespace {

constexpr int kOtsuBins = 256;

struct Histogram {
    std::array<int64_t, kOtsuBins> counts{};
    int16_t lo = 0;
    int32_t range = 1;  // hi - lo + 1
    int bin_of(int16_t v) const {
        return static_cast<int>((static_cast<int64_t>(v) - lo) * kOtsuBins / range);
    }
    /// Largest HU value mapping into bin t (the threshold semantics:
    /// inside-body means value > threshold).
    int16_t upper_hu(int t) const {
        int64_t edge = ((static_cast<int64_t>(t) + 1) * range + kOtsuBins - 1) / kOtsuBins;  // ceil
        return static_cast<int16_t>(lo + edge - 1);
    }
};

void accumulate(Histogram& h, const HUSliceView& s) {
    const size_t n = static_cast<size_t>(s.h) * s.w;
    for (size_t i = 0; i < n; ++i) ++h.counts[h.bin_of(s.data[i])];
}

int16_t otsu_from_histogram(const Histogram& h) {
    // Cumulative zeroth/first moments, then scan all split points for the
    // maximum between-class variance. Ties resolve to the midpoint of the
    // maximizing run so a two-spike histogram thresholds between the spikes.
    int64_t total = 0;
    double total_mu = 0.0;
    for (int b = 0; b < kOtsuBins; ++b) {
        total += h.counts[b];
        total_mu += static_cast<double>(h.counts[b]) * b;
    }
    int64_t w0 = 0;
    double mu0 = 0.0;
    double best = -1.0;
    int first_best = -1, last_best = -1;
    for (int t = 0; t < kOtsuBins - 1; ++t) {
        w0 += h.counts[t];
        mu0 += static_cast<double>(h.counts[t]) * t;
        const int64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double m0 = mu0 / static_cast<double>(w0);
        const double m1 = (total_mu - mu0) / static_cast<double>(w1);
        const double sigma_b = static_cast<double>(w0) * static_cast<double>(w1) * (m0 - m1) * (m0 - m1);
        if (sigma_b > best) {
            best = sigma_b;
            first_best = last_best = t;
        } else if (sigma_b == best) {
            last_best = t;
        }
    }
    if (first_best < 0) throw std::invalid_argument("otsu_threshold: degenerate (constant) input");
    return h.upper_hu((first_best + last_best) / 2);
}

Histogram histogram_for(const HUSliceView& s) {
    const size_t n = static_cast<size_t>(s.h) * s.w;
    if (n == 0) throw std::invalid_argument("otsu_threshold: empty slice");
    auto [mn, mx] = std::minmax_element(s.data, s.data + n);
    if (*mn == *mx) throw std::invalid_argument("otsu_threshold: degenerate (constant) input");
    Histogram h;
    h.lo = *mn;
    h.range = static_cast<int32_t>(*mx) - *mn + 1;
    accumulate(h, s);
    return h;
}

}  // namespace

size_t BodyMask::count_inside() const {
    return static_cast<size_t>(std::count(mask.begin(), mask.end(), uint8_t{1}));
}

int16_t otsu_threshold(const HUSliceView& slice) {
    return otsu_from_histogram(histogram_for(slice));
}

int16_t otsu_threshold(const CTVolume& vol) {
    int16_t mn = kHuMax, mx = kHuMin;
    for (int16_t v : vol.voxels()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    if (mn == mx) throw std::invalid_argument("otsu_threshold: degenerate (constant) input");
    Histogram h;
    h.lo = mn;
    h.range = static_cast<int32_t>(mx) - mn + 1;
    for (int z = 0; z < vol.depth(); ++z) accumulate(h, slice_view(vol, z));
    return otsu_from_histogram(h);
}

namespace {

/// Keeps only the largest 8-connected true component.
void keep_largest_component(std::vector<uint8_t>& m, int h, int w) {
    std::vector<int32_t> label(m.size(), 0);
    int32_t next = 0;
    size_t best_size = 0;
    int32_t best_label = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            if (!m[i] || label[i]) continue;
            ++next;
            size_t count = 0;
            label[i] = next;
            queue.emplace_back(y, x);
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                ++count;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const size_t ni = static_cast<size_t>(ny) * w + nx;
                        if (m[ni] && !label[ni]) {
                            label[ni] = next;
                            queue.emplace_back(ny, nx);
                        }
                    }
                }
            }
            if (count > best_size) {
                best_size = count;
                best_label = next;
            }
        }
    }
    if (best_label == 0) return;
    for (size_t i = 0; i < m.size(); ++i) m[i] = (label[i] == best_label) ? 1 : 0;
}

/// Background is whatever false region touches the border; everything else
/// that is false is an interior hole and gets filled.
void fill_holes(std::vector<uint8_t>& m, int h, int w) {
    std::vector<uint8_t> outside(m.size(), 0);
    std::deque<std::pair<int, int>> queue;
    auto push = [&](int y, int x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        if (!m[i] && !outside[i]) {
            outside[i] = 1;
            queue.emplace_back(y, x);
        }
    };
    for (int x = 0; x < w; ++x) {
        push(0, x);
        push(h - 1, x);
    }
    for (int y = 0; y < h; ++y) {
        push(y, 0);
        push(y, w - 1);
    }
    while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        if (y > 0) push(y - 1, x);
        if (y + 1 < h) push(y + 1, x);
        if (x > 0) push(y, x - 1);
        if (x + 1 < w) push(y, x + 1);
    }
    for (size_t i = 0; i < m.size(); ++i)
        if (!m[i] && !outside[i]) m[i] = 1;
}

}  // namespace

BodyMask make_body_mask(const HUSliceView& slice, const MaskOptions& opts) {
    BodyMask bm;
    bm.h = slice.h;
    bm.w = slice.w;
    bm.source_threshold = opts.threshold ? *opts.threshold : otsu_threshold(slice);
    bm.mask.resize(static_cast<size_t>(slice.h) * slice.w);
    const size_t n = bm.mask.size();
    for (size_t i = 0; i < n; ++i) bm.mask[i] = slice.data[i] > bm.source_threshold ? 1 : 0;
    if (opts.largest_component) keep_largest_component(bm.mask, bm.h, bm.w);
    if (opts.fill_holes) fill_holes(bm.mask, bm.h, bm.w);
    return bm;
}

std::vector<int16_t> apply_body_mask(const HUSliceView& slice, const BodyMask& mask) {
    if (slice.h != mask.h || slice.w != mask.w)
        throw std::invalid_argument("apply_body_mask: slice is " + std::to_string(slice.h) + "x" +
                                    std::to_string(slice.w) + " but mask is " +
                                    std::to_string(mask.h) + "x" + std::to_string(mask.w));
    std::vector<int16_t> out(static_cast<size_t>(slice.h) * slice.w);
    for (size_t i = 0; i < out.size(); ++i) out[i] = mask.mask[i] ? slice.data[i] : kHuAir;
    return out;
}

double clip_and_scale_hu(double hu) {
    const double v = std::clamp(hu, -500.0, 200.0);
    return (v + 150.0) / 350.0;
}

ScaledSlice clip_and_scale(const HUSliceView& slice) {
    ScaledSlice out{nn::Tensor(1, slice.h, slice.w)};
    const size_t n = static_cast<size_t>(slice.h) * slice.w;
    float* dst = out.pixels.data();
    for (size_t i = 0; i < n; ++i) {
        const float v = std::clamp(static_cast<float>(slice.data[i]), -500.f, 200.f);
        dst[i] = (v + 150.f) / 350.f;
    }
    return out;
}

ScaledSlice clip_and_scale(const nn::Tensor& hu_slice) {
    ScaledSlice out{nn::Tensor(hu_slice.c(), hu_slice.h(), hu_slice.w())};
    for (int i = 0; i < hu_slice.size(); ++i) {
        const float v = std::clamp(hu_slice[size_t(i)], -500.f, 200.f);
        out.pixels[size_t(i)] = (v + 150.f) / 350.f;
    }
    return out;
}

double unscale_value(double scaled) {
    if (scaled < -1.0 || scaled > 1.0)
        throw std::invalid_argument("unscale: value " + std::to_string(scaled) +
                                    " outside [-1,1]");
    return 350.0 * scaled - 150.0;
}

nn::Tensor unscale(const ScaledSlice& slice) {
    nn::Tensor out(1, slice.height(), slice.width());
    for (int i = 0; i < out.size(); ++i) {
        const float v = slice.pixels[size_t(i)];
        if (v < -1.f || v > 1.f)
            throw std::invalid_argument("unscale: pixel outside [-1,1]");
        out[size_t(i)] = 350.f * v - 150.f;
    }
    return out;
}

void validate_network_input(const ScaledSlice& s) {
    if (s.height() % 8 != 0 || s.width() % 8 != 0)
        throw std::invalid_argument("network input dims must be divisible by 8, got " +
                                    std::to_string(s.height()) + "x" + std::to_string(s.width()));
    for (int i = 0; i < s.pixels.size(); ++i)
        if (s.pixels[size_t(i)] < -1.f || s.pixels[size_t(i)] > 1.f)
            throw std::invalid_argument("network input pixels must lie in [-1,1]");
}

void validate_crop(const CropSpec& spec, int src_h, int src_w) {
    if (spec.height <= 0 || spec.width <= 0 || spec.jitter < 0)
        throw std::invalid_argument("CropSpec: height/width must be positive, jitter >= 0");
    if (spec.height % 8 != 0 || spec.width % 8 != 0)
        throw std::invalid_argument("CropSpec: height and width must be divisible by 8");
    const int base_y = (src_h - spec.height) / 2;
    const int base_x = (src_w - spec.width) / 2;
    if (base_y - spec.jitter < 0 || base_y + spec.jitter + spec.height > src_h ||
        base_x - spec.jitter < 0 || base_x + spec.jitter + spec.width > src_w)
        throw std::invalid_argument("CropSpec: " + std::to_string(spec.height) + "x" +
                                    std::to_string(spec.width) + " crop with jitter " +
                                    std::to_string(spec.jitter) + " does not fit in " +
                                    std::to_string(src_h) + "x" + std::to_string(src_w));
}

std::pair<int, int> crop_origin(const CropSpec& spec, int src_h, int src_w, uint64_t seed) {
    validate_crop(spec, src_h, src_w);
    int y = (src_h - spec.height) / 2;
    int x = (src_w - spec.width) / 2;
    if (spec.jitter > 0) {
        nn::Rng rng = nn::derive_rng(seed, "crop-jitter");
        y += int(rng.uniform_int(-spec.jitter, spec.jitter));
        x += int(rng.uniform_int(-spec.jitter, spec.jitter));
    }
    return {y, x};
}

nn::Tensor center_crop(const nn::Tensor& img, const CropSpec& spec, uint64_t seed) {
    auto [oy, ox] = crop_origin(spec, img.h(), img.w(), seed);
    nn::Tensor out(img.c(), spec.height, spec.width);
    for (int ci = 0; ci < img.c(); ++ci)
        for (int y = 0; y < spec.height; ++y)
            std::copy_n(img.row(ci, oy + y) + ox, spec.width, out.row(ci, y));
    return out;
}

std::vector<int16_t> center_crop(const HUSliceView& slice, const CropSpec& spec, uint64_t seed) {
    auto [oy, ox] = crop_origin(spec, slice.h, slice.w, seed);
    std::vector<int16_t> out(static_cast<size_t>(spec.height) * spec.width);
    for (int y = 0; y < spec.height; ++y)
        std::copy_n(slice.data + static_cast<size_t>(oy + y) * slice.w + ox, spec.width,
                    out.data() + static_cast<size_t>(y) * spec.width);
    return out;
}

ScaledSlice preprocess_slice(const HUSliceView& slice, const PreprocessOptions& opts) {
    std::vector<int16_t> masked;
    try {
        const BodyMask bm = make_body_mask(slice, opts.mask);
        masked = apply_body_mask(slice, bm);
    } catch (const std::invalid_argument&) {
        masked.assign(static_cast<size_t>(slice.h) * slice.w, kHuAir);
    }
    return clip_and_scale(HUSliceView{masked.data(), slice.h, slice.w});
}

}  // namespace ctxlate
