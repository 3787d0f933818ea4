#include "ctxlate/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <png.h>

#include "ctxlate/losses.hpp"

namespace ctxlate::eval {
namespace {

int reflect(int i, int n) {  // half-sample reflect, matches the blur in use
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
    return i;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
    std::vector<double> k(size_t(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[size_t(i + radius)];
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Separable correlation with a symmetric 1D kernel, reflect boundary.
nn::Tensor filter2d(const nn::Tensor& img, const std::vector<double>& k) {
    const int h = img.h(), w = img.w(), r = int(k.size() / 2);
    nn::Tensor mid(1, h, w), out(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += k[size_t(i + r)] * img.at(0, y, reflect(x + i, w));
            mid.at(0, y, x) = float(acc);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += k[size_t(i + r)] * mid.at(0, reflect(y + i, h), x);
            out.at(0, y, x) = float(acc);
        }
    return out;
}

void require_single_plane(const nn::Tensor& t, const char* who) {
    if (t.c() != 1) throw std::invalid_argument(std::string(who) + ": expected a (1,h,w) tensor");
}

}  // namespace

void validate_roi(const ROISpec& roi, const CTVolume& vol) {
    if (roi.height <= 0 || roi.width <= 0)
        throw std::out_of_range("ROI: height/width must be positive");
    if (roi.slice < 0 || roi.slice >= vol.depth() || roi.y < 0 || roi.x < 0 ||
        roi.y + roi.height > vol.height() || roi.x + roi.width > vol.width())
        throw std::out_of_range("ROI at z=" + std::to_string(roi.slice) + " (" +
                                std::to_string(roi.y) + "," + std::to_string(roi.x) + ") " +
                                std::to_string(roi.height) + "x" + std::to_string(roi.width) +
                                " exceeds volume bounds");
}

RoiStats roi_stats(const CTVolume& vol, const ROISpec& roi) {
    validate_roi(roi, vol);
    const double n = double(roi.height) * roi.width;
    double sum = 0;
    for (int y = roi.y; y < roi.y + roi.height; ++y)
        for (int x = roi.x; x < roi.x + roi.width; ++x) sum += vol.at(y, x, roi.slice);
    const double mean = sum / n;
    double ss = 0;  // two-pass: exact agreement with the brute-force oracle
    for (int y = roi.y; y < roi.y + roi.height; ++y)
        for (int x = roi.x; x < roi.x + roi.width; ++x) {
            const double d = vol.at(y, x, roi.slice) - mean;
            ss += d * d;
        }
    return {mean, std::sqrt(ss / n)};
}

Histogram volume_histogram(const CTVolume& vol, int bins, double lo, double hi) {
    if (bins < 2) throw std::invalid_argument("volume_histogram: bins must be >= 2");
    if (!(lo < hi)) throw std::invalid_argument("volume_histogram: range must satisfy lo < hi");
    Histogram h{lo, hi, std::vector<int64_t>(size_t(bins), 0)};
    const double scale = bins / (hi - lo);
    for (int16_t v : vol.voxels()) {
        int i = int(std::floor((v - lo) * scale));
        h.counts[size_t(std::clamp(i, 0, bins - 1))]++;
    }
    return h;
}

nn::Tensor gaussian_blur2d(const nn::Tensor& img, double sigma) {
    require_single_plane(img, "gaussian_blur2d");
    if (sigma <= 0) throw std::invalid_argument("gaussian_blur2d: sigma must be positive");
    const int radius = int(std::lround(3 * sigma));
    return filter2d(img, gaussian_kernel(sigma, radius));
}

nn::Tensor hu_to_display(const nn::Tensor& hu) {
    require_single_plane(hu, "hu_to_display");
    nn::Tensor out(1, hu.h(), hu.w());
    for (int i = 0; i < hu.size(); ++i) {
        const float v = std::clamp(hu[size_t(i)], -500.f, 200.f);
        out[size_t(i)] = (v + 500.f) * (255.f / 700.f);
    }
    return out;
}

nn::Tensor hu_to_display(const HUSliceView& slice) {
    nn::Tensor hu(1, slice.h, slice.w);
    for (int y = 0; y < slice.h; ++y)
        for (int x = 0; x < slice.w; ++x) hu.at(0, y, x) = float(slice.at(y, x));
    return hu_to_display(hu);
}

double ssim(const nn::Tensor& a, const nn::Tensor& b) {
    require_single_plane(a, "ssim");
    if (a.c() != b.c() || a.h() != b.h() || a.w() != b.w())
        throw std::invalid_argument("ssim: shape mismatch");
    if (a.h() < 11 || a.w() < 11)
        throw std::invalid_argument("ssim: image must be at least 11x11 (window size)");

    const std::vector<double> win = gaussian_kernel(1.5, 5);  // 11-tap window
    nn::Tensor aa(1, a.h(), a.w()), bb(1, a.h(), a.w()), ab(1, a.h(), a.w());
    for (int i = 0; i < a.size(); ++i) {
        aa[size_t(i)] = a[size_t(i)] * a[size_t(i)];
        bb[size_t(i)] = b[size_t(i)] * b[size_t(i)];
        ab[size_t(i)] = a[size_t(i)] * b[size_t(i)];
    }
    const nn::Tensor mu_a = filter2d(a, win), mu_b = filter2d(b, win);
    const nn::Tensor m_aa = filter2d(aa, win), m_bb = filter2d(bb, win), m_ab = filter2d(ab, win);

    constexpr double kC1 = (0.01 * 255) * (0.01 * 255);
    constexpr double kC2 = (0.03 * 255) * (0.03 * 255);
    double total = 0;
    for (int i = 0; i < a.size(); ++i) {
        const double ma = mu_a[size_t(i)], mb = mu_b[size_t(i)];
        const double va = m_aa[size_t(i)] - ma * ma;
        const double vb = m_bb[size_t(i)] - mb * mb;
        const double cov = m_ab[size_t(i)] - ma * mb;
        total += (2 * ma * mb + kC1) * (2 * cov + kC2) /
                 ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    return total / a.size();
}

double self_ssim(const nn::Tensor& img_hu) {
    const nn::Tensor disp = hu_to_display(img_hu);
    if (disp.h() < 11 || disp.w() < 11)
        throw std::invalid_argument("self_ssim: image must be at least 11x11");
    return ssim(disp, gaussian_blur2d(disp, 3.0));
}

nn::Tensor cycle_difference_image(const nn::Tensor& x, const nn::Tensor& x_cyc) {
    require_single_plane(x, "cycle_difference_image");
    if (x.c() != x_cyc.c() || x.h() != x_cyc.h() || x.w() != x_cyc.w())
        throw std::invalid_argument("cycle_difference_image: shape mismatch");
    nn::Tensor g1(1, x.h(), x.w()), g2(1, x.h(), x.w());
    nn::Tensor out(1, x.h(), x.w());
    sobel_gradients(x_cyc, g1, g2);
    for (int i = 0; i < out.size(); ++i)
        out[size_t(i)] = std::hypot(g1[size_t(i)], g2[size_t(i)]);
    sobel_gradients(x, g1, g2);
    for (int i = 0; i < out.size(); ++i)
        out[size_t(i)] -= std::hypot(g1[size_t(i)], g2[size_t(i)]);
    return out;
}

double air_dice(const CTVolume& a, const CTVolume& b) {
    if (a.height() != b.height() || a.width() != b.width() || a.depth() != b.depth())
        throw std::invalid_argument("air_dice: volume shapes differ");
    constexpr int16_t kAirBelow = -465;
    int64_t na = 0, nb = 0, both = 0;
    for (size_t i = 0; i < a.voxels().size(); ++i) {
        const bool ia = a.voxels()[i] < kAirBelow;
        const bool ib = b.voxels()[i] < kAirBelow;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(both) / double(na + nb);
}

namespace {

void write_png_impl(const std::filesystem::path& path, int h, int w, int color_type,
                    const uint8_t* data, size_t stride) {
    std::FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw std::runtime_error("write_png: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("write_png: encode failed for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(data + size_t(y) * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace

void write_png(const std::filesystem::path& path, const GrayImage& img) {
    if (img.h <= 0 || img.w <= 0 || img.px.size() != size_t(img.h) * img.w)
        throw std::invalid_argument("write_png: malformed gray image");
    write_png_impl(path, img.h, img.w, PNG_COLOR_TYPE_GRAY, img.px.data(), size_t(img.w));
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
    if (img.h <= 0 || img.w <= 0 || img.px.size() != 3 * size_t(img.h) * img.w)
        throw std::invalid_argument("write_png: malformed rgb image");
    write_png_impl(path, img.h, img.w, PNG_COLOR_TYPE_RGB, img.px.data(), 3 * size_t(img.w));
}

Checkerboard checkerboard_overlay(const nn::Tensor& a_hu, const nn::Tensor& b_hu, int tile) {
    if (tile < 1) throw std::invalid_argument("checkerboard_overlay: tile must be >= 1");
    if (a_hu.h() != b_hu.h() || a_hu.w() != b_hu.w())
        throw std::invalid_argument("checkerboard_overlay: shape mismatch");
    const nn::Tensor da = hu_to_display(a_hu), db = hu_to_display(b_hu);
    Checkerboard cb;
    cb.image.h = a_hu.h();
    cb.image.w = a_hu.w();
    cb.image.px.resize(size_t(cb.image.h) * cb.image.w);
    cb.from_b.resize(cb.image.px.size());
    for (int y = 0; y < cb.image.h; ++y)
        for (int x = 0; x < cb.image.w; ++x) {
            const bool use_b = ((y / tile) + (x / tile)) % 2 == 1;
            const size_t i = size_t(y) * cb.image.w + x;
            cb.from_b[i] = use_b;
            cb.image.px[i] = uint8_t(std::lround(use_b ? db.at(0, y, x) : da.at(0, y, x)));
        }
    return cb;
}

}  // namespace ctxlate::eval
