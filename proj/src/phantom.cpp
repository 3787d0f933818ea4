#include "ctxlate/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "ctxlate/nn/rng.hpp"

namespace ctxlate::phantom {

using nn::Rng;
using nn::derive_rng;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr float kPi = std::numbers::pi_v<float>;
constexpr int16_t kAirBoundaryHu = -465;

float uniform_in(Rng& rng, float lo, float hi) {
    return lo + static_cast<float>(rng.uniform()) * (hi - lo);
}

std::string patient_name(uint64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "phantom_%03llu",
                  static_cast<unsigned long long>(index));
    return buf;
}

/// Organ cross-section scale at slice z.
float z_scale(const PhantomSpec& spec, int z) {
    const float dz = (static_cast<float>(z) - (spec.slices - 1) / 2.0f) / spec.z_halfwidth;
    return std::sqrt(std::max(0.0f, 1.0f - dz * dz));
}

/// Squared body elliptical norm of canvas point (y, x).
float body_norm2(const PatientGeometry& g, float y, float x) {
    const float nx = (x - g.cx) / g.ax;
    const float ny = (y - g.cy) / g.ay;
    return nx * nx + ny * ny;
}

bool region_contains(const Region& r, const PatientGeometry& g, float y, float x,
                     float norm2, float zs) {
    const float s = r.scale_with_z ? zs : 1.0f;
    switch (r.shape) {
        case Region::Shape::kShell: {
            const float n = std::sqrt(norm2);
            return n > r.inner && n <= r.outer;
        }
        case Region::Shape::kEllipse: {
            if (s <= 0) return false;
            const float ex = (x - g.cx - r.dx) / (r.ax * s);
            const float ey = (y - g.cy - r.dy) / (r.ay * s);
            return ex * ex + ey * ey <= 1.0f;
        }
        case Region::Shape::kCircle: {
            const float dx = x - g.cx - r.dx;
            const float dy = y - g.cy - r.dy;
            return dx * dx + dy * dy <= r.r * r.r * s * s;
        }
    }
    return false;
}

void check_region_fits(const Region& r, const PatientGeometry& g) {
    auto fits = [&](float dy, float dx, float ry, float rx) {
        // The bounding-box corner has the largest body norm, so this bound
        // is conservative for the inscribed ellipse/circle.
        const float nx = (std::abs(dx) + rx) / g.ax;
        const float ny = (std::abs(dy) + ry) / g.ay;
        return nx * nx + ny * ny <= 1.0f;
    };
    bool ok = true;
    switch (r.shape) {
        case Region::Shape::kShell:
            ok = r.inner >= 0 && r.inner < r.outer && r.outer <= 1.0f;
            break;
        case Region::Shape::kEllipse: ok = fits(r.dy, r.dx, r.ay, r.ax); break;
        case Region::Shape::kCircle: ok = fits(r.dy, r.dx, r.r, r.r); break;
    }
    if (!ok)
        throw std::invalid_argument("phantom: " + to_string(r.tissue) +
                                    " region does not fit inside the body ellipse");
}

void paint_labels(const PhantomSpec& spec, const PatientGeometry& g, LabelVolume& lab) {
    lab.height = spec.height;
    lab.width = spec.width;
    lab.depth = spec.slices;
    lab.voxels.assign(static_cast<size_t>(spec.height) * spec.width * spec.slices,
                      static_cast<uint8_t>(Tissue::kAir));
    for (int z = 0; z < spec.slices; ++z) {
        const float zs = z_scale(spec, z);
        uint8_t* plane = lab.voxels.data() + static_cast<size_t>(z) * spec.height * spec.width;
        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                const float n2 = body_norm2(g, static_cast<float>(y), static_cast<float>(x));
                if (n2 > 1.0f) continue;
                Tissue t = Tissue::kMuscle;
                for (const Region& r : g.regions)
                    if (region_contains(r, g, static_cast<float>(y), static_cast<float>(x),
                                        n2, zs))
                        t = r.tissue;
                plane[static_cast<size_t>(y) * spec.width + x] = static_cast<uint8_t>(t);
            }
        }
    }
}

/// Separable Gaussian with half-sample reflection at the borders, kernel
/// truncated at 4 sigma.
class GaussianBlur {
public:
    explicit GaussianBlur(float sigma) {
        const int radius = static_cast<int>(4.0f * sigma + 0.5f);
        kernel_.resize(2 * radius + 1);
        double sum = 0;
        for (int i = -radius; i <= radius; ++i)
            sum += kernel_[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        for (double& k : kernel_) k /= sum;
        radius_ = radius;
    }

    void apply(std::vector<float>& img, int h, int w, std::vector<float>& tmp) const {
        tmp.resize(img.size());
        auto reflect = [](int i, int n) {
            while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
            return i;
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int k = -radius_; k <= radius_; ++k)
                    acc += kernel_[k + radius_] *
                           img[static_cast<size_t>(y) * w + reflect(x + k, w)];
                tmp[static_cast<size_t>(y) * w + x] = static_cast<float>(acc);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int k = -radius_; k <= radius_; ++k)
                    acc += kernel_[k + radius_] *
                           tmp[static_cast<size_t>(reflect(y + k, h)) * w + x];
                img[static_cast<size_t>(y) * w + x] = static_cast<float>(acc);
            }
    }

private:
    std::vector<double> kernel_;
    int radius_ = 0;
};

/// Blur restricted to the body: air never bleeds in, the body/air edge
/// stays where the labels put it.
void masked_blur(std::vector<float>& img, const std::vector<uint8_t>& body, int h, int w,
                 float sigma) {
    const GaussianBlur blur(sigma);
    std::vector<float> num(img.size()), den(img.size()), tmp;
    for (size_t i = 0; i < img.size(); ++i) {
        num[i] = body[i] ? img[i] : 0.0f;
        den[i] = body[i] ? 1.0f : 0.0f;
    }
    blur.apply(num, h, w, tmp);
    blur.apply(den, h, w, tmp);
    for (size_t i = 0; i < img.size(); ++i)
        if (body[i] && den[i] > 1e-6f) img[i] = num[i] / den[i];
}

}  // namespace

std::string to_string(Tissue t) {
    switch (t) {
        case Tissue::kAir: return "air";
        case Tissue::kMuscle: return "muscle";
        case Tissue::kFat: return "fat";
        case Tissue::kProstate: return "prostate";
        case Tissue::kBladder: return "bladder";
        case Tissue::kBone: return "bone";
    }
    throw std::invalid_argument("unknown tissue");
}

Tissue tissue_from_string(const std::string& s) {
    for (int i = 0; i < kTissueCount; ++i)
        if (to_string(static_cast<Tissue>(i)) == s) return static_cast<Tissue>(i);
    throw std::invalid_argument("unknown tissue: " + s);
}

PhantomSpec default_phantom_spec() {
    PhantomSpec spec;
    spec.tissue_hu[static_cast<int>(Tissue::kAir)] = {-1000, 0};
    spec.tissue_hu[static_cast<int>(Tissue::kMuscle)] = {52, 14};
    spec.tissue_hu[static_cast<int>(Tissue::kFat)] = {-104, 13};
    spec.tissue_hu[static_cast<int>(Tissue::kProstate)] = {33, 23};
    spec.tissue_hu[static_cast<int>(Tissue::kBladder)] = {8, 18};
    spec.tissue_hu[static_cast<int>(Tissue::kBone)] = {400, 25};

    Region fat;
    fat.shape = Region::Shape::kShell;
    fat.tissue = Tissue::kFat;
    fat.inner = 0.70f;
    fat.outer = 1.0f;
    spec.regions.push_back(fat);

    Region bladder;
    bladder.shape = Region::Shape::kEllipse;
    bladder.tissue = Tissue::kBladder;
    bladder.dy = -10;
    bladder.ax = 13;
    bladder.ay = 10;
    bladder.scale_with_z = true;
    bladder.jitter = true;
    spec.regions.push_back(bladder);

    Region prostate = bladder;
    prostate.tissue = Tissue::kProstate;
    prostate.dy = 12;
    prostate.ax = 10;
    prostate.ay = 8;
    spec.regions.push_back(prostate);

    Region bone;
    bone.shape = Region::Shape::kCircle;
    bone.tissue = Tissue::kBone;
    bone.dy = 14;
    bone.r = 5;
    for (float dx : {-30.0f, 30.0f}) {
        bone.dx = dx;
        spec.regions.push_back(bone);
    }
    return spec;
}

PatientGeometry realize_geometry(const PhantomSpec& spec, uint64_t index) {
    Rng rng = derive_rng(spec.seed, "phantom.geometry", index);
    PatientGeometry g;
    const float cj = spec.center_jitter_px;
    g.cy = spec.height / 2.0f + uniform_in(rng, -cj, cj);
    g.cx = spec.width / 2.0f + uniform_in(rng, -cj, cj);
    g.ax = spec.body_ax * (1.0f + uniform_in(rng, -spec.scale_jitter, spec.scale_jitter));
    g.ay = spec.body_ay * (1.0f + uniform_in(rng, -spec.scale_jitter, spec.scale_jitter));
    g.regions = spec.regions;
    const float oj = spec.organ_jitter_px;
    for (Region& r : g.regions) {
        if (!r.jitter) continue;
        r.dy += uniform_in(rng, -oj, oj);
        r.dx += uniform_in(rng, -oj, oj);
    }
    return g;
}

PhantomPatient generate_truth_patient(const PhantomSpec& spec, uint64_t index) {
    if (spec.height <= 0 || spec.width <= 0 || spec.slices <= 0)
        throw std::invalid_argument("phantom: canvas dimensions must be positive");
    PhantomPatient p;
    p.geometry = realize_geometry(spec, index);
    for (const Region& r : p.geometry.regions) check_region_fits(r, p.geometry);
    paint_labels(spec, p.geometry, p.labels);

    p.truth = CTVolume(spec.height, spec.width, spec.slices, spec.spacing_mm,
                       Modality::PhantomTruth, patient_name(index));
    for (int z = 0; z < spec.slices; ++z) {
        Rng rng = derive_rng(spec.seed, "phantom.noise", index, static_cast<uint64_t>(z));
        int16_t* plane = p.truth.slice(z);
        const uint8_t* lab = p.labels.voxels.data() +
                             static_cast<size_t>(z) * spec.height * spec.width;
        for (int i = 0; i < spec.height * spec.width; ++i) {
            if (lab[i] == static_cast<uint8_t>(Tissue::kAir)) {
                plane[i] = kHuAir;
                continue;
            }
            const TissueStats& ts = spec.tissue_hu[lab[i]];
            const float v = ts.sd_hu > 0 ? rng.normal(ts.mean_hu, ts.sd_hu) : ts.mean_hu;
            plane[i] = static_cast<int16_t>(
                std::clamp<long>(std::lround(v), kHuMin, kHuMax));
        }
    }
    return p;
}

CTVolume generate_truth(const PhantomSpec& spec) {
    return generate_truth_patient(spec, 0).truth;
}

CTVolume degrade_to_cbct(const PhantomPatient& patient, const DegradationSpec& spec,
                         uint64_t index) {
    const float air_bias = spec.hu_bias[static_cast<int>(Tissue::kAir)];
    if (kHuAir + air_bias >= kAirBoundaryHu)
        throw std::invalid_argument(
            "degrade_to_cbct: air hu_bias lifts air to or above -465 HU");

    const CTVolume& truth = patient.truth;
    const int h = truth.height(), w = truth.width();
    CTVolume out(h, w, truth.depth(), truth.spacing(), Modality::PhantomCBCT,
                 truth.patient_id());
    const PatientGeometry& g = patient.geometry;

    std::vector<float> f(static_cast<size_t>(h) * w), noise;
    std::vector<uint8_t> body(f.size());
    std::vector<float> tmp;
    for (int z = 0; z < truth.depth(); ++z) {
        const int16_t* in = truth.slice(z);
        const uint8_t* lab = patient.labels.voxels.data() + static_cast<size_t>(z) * h * w;
        for (size_t i = 0; i < f.size(); ++i) {
            f[i] = in[i];
            body[i] = lab[i] != static_cast<uint8_t>(Tissue::kAir);
        }
        if (spec.smoothing_sigma > 0) masked_blur(f, body, h, w, spec.smoothing_sigma);
        for (size_t i = 0; i < f.size(); ++i) f[i] += spec.hu_bias[lab[i]];

        Rng rng = derive_rng(spec.seed, "degrade.slice", index, static_cast<uint64_t>(z));
        const float phase = uniform_in(rng, 0, 2 * kPi);
        std::vector<float> angles(spec.streak_count), signs(spec.streak_count);
        for (float& a : angles) a = uniform_in(rng, -kPi, kPi);
        for (float& s : signs) s = rng.uniform_int(0, 1) ? 1.0f : -1.0f;
        if (spec.noise_sd > 0) {
            noise.resize(f.size());
            for (float& v : noise) v = rng.normal(0, 1);
            if (spec.noise_corr > 0) GaussianBlur(spec.noise_corr).apply(noise, h, w, tmp);
            double mean = 0, var = 0;
            for (float v : noise) mean += v;
            mean /= static_cast<double>(noise.size());
            for (float v : noise) var += (v - mean) * (v - mean);
            var /= static_cast<double>(noise.size());
            const float scale = var > 0 ? spec.noise_sd / static_cast<float>(std::sqrt(var))
                                        : 0.0f;
            for (float& v : noise) v = (v - static_cast<float>(mean)) * scale;
        }

        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t i = static_cast<size_t>(y) * w + x;
                if (!body[i]) continue;
                const float n2 = body_norm2(g, static_cast<float>(y), static_cast<float>(x));
                const float n = std::sqrt(n2);
                const float env = n2 * n2;
                float a = spec.cupping_amplitude * (n2 - 0.5f);
                a += spec.ring_amplitude * env *
                     std::sin(2 * kPi * static_cast<float>(spec.ring_count) * n + phase);
                const float theta = std::atan2(static_cast<float>(y) - g.cy,
                                               static_cast<float>(x) - g.cx);
                float streak = 0;
                for (int s = 0; s < spec.streak_count; ++s) {
                    float d = theta - angles[s];
                    d = std::atan2(std::sin(d), std::cos(d));
                    streak += signs[s] * std::exp(-d * d / (2 * spec.streak_width *
                                                            spec.streak_width));
                }
                a += spec.streak_amplitude * env * streak;
                if (spec.noise_sd > 0) a += noise[i];
                f[i] += a;
            }
        }

        int16_t* op = out.slice(z);
        for (size_t i = 0; i < f.size(); ++i) {
            long v = std::lround(f[i]);
            // Keep every voxel on its own side of the air boundary so the
            // set {v < -465} is bit-identical to the truth's.
            if (in[i] >= kAirBoundaryHu)
                v = std::max(v, static_cast<long>(kAirBoundaryHu));
            else
                v = std::min(v, static_cast<long>(kAirBoundaryHu) - 1);
            op[i] = static_cast<int16_t>(std::clamp<long>(v, kHuMin, kHuMax));
        }
    }
    return out;
}

std::vector<RoiBox> roi_boxes(const PhantomPatient& patient) {
    const PatientGeometry& g = patient.geometry;
    const LabelVolume& lab = patient.labels;
    const int zc = (lab.depth - 1) / 2;
    const int size = 10;

    struct Site {
        Tissue tissue;
        float y, x;
    };
    std::vector<Site> sites;
    // Muscle interior and fat rim, as fractions of the body semi-axes.
    for (auto [fy, fx] : {std::pair{0.0f, -0.5f}, {0.0f, 0.5f}, {0.45f, -0.31f},
                          {0.45f, 0.31f}})
        sites.push_back({Tissue::kMuscle, g.cy + fy * g.ay, g.cx + fx * g.ax});
    for (auto [fy, fx] : {std::pair{0.0f, -0.85f}, {0.0f, 0.85f}, {-0.85f, 0.0f},
                          {0.85f, 0.0f}})
        sites.push_back({Tissue::kFat, g.cy + fy * g.ay, g.cx + fx * g.ax});
    for (const Region& r : g.regions)
        if (r.shape == Region::Shape::kEllipse &&
            (r.tissue == Tissue::kProstate || r.tissue == Tissue::kBladder))
            sites.push_back({r.tissue, g.cy + r.dy, g.cx + r.dx});

    auto slices_for = [&](Tissue t) {
        std::vector<int> zs;
        if (t == Tissue::kProstate) {
            for (int z = zc - 2; z <= zc + 2; ++z) zs.push_back(z);
        } else if (t == Tissue::kBladder) {
            for (int z = zc - 2; z <= zc + 2; z += 2) zs.push_back(z);
        } else {
            zs = {zc - 1, zc + 1};
        }
        std::erase_if(zs, [&](int z) { return z < 0 || z >= lab.depth; });
        return zs;
    };

    std::vector<RoiBox> boxes;
    for (const Site& s : sites) {
        const int y0 = static_cast<int>(std::lround(s.y)) - size / 2;
        const int x0 = static_cast<int>(std::lround(s.x)) - size / 2;
        if (y0 < 0 || x0 < 0 || y0 + size > lab.height || x0 + size > lab.width) continue;
        for (int z : slices_for(s.tissue)) {
            bool pure = true;
            for (int y = y0; pure && y < y0 + size; ++y)
                for (int x = x0; x < x0 + size; ++x)
                    if (lab.at(y, x, z) != static_cast<uint8_t>(s.tissue)) {
                        pure = false;
                        break;
                    }
            if (pure) boxes.push_back({s.tissue, z, y0, x0, size});
        }
    }
    return boxes;
}

json emit_dataset(int n_patients, const PhantomSpec& pspec, const DegradationSpec& dspec,
                  const fs::path& out_dir) {
    if (n_patients <= 0) throw std::invalid_argument("emit_dataset: n_patients must be > 0");
    fs::create_directories(out_dir);

    json manifest{{"dataset", "ctxlate-phantom"},
                  {"n_patients", n_patients},
                  {"phantom_seed", pspec.seed},
                  {"degradation_seed", dspec.seed},
                  {"canvas", {{"height", pspec.height},
                              {"width", pspec.width},
                              {"slices", pspec.slices}}},
                  {"roi_size", 10},
                  {"patients", json::array()}};

    for (int i = 0; i < n_patients; ++i) {
        const auto index = static_cast<uint64_t>(i);
        PhantomPatient patient = generate_truth_patient(pspec, index);
        CTVolume cbct = degrade_to_cbct(patient, dspec, index);

        char stem[32];
        std::snprintf(stem, sizeof(stem), "patient_%03d", i);
        const std::string truth_name = std::string(stem) + "_truth";
        const std::string cbct_name = std::string(stem) + "_cbct";
        save_volume(patient.truth, out_dir / truth_name);
        save_volume(cbct, out_dir / cbct_name);

        json rois = json::array();
        for (const RoiBox& b : roi_boxes(patient))
            rois.push_back({{"tissue", to_string(b.tissue)},
                            {"z", b.z},
                            {"y", b.y},
                            {"x", b.x},
                            {"size", b.size}});
        manifest["patients"].push_back(
            {{"index", i},
             {"patient_id", patient.truth.patient_id()},
             {"truth", truth_name + ".json"},
             {"cbct", cbct_name + ".json"},
             {"geometry", {{"cy", patient.geometry.cy},
                           {"cx", patient.geometry.cx},
                           {"ax", patient.geometry.ax},
                           {"ay", patient.geometry.ay}}},
             {"rois", std::move(rois)}});
    }

    std::ofstream ms(out_dir / "manifest.json");
    if (!ms) throw std::runtime_error("emit_dataset: cannot write manifest.json");
    ms << manifest.dump(2) << "\n";
    return manifest;
}

}  // namespace ctxlate::phantom
