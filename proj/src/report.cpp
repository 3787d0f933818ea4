// emit_report: runs the trained model over a manifest's patients and writes
// the JSON/CSV/PNG evaluation bundle.
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "ctxlate/evaluation.hpp"
#include "ctxlate/nn/checkpoint.hpp"
#include "ctxlate/translator.hpp"

namespace ctxlate::eval {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Color {
    uint8_t r, g, b;
};
constexpr Color kTruthColor{40, 40, 40};
constexpr Color kCbctColor{200, 60, 50};
constexpr Color kSynColor{50, 80, 210};
constexpr const char* kKinds[3] = {"truth", "cbct", "syn"};

RgbImage blank(int h, int w) {
    RgbImage img;
    img.h = h;
    img.w = w;
    img.px.assign(3 * size_t(h) * w, 255);
    return img;
}

void put(RgbImage& img, int y, int x, Color c) {
    if (y >= 0 && y < img.h && x >= 0 && x < img.w) img.set(y, x, c.r, c.g, c.b);
}

void line(RgbImage& img, int y0, int x0, int y1, int x1, Color c) {
    const int dy = std::abs(y1 - y0), dx = std::abs(x1 - x0);
    const int sy = y0 < y1 ? 1 : -1, sx = x0 < x1 ? 1 : -1;
    int err = dx - dy;
    for (;;) {
        put(img, y0, x0, c);
        if (y0 == y1 && x0 == x1) break;
        const int e2 = 2 * err;
        if (e2 > -dy) {
            err -= dy;
            x0 += sx;
        }
        if (e2 < dx) {
            err += dx;
            y0 += sy;
        }
    }
}

// 3x5 glyphs for axis labels (digits, minus, dot, and the tissue initials).
const std::map<char, std::array<uint8_t, 5>>& glyphs() {
    static const std::map<char, std::array<uint8_t, 5>> g = {
        {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
        {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
        {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
        {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b010, 0b010, 0b010}},
        {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
        {'-', {0b000, 0b000, 0b111, 0b000, 0b000}}, {'.', {0b000, 0b000, 0b000, 0b000, 0b010}},
        {'m', {0b000, 0b110, 0b111, 0b101, 0b101}}, {'f', {0b011, 0b010, 0b111, 0b010, 0b010}},
        {'p', {0b000, 0b110, 0b101, 0b110, 0b100}}, {'b', {0b100, 0b110, 0b101, 0b101, 0b110}},
    };
    return g;
}

void draw_text(RgbImage& img, int y, int x, const std::string& s, Color c) {
    for (char ch : s) {
        auto it = glyphs().find(ch);
        if (it != glyphs().end())
            for (int gy = 0; gy < 5; ++gy)
                for (int gx = 0; gx < 3; ++gx)
                    if (it->second[size_t(gy)] & (0b100 >> gx)) put(img, y + gy, x + gx, c);
        x += 4;
    }
}

std::string num_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// ------------------------------------------------------------------ plots

void plot_histograms(const std::array<Histogram, 3>& hs, const fs::path& path) {
    const int W = 560, H = 360, L = 16, R = 10, T = 10, B = 24;
    RgbImage img = blank(H, W);
    double max_log = 0;
    for (const auto& h : hs)
        for (int64_t cnt : h.counts) max_log = std::max(max_log, std::log10(1.0 + double(cnt)));
    if (max_log <= 0) max_log = 1;
    const Color axis{120, 120, 120};
    line(img, H - B, L, H - B, W - R, axis);
    line(img, T, L, H - B, L, axis);
    const Color colors[3] = {kTruthColor, kCbctColor, kSynColor};
    for (int k = 0; k < 3; ++k) {
        const Histogram& h = hs[size_t(k)];
        const int n = h.bins();
        int py = 0, px = 0;
        for (int i = 0; i < n; ++i) {
            const double frac = std::log10(1.0 + double(h.counts[size_t(i)])) / max_log;
            const int x = L + int((W - L - R - 1) * (i + 0.5) / n);
            const int y = (H - B) - int((H - T - B - 1) * frac);
            if (i) line(img, py, px, y, x, colors[size_t(k)]);
            py = y;
            px = x;
        }
        draw_text(img, T + 2 + 7 * k, W - R - 30, num_label(k), colors[size_t(k)]);
    }
    draw_text(img, H - B + 3, L, num_label(hs[0].lo), axis);
    draw_text(img, H - B + 3, W - R - 28, num_label(hs[0].hi), axis);
    write_png(path, img);
}

/// Violin silhouettes of pooled ROI voxel values, grouped by tissue with
/// one violin per volume kind.
void plot_violins(const std::map<std::string, std::array<std::vector<int16_t>, 3>>& pooled,
                  const fs::path& path) {
    const int W = 640, H = 360, L = 30, R = 8, T = 10, B = 18;
    const double lo = -500, hi = 200;
    RgbImage img = blank(H, W);
    const Color axis{120, 120, 120};
    line(img, T, L, H - B, L, axis);
    draw_text(img, H - B - 2, 2, num_label(lo), axis);
    draw_text(img, T, 2, num_label(hi), axis);
    const Color colors[3] = {kTruthColor, kCbctColor, kSynColor};
    const int groups = int(pooled.size());
    if (!groups) {
        write_png(path, img);
        return;
    }
    const int group_w = (W - L - R) / groups;
    const int slot_w = group_w / 4;
    int gi = 0;
    for (const auto& [tissue, kinds] : pooled) {
        const int gx = L + gi * group_w;
        draw_text(img, H - B + 3, gx + group_w / 2 - 2, tissue.substr(0, 1), axis);
        for (int k = 0; k < 3; ++k) {
            const auto& vals = kinds[size_t(k)];
            if (vals.empty()) continue;
            const int bins = 70;
            std::vector<double> dens(size_t(bins), 0);
            for (int16_t v : vals) {
                int i = int((std::clamp(double(v), lo, hi - 1e-9) - lo) / (hi - lo) * bins);
                dens[size_t(std::clamp(i, 0, bins - 1))] += 1;
            }
            for (int pass = 0; pass < 2; ++pass) {  // light smoothing
                std::vector<double> s(dens.size());
                for (int i = 0; i < bins; ++i) {
                    double acc = 0;
                    int n = 0;
                    for (int d = -1; d <= 1; ++d)
                        if (i + d >= 0 && i + d < bins) {
                            acc += dens[size_t(i + d)];
                            ++n;
                        }
                    s[size_t(i)] = acc / n;
                }
                dens.swap(s);
            }
            const double peak = *std::max_element(dens.begin(), dens.end());
            if (peak <= 0) continue;
            const int cx = gx + slot_w / 2 + k * slot_w + slot_w / 2;
            for (int i = 0; i < bins; ++i) {
                const double mid_hu = lo + (hi - lo) * (i + 0.5) / bins;
                const int y = (H - B) - int((H - T - B - 1) * (mid_hu - lo) / (hi - lo));
                const int hw = int(dens[size_t(i)] / peak * (slot_w / 2 - 1));
                line(img, y, cx - hw, y, cx + hw, colors[size_t(k)]);
            }
        }
        ++gi;
    }
    write_png(path, img);
}

// ------------------------------------------------------------- report aux

nn::Tensor slice_to_tensor(const CTVolume& vol, int z) {
    nn::Tensor t(1, vol.height(), vol.width());
    for (int y = 0; y < vol.height(); ++y)
        for (int x = 0; x < vol.width(); ++x) t.at(0, y, x) = float(vol.at(y, x, z));
    return t;
}

nn::Tensor window_tensor(const CTVolume& vol, int z, int y0, int x0, int h, int w) {
    nn::Tensor t(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(0, y, x) = float(vol.at(y0 + y, x0 + x, z));
    return t;
}

struct Summary {
    double mean_of_means = 0, sd_of_means = 0, mean_sd = 0;
    int n = 0;
};

Summary summarize(const std::vector<RoiStats>& stats) {
    Summary s;
    s.n = int(stats.size());
    if (!s.n) return s;
    for (const auto& r : stats) {
        s.mean_of_means += r.mean;
        s.mean_sd += r.sd;
    }
    s.mean_of_means /= s.n;
    s.mean_sd /= s.n;
    double ss = 0;
    for (const auto& r : stats) ss += (r.mean - s.mean_of_means) * (r.mean - s.mean_of_means);
    s.sd_of_means = std::sqrt(ss / s.n);
    return s;
}

}  // namespace

GrayImage diff_to_gray(const nn::Tensor& d) {
    float peak = 1e-6f;
    for (int i = 0; i < d.size(); ++i) peak = std::max(peak, std::abs(d[size_t(i)]));
    GrayImage g;
    g.h = d.h();
    g.w = d.w();
    g.px.resize(size_t(g.h) * g.w);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            g.px[size_t(y) * g.w + x] =
                uint8_t(std::lround(127.5f + 127.5f * d.at(0, y, x) / peak));
    return g;
}

nn::Tensor masked_clipped_slice(const CTVolume& vol, int z, const MaskOptions& mask_opts) {
    const HUSliceView view = slice_view(vol, z);
    const std::vector<int16_t> masked = apply_body_mask(view, make_body_mask(view, mask_opts));
    nn::Tensor t(1, view.h, view.w);
    for (int y = 0; y < view.h; ++y)
        for (int x = 0; x < view.w; ++x)
            t.at(0, y, x) = std::clamp(float(masked[size_t(y) * view.w + x]), -500.f, 200.f);
    return t;
}

json emit_report(const ReportJob& job) {
    const fs::path manifest_path = job.dataset_dir / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf)
        throw std::runtime_error("emit_report: expected a dataset manifest at " +
                                 manifest_path.string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw std::runtime_error("emit_report: bad manifest " + manifest_path.string() + ": " +
                                 e.what());
    }

    Translator tr(job.checkpoint);
    TranslationJob tjob;
    tjob.checkpoint = job.checkpoint;
    tjob.preprocess.per_volume_otsu = job.per_volume_otsu;
    if (job.full_canvas)
        tjob.crop.reset();
    else
        tjob.crop = job.crop ? *job.crop : tr.trained_crop();

    struct Patient {
        std::string id;
        CTVolume vols[3];  // truth, cbct, syn (kKinds order)
        CTVolume cyc;
        std::vector<ROISpec> rois;
    };
    std::vector<Patient> patients;
    for (const auto& jp : manifest.at("patients")) {
        Patient p;
        p.id = jp.at("patient_id").get<std::string>();
        p.vols[0] = load_volume(job.dataset_dir / jp.at("truth").get<std::string>());
        p.vols[1] = load_volume(job.dataset_dir / jp.at("cbct").get<std::string>());
        p.vols[2] = tr.translate(p.vols[1], tjob);
        p.cyc = tr.cycle(p.vols[1], tjob);
        for (const auto& jr : jp.at("rois")) {
            ROISpec roi;
            roi.slice = jr.at("z").get<int>();
            roi.y = jr.at("y").get<int>();
            roi.x = jr.at("x").get<int>();
            roi.height = roi.width = jr.at("size").get<int>();
            roi.tissue = jr.at("tissue").get<std::string>();
            p.rois.push_back(roi);
        }
        patients.push_back(std::move(p));
    }
    if (patients.empty()) throw std::runtime_error("emit_report: manifest lists no patients");

    if (!job.out_dir.empty()) fs::create_directories(job.out_dir);

    // ---- per-ROI stats (rows = ROIs x 3 volume kinds) + tissue summaries
    json roi_rows = json::array();
    std::string csv = "volume,roi_id,tissue,mean_hu,sd_hu\n";
    std::map<std::string, std::array<std::vector<RoiStats>, 3>> by_tissue;
    std::map<std::string, std::array<std::vector<int16_t>, 3>> pooled_voxels;
    for (const auto& p : patients) {
        int ri = 0;
        for (const auto& roi : p.rois) {
            const std::string roi_id = p.id + "_r" + std::to_string(ri++);
            for (int k = 0; k < 3; ++k) {
                const RoiStats st = roi_stats(p.vols[k], roi);
                by_tissue[roi.tissue][size_t(k)].push_back(st);
                auto& pool = pooled_voxels[roi.tissue][size_t(k)];
                for (int y = roi.y; y < roi.y + roi.height; ++y)
                    for (int x = roi.x; x < roi.x + roi.width; ++x)
                        pool.push_back(p.vols[k].at(y, x, roi.slice));
                roi_rows.push_back({{"volume", p.id + "_" + kKinds[k]},
                                    {"roi_id", roi_id},
                                    {"tissue", roi.tissue},
                                    {"slice", roi.slice},
                                    {"y", roi.y},
                                    {"x", roi.x},
                                    {"mean_hu", st.mean},
                                    {"sd_hu", st.sd}});
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s_%s,%s,%s,%.6g,%.6g\n", p.id.c_str(), kKinds[k],
                              roi_id.c_str(), roi.tissue.c_str(), st.mean, st.sd);
                csv += buf;
            }
        }
    }
    json tissue_summary = json::object();
    for (const auto& [tissue, kinds] : by_tissue) {
        json row = json::object();
        for (int k = 0; k < 3; ++k) {
            const Summary s = summarize(kinds[size_t(k)]);
            row[kKinds[k]] = {{"mean", s.mean_of_means},
                              {"sd_of_means", s.sd_of_means},
                              {"mean_sd", s.mean_sd},
                              {"n", s.n}};
        }
        tissue_summary[tissue] = row;
    }

    // ---- pooled histograms per kind
    std::array<Histogram, 3> hists;
    for (int k = 0; k < 3; ++k) {
        hists[size_t(k)] = volume_histogram(patients[0].vols[k]);
        for (size_t pi = 1; pi < patients.size(); ++pi) {
            const Histogram h = volume_histogram(patients[pi].vols[k]);
            for (size_t i = 0; i < h.counts.size(); ++i)
                hists[size_t(k)].counts[i] += h.counts[i];
        }
    }

    // ---- SelfSSIM over centered windows, slices evenly sampled
    std::vector<std::pair<int, int>> sites;  // (patient, z)
    {
        int total = 0;
        for (const auto& p : patients) total += p.vols[0].depth();
        const int n = std::max(1, job.ssim_rois);
        for (int i = 0; i < n; ++i) {
            int flat = total > 1 ? int(std::lround(double(i) * (total - 1) / (n - 1))) : 0;
            for (size_t pi = 0; pi < patients.size(); ++pi) {
                const int d = patients[pi].vols[0].depth();
                if (flat < d) {
                    sites.emplace_back(int(pi), flat);
                    break;
                }
                flat -= d;
            }
        }
    }
    json selfssim = json::object();
    for (int k = 0; k < 3; ++k) {
        std::vector<double> vals;
        for (const auto& [pi, z] : sites) {
            const CTVolume& v = patients[size_t(pi)].vols[k];
            const int size = std::min({job.ssim_roi_size, v.height(), v.width()});
            vals.push_back(self_ssim(
                window_tensor(v, z, (v.height() - size) / 2, (v.width() - size) / 2, size, size)));
        }
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= double(vals.size());
        double ss = 0;
        for (double v : vals) ss += (v - mean) * (v - mean);
        selfssim[kKinds[k]] = {{"mean", mean},
                               {"sd", std::sqrt(ss / double(vals.size()))},
                               {"n", vals.size()}};
    }

    // ---- air preservation + cycle-difference summary
    json dice = json::object();
    double dice_min = 1.0;
    for (const auto& p : patients) {
        const double d = air_dice(p.vols[1], p.vols[2]);
        dice[p.id] = d;
        dice_min = std::min(dice_min, d);
    }
    MaskOptions mask_opts;  // translator defaults; per-volume flag mirrored below
    double diff_abs_sum = 0, diff_abs_max = 0;
    int64_t diff_count = 0;
    for (const auto& p : patients) {
        MaskOptions opts = mask_opts;
        if (job.per_volume_otsu) opts.threshold = otsu_threshold(p.vols[1]);
        for (int z = 0; z < p.vols[1].depth(); ++z) {
            const nn::Tensor d = cycle_difference_image(masked_clipped_slice(p.vols[1], z, opts),
                                                        slice_to_tensor(p.cyc, z));
            for (int i = 0; i < d.size(); ++i) {
                diff_abs_sum += std::abs(double(d[size_t(i)]));
                diff_abs_max = std::max(diff_abs_max, std::abs(double(d[size_t(i)])));
            }
            diff_count += d.size();
        }
    }

    // ---- plots
    json plots = json::array();
    if (job.write_plots && !job.out_dir.empty()) {
        plot_histograms(hists, job.out_dir / "histograms.png");
        plots.push_back("histograms.png");
        plot_violins(pooled_voxels, job.out_dir / "roi_violins.png");
        plots.push_back("roi_violins.png");
        for (const auto& p : patients) {
            const int z = p.vols[0].depth() / 2;
            const Checkerboard cb = checkerboard_overlay(slice_to_tensor(p.vols[1], z),
                                                         slice_to_tensor(p.vols[2], z));
            const std::string cb_name = "checkerboard_" + p.id + ".png";
            write_png(job.out_dir / cb_name, cb.image);
            plots.push_back(cb_name);

            MaskOptions opts = mask_opts;
            if (job.per_volume_otsu) opts.threshold = otsu_threshold(p.vols[1]);
            const nn::Tensor d = cycle_difference_image(masked_clipped_slice(p.vols[1], z, opts),
                                                        slice_to_tensor(p.cyc, z));
            const std::string cd_name = "cyclediff_" + p.id + ".png";
            write_png(job.out_dir / cd_name, diff_to_gray(d));
            plots.push_back(cd_name);
        }
    }

    // ---- assemble
    const nlohmann::json ckpt_meta = nn::read_checkpoint_meta(job.checkpoint);
    json report{
        {"schema", "ctxlate-eval-report"},
        {"version", 1},
        {"provenance",
         {{"dataset", job.dataset_dir.string()},
          {"manifest", manifest_path.string()},
          {"checkpoint", job.checkpoint.string()},
          {"checkpoint_epoch", ckpt_meta.value("epoch", int64_t(-1))},
          {"checkpoint_iteration", ckpt_meta.value("iteration", int64_t(-1))},
          {"reference_cycle_loss", ckpt_meta.value("reference_cycle_loss", 0.0)},
          {"crop", tjob.crop ? json{{"height", tjob.crop->height}, {"width", tjob.crop->width}}
                             : json(nullptr)},
          {"selfssim_rule", std::to_string(sites.size()) + " centered " +
                                std::to_string(job.ssim_roi_size) + "x" +
                                std::to_string(job.ssim_roi_size) +
                                " windows, slices evenly sampled in manifest (patient, z) order"}}},
        {"patients", json::array()},
        {"roi_stats", roi_rows},
        {"tissue_summary", tissue_summary},
        {"histograms",
         {{"lo", hists[0].lo},
          {"hi", hists[0].hi},
          {"bins", hists[0].bins()},
          {"truth", hists[0].counts},
          {"cbct", hists[1].counts},
          {"syn", hists[2].counts}}},
        {"self_ssim", selfssim},
        {"air_dice", {{"per_patient", dice}, {"min", dice_min}}},
        {"cycle_difference",
         {{"mean_abs", diff_count ? diff_abs_sum / double(diff_count) : 0.0},
          {"max_abs", diff_abs_max}}},
        {"plots", plots},
    };
    for (const auto& p : patients) report["patients"].push_back(p.id);

    if (!job.out_dir.empty()) {
        if (job.write_json) {
            std::ofstream out(job.out_dir / "report.json");
            out << report.dump(2) << "\n";
        }
        if (job.write_csv) {
            std::ofstream out(job.out_dir / "roi_stats.csv");
            out << csv;
        }
    }
    return report;
}

}  // namespace ctxlate::eval
