#include "ctxlate/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ctxlate {

namespace {

using nn::Tensor;

float sgn(float v) { return (v > 0.f) ? 1.f : (v < 0.f ? -1.f : 0.f); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": tensors differ in shape");
}

double l1_mean(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1_mean");
    double acc = 0;
    const float* pa = a.data();
    const float* pb = b.data();
    for (int i = 0; i < a.size(); ++i) acc += std::abs(double(pa[i]) - double(pb[i]));
    return acc / a.size();
}

double mse_to_const(const Tensor& a, float target) {
    double acc = 0;
    const float* p = a.data();
    for (int i = 0; i < a.size(); ++i) {
        double d = double(p[i]) - double(target);
        acc += d * d;
    }
    return acc / a.size();
}

// Reflect index (mirror without repeating the edge sample), valid for n >= 2.
int mirror(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

// Separable Sobel on one channel plane: smooth [1 2 1] one way, difference
// [-1 0 1] the other. Templated so the loss path can run in double while the
// tensor-facing API stays float.
template <typename S, typename T>
void sobel_plane(const S* p, int h, int w, T* g1, T* g2) {
    for (int y = 0; y < h; ++y) {
        const S* rm = p + size_t(mirror(y - 1, h)) * w;
        const S* r0 = p + size_t(y) * w;
        const S* rp = p + size_t(mirror(y + 1, h)) * w;
        for (int x = 0; x < w; ++x) {
            int xm = mirror(x - 1, w), xp = mirror(x + 1, w);
            T sm = T(rm[xm]) + T(2) * T(r0[xm]) + T(rp[xm]);
            T sp = T(rm[xp]) + T(2) * T(r0[xp]) + T(rp[xp]);
            g1[size_t(y) * w + x] = sp - sm;
            T dm = T(rm[xm]) + T(2) * T(rm[x]) + T(rm[xp]);
            T dp = T(rp[xm]) + T(2) * T(rp[x]) + T(rp[xp]);
            g2[size_t(y) * w + x] = dp - dm;
        }
    }
}

template <typename T>
void sobel_adjoint_plane(const T* g1, const T* g2, T scale, T* out, int h, int w) {
    static const int off[3] = {-1, 0, 1};
    static const int smooth[3] = {1, 2, 1};
    static const int diff[3] = {-1, 0, 1};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            T v1 = scale * g1[size_t(y) * w + x];
            T v2 = scale * g2[size_t(y) * w + x];
            if (v1 == T(0) && v2 == T(0)) continue;
            for (int a = 0; a < 3; ++a) {
                int yy = mirror(y + off[a], h);
                for (int b = 0; b < 3; ++b) {
                    int xx = mirror(x + off[b], w);
                    out[size_t(yy) * w + xx] +=
                        v1 * T(smooth[a] * diff[b]) + v2 * T(diff[a] * smooth[b]);
                }
            }
        }
    }
}

}  // namespace

void LossWeights::validate() const {
    const double ws[] = {lambda_cycle, lambda_adv,  lambda_grad, lambda_tv,
                         lambda_air,   lambda_idem, lambda_d};
    for (double v : ws)
        if (!(v >= 0) || !std::isfinite(v))
            throw std::invalid_argument("LossWeights: weights must be finite and non-negative");
    if (!std::isfinite(air_threshold_scaled))
        throw std::invalid_argument("LossWeights: air_threshold_scaled must be finite");
}

double loss_discriminator(const Tensor& dp_fake, const Tensor& dc_real, const Tensor& dc_fake,
                          const Tensor& dp_real, const LossWeights& w) {
    require_same_shape(dp_fake, dp_real, "loss_discriminator (PlanCT pair)");
    require_same_shape(dc_fake, dc_real, "loss_discriminator (CBCT pair)");
    return w.lambda_d * (mse_to_const(dp_fake, 0.f) + mse_to_const(dc_real, 1.f) +
                         mse_to_const(dc_fake, 0.f) + mse_to_const(dp_real, 1.f));
}

double mse_to_const_grad(const Tensor& a, float target, float scale, Tensor* ga) {
    double val = mse_to_const(a, target);
    if (ga) {
        require_same_shape(a, *ga, "mse_to_const_grad");
        const float k = 2.f * scale / float(a.size());
        const float* p = a.data();
        float* g = ga->data();
        for (int i = 0; i < a.size(); ++i) g[i] += k * (p[i] - target);
    }
    return val;
}

double loss_discriminator_grad(const Tensor& dp_fake, const Tensor& dc_real,
                               const Tensor& dc_fake, const Tensor& dp_real,
                               const LossWeights& w, Tensor* g_dp_fake, Tensor* g_dc_real,
                               Tensor* g_dc_fake, Tensor* g_dp_real) {
    require_same_shape(dp_fake, dp_real, "loss_discriminator (PlanCT pair)");
    require_same_shape(dc_fake, dc_real, "loss_discriminator (CBCT pair)");
    const float s = float(w.lambda_d);
    double total = 0;
    total += mse_to_const_grad(dp_fake, 0.f, s, g_dp_fake);
    total += mse_to_const_grad(dc_real, 1.f, s, g_dc_real);
    total += mse_to_const_grad(dc_fake, 0.f, s, g_dc_fake);
    total += mse_to_const_grad(dp_real, 1.f, s, g_dp_real);
    return w.lambda_d * total;
}

CycleLosses loss_cycle(const Tensor& x, const Tensor& x_cyc, const Tensor& y,
                       const Tensor& y_cyc) {
    return {l1_mean(x, x_cyc), l1_mean(y, y_cyc)};
}

double loss_adversarial_g(const Tensor& dp_of_fake, const Tensor& dc_of_fake) {
    return mse_to_const(dp_of_fake, 1.f) + mse_to_const(dc_of_fake, 1.f);
}

double l1_mean_grad(const Tensor& a, const Tensor& b, float scale, Tensor* ga, Tensor* gb) {
    double val = l1_mean(a, b);
    const float k = scale / float(a.size());
    const float* pa = a.data();
    const float* pb = b.data();
    if (ga) {
        require_same_shape(a, *ga, "l1_mean_grad");
        float* g = ga->data();
        for (int i = 0; i < a.size(); ++i) g[i] += k * sgn(pa[i] - pb[i]);
    }
    if (gb) {
        require_same_shape(b, *gb, "l1_mean_grad");
        float* g = gb->data();
        for (int i = 0; i < a.size(); ++i) g[i] -= k * sgn(pa[i] - pb[i]);
    }
    return val;
}

double loss_tv(const Tensor& img) {
    return loss_tv_grad(img, 0.f, nullptr);
}

double loss_tv_grad(const Tensor& img, float scale, Tensor* g) {
    const int c = img.c(), h = img.h(), w = img.w();
    if (h < 2 || w < 2)
        throw std::invalid_argument("loss_tv: image must be at least 2x2");
    if (g) require_same_shape(img, *g, "loss_tv_grad");
    const long ndiff = long(c) * (long(h) * (w - 1) + long(h - 1) * w);
    double acc = 0;
    const float gk = scale / float(ndiff);
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x + 1 < w; ++x) {
                float d = img.at(ci, y, x + 1) - img.at(ci, y, x);
                acc += std::abs(double(d));
                if (g) {
                    float s = gk * sgn(d);
                    g->at(ci, y, x + 1) += s;
                    g->at(ci, y, x) -= s;
                }
            }
        }
        for (int y = 0; y + 1 < h; ++y) {
            for (int x = 0; x < w; ++x) {
                float d = img.at(ci, y + 1, x) - img.at(ci, y, x);
                acc += std::abs(double(d));
                if (g) {
                    float s = gk * sgn(d);
                    g->at(ci, y + 1, x) += s;
                    g->at(ci, y, x) -= s;
                }
            }
        }
    }
    return acc / ndiff;
}

namespace {

double air_pair(const Tensor& x, const Tensor& gx, float thr, float scale, Tensor* g_gx,
                Tensor* g_x) {
    require_same_shape(x, gx, "loss_air");
    const float* px = x.data();
    const float* pg = gx.data();
    const float k = scale / float(x.size());
    double acc = 0;
    for (int i = 0; i < x.size(); ++i) {
        float psix = (px[i] < thr) ? px[i] : 0.f;
        float psig = (pg[i] < thr) ? pg[i] : 0.f;
        float d = psig - psix;
        acc += std::abs(double(d));
        float s = sgn(d);
        if (g_gx && pg[i] < thr) g_gx->data()[i] += k * s;
        if (g_x && px[i] < thr) g_x->data()[i] -= k * s;
    }
    return acc / x.size();
}

}  // namespace

double loss_air(const Tensor& x, const Tensor& gx, const Tensor& y, const Tensor& gy,
                float threshold) {
    return air_pair(x, gx, threshold, 0.f, nullptr, nullptr) +
           air_pair(y, gy, threshold, 0.f, nullptr, nullptr);
}

double loss_air_grad(const Tensor& x, const Tensor& gx, float threshold, float scale,
                     Tensor* g_gx, Tensor* g_x) {
    if (g_gx) require_same_shape(gx, *g_gx, "loss_air_grad");
    if (g_x) require_same_shape(x, *g_x, "loss_air_grad");
    return air_pair(x, gx, threshold, scale, g_gx, g_x);
}

void sobel_gradients(const Tensor& img, Tensor& g1, Tensor& g2) {
    const int c = img.c(), h = img.h(), w = img.w();
    if (h < 3 || w < 3)
        throw std::invalid_argument("sobel_gradients: image must be at least 3x3");
    require_same_shape(img, g1, "sobel_gradients");
    require_same_shape(img, g2, "sobel_gradients");
    for (int ci = 0; ci < c; ++ci)
        sobel_plane(img.row(ci, 0), h, w, g1.row(ci, 0), g2.row(ci, 0));
}

void sobel_adjoint(const Tensor& g1_in, const Tensor& g2_in, float scale, Tensor& out) {
    const int c = out.c(), h = out.h(), w = out.w();
    require_same_shape(out, g1_in, "sobel_adjoint");
    require_same_shape(out, g2_in, "sobel_adjoint");
    for (int ci = 0; ci < c; ++ci)
        sobel_adjoint_plane(g1_in.row(ci, 0), g2_in.row(ci, 0), scale, out.row(ci, 0), h, w);
}

double loss_grad_grad(const Tensor& x, const Tensor& gx, float scale, Tensor* g_gx,
                      Tensor* g_x) {
    require_same_shape(x, gx, "loss_grad");
    const int c = x.c(), h = x.h(), w = x.w();
    if (h < 3 || w < 3)
        throw std::invalid_argument("loss_grad: image must be at least 3x3");
    const size_t plane = size_t(h) * w;
    std::vector<double> d(size_t(x.size()));
    for (int i = 0; i < x.size(); ++i) d[size_t(i)] = double(x.data()[i]) - double(gx.data()[i]);
    std::vector<double> s1(d.size()), s2(d.size());
    for (int ci = 0; ci < c; ++ci)
        sobel_plane(d.data() + ci * plane, h, w, s1.data() + ci * plane, s2.data() + ci * plane);
    double val = 0;
    for (size_t i = 0; i < d.size(); ++i) val += s1[i] * s1[i] + s2[i] * s2[i];
    val /= d.size();
    if (g_gx || g_x) {
        // d(val)/d(d) = (2/N) * S^T([s1, s2]); then d = x - gx.
        std::vector<double> dd(d.size(), 0.0);
        for (int ci = 0; ci < c; ++ci)
            sobel_adjoint_plane(s1.data() + ci * plane, s2.data() + ci * plane,
                                2.0 / double(d.size()), dd.data() + ci * plane, h, w);
        if (g_gx) {
            require_same_shape(gx, *g_gx, "loss_grad_grad");
            for (int i = 0; i < x.size(); ++i) g_gx->data()[i] -= scale * float(dd[size_t(i)]);
        }
        if (g_x) {
            require_same_shape(x, *g_x, "loss_grad_grad");
            for (int i = 0; i < x.size(); ++i) g_x->data()[i] += scale * float(dd[size_t(i)]);
        }
    }
    return val;
}

double loss_grad(const Tensor& x, const Tensor& gx, const Tensor& y, const Tensor& gy) {
    return loss_grad_grad(x, gx, 0.f, nullptr, nullptr) +
           loss_grad_grad(y, gy, 0.f, nullptr, nullptr);
}

double loss_idem(const Tensor& gx, const Tensor& ggx, const Tensor& gy, const Tensor& ggy) {
    return l1_mean(gx, ggx) + l1_mean(gy, ggy);
}

LossBreakdown compose_generator_loss(const GeneratorLossTerms& t, const LossWeights& w) {
    w.validate();
    const double terms[] = {t.cycle_a, t.cycle_b, t.adv, t.tv, t.air, t.grad, t.idem, t.d};
    for (double v : terms)
        if (!std::isfinite(v))
            throw std::runtime_error("compose_generator_loss: non-finite loss term (training fault)");
    LossBreakdown b;
    b.cycle_a = t.cycle_a;
    b.cycle_b = t.cycle_b;
    b.adv = t.adv;
    b.tv = t.tv;
    b.air = t.air;
    b.grad = t.grad;
    b.idem = t.idem;
    b.d = t.d;
    b.loss_g = w.lambda_cycle * (t.cycle_a + t.cycle_b) + w.lambda_adv * t.adv +
               w.lambda_tv * t.tv + w.lambda_air * t.air + w.lambda_grad * t.grad +
               w.lambda_idem * t.idem;
    b.loss_d = t.d;  // loss_discriminator already applies lambda_d
    return b;
}

}  // namespace ctxlate
