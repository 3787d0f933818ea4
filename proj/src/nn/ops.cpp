#include "ctxlate/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace ctxlate::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using StridedMap = Eigen::Map<MatRM, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const MatRM, 0, Eigen::OuterStride<>>;

constexpr long kStripCapFloats = 1L << 20;

int mirror(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

}  // namespace

Pad same_pad(int kernel, int stride, PadMode mode, float value) {
    Pad p;
    p.mode = mode;
    p.value = value;
    if (kernel % 2 == 1) {
        p.top = p.bottom = p.left = p.right = (kernel - 1) / 2;
    } else if (kernel == 4 && stride == 1) {
        p.top = p.left = 1;
        p.bottom = p.right = 2;
    } else if (kernel == 4 && stride == 2) {
        p.top = p.bottom = p.left = p.right = 1;
    } else {
        throw std::invalid_argument("same_pad: unsupported kernel/stride combination");
    }
    return p;
}

void pad(const Tensor& in, const Pad& p, Tensor& out) {
    const int h = in.h(), w = in.w();
    assert(out.c() == in.c() && out.h() == h + p.top + p.bottom && out.w() == w + p.left + p.right);
    if (p.mode == PadMode::reflect) {
        assert(p.top < h && p.bottom < h && p.left < w && p.right < w);
    }
    const int wo = out.w();
    for (int ci = 0; ci < in.c(); ++ci) {
        for (int y = 0; y < out.h(); ++y) {
            float* dst = out.row(ci, y);
            int sy = y - p.top;
            if (p.mode == PadMode::constant) {
                if (sy < 0 || sy >= h) {
                    std::fill_n(dst, wo, p.value);
                    continue;
                }
                const float* src = in.row(ci, sy);
                std::fill_n(dst, p.left, p.value);
                std::copy_n(src, w, dst + p.left);
                std::fill_n(dst + p.left + w, p.right, p.value);
            } else {
                const float* src = in.row(ci, mirror(sy, h));
                for (int x = 0; x < p.left; ++x) dst[x] = src[mirror(x - p.left, w)];
                std::copy_n(src, w, dst + p.left);
                for (int x = 0; x < p.right; ++x) dst[p.left + w + x] = src[mirror(w + x, w)];
            }
        }
    }
}

void pad_backward(const Tensor& dpadded, const Pad& p, Tensor& din) {
    const int h = din.h(), w = din.w();
    assert(dpadded.c() == din.c() && dpadded.h() == h + p.top + p.bottom &&
           dpadded.w() == w + p.left + p.right);
    const bool reflect = p.mode == PadMode::reflect;
    for (int ci = 0; ci < din.c(); ++ci) {
        for (int y = 0; y < dpadded.h(); ++y) {
            const float* src = dpadded.row(ci, y);
            int sy = y - p.top;
            if (sy < 0 || sy >= h) {
                if (!reflect) continue;
                sy = mirror(sy, h);
            }
            float* dst = din.row(ci, sy);
            if (reflect) {
                for (int x = 0; x < dpadded.w(); ++x) dst[mirror(x - p.left, w)] += src[x];
            } else {
                for (int x = 0; x < w; ++x) dst[x] += src[p.left + x];
            }
        }
    }
}

void im2col_rows(const Tensor& padded, int kernel, int stride, int wo, int row0, int row1,
                 float* col) {
    const long ls = long(row1 - row0) * wo;
    for (int ci = 0; ci < padded.c(); ++ci) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                float* dst0 = col + ((long(ci) * kernel + ky) * kernel + kx) * ls;
                for (int r = row0; r < row1; ++r) {
                    const float* src = padded.row(ci, r * stride + ky) + kx;
                    float* dst = dst0 + long(r - row0) * wo;
                    if (stride == 1) {
                        std::copy_n(src, wo, dst);
                    } else {
                        for (int c = 0; c < wo; ++c) dst[c] = src[c * stride];
                    }
                }
            }
        }
    }
}

void col2im_rows(const float* col, int kernel, int stride, int wo, int row0, int row1,
                 Tensor& dpadded) {
    const long ls = long(row1 - row0) * wo;
    for (int ci = 0; ci < dpadded.c(); ++ci) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const float* src0 = col + ((long(ci) * kernel + ky) * kernel + kx) * ls;
                for (int r = row0; r < row1; ++r) {
                    float* dst = dpadded.row(ci, r * stride + ky) + kx;
                    const float* src = src0 + long(r - row0) * wo;
                    if (stride == 1) {
                        for (int c = 0; c < wo; ++c) dst[c] += src[c];
                    } else {
                        for (int c = 0; c < wo; ++c) dst[c * stride] += src[c];
                    }
                }
            }
        }
    }
}

void relu(Tensor& t) {
    float* p = t.data();
    for (int i = 0; i < t.size(); ++i) p[i] = std::max(p[i], 0.f);
}

void leaky_relu(Tensor& t, float slope) {
    float* p = t.data();
    for (int i = 0; i < t.size(); ++i)
        if (p[i] < 0.f) p[i] *= slope;
}

void tanh_op(Tensor& t) {
    float* p = t.data();
    for (int i = 0; i < t.size(); ++i) p[i] = std::tanh(p[i]);
}

void relu_backward(const Tensor& y, Tensor& dy) {
    assert(y.same_shape(dy));
    const float* py = y.data();
    float* pd = dy.data();
    for (int i = 0; i < y.size(); ++i)
        if (py[i] <= 0.f) pd[i] = 0.f;
}

void leaky_relu_backward(const Tensor& y, float slope, Tensor& dy) {
    assert(y.same_shape(dy));
    const float* py = y.data();
    float* pd = dy.data();
    for (int i = 0; i < y.size(); ++i)
        if (py[i] < 0.f) pd[i] *= slope;
}

void tanh_backward(const Tensor& y, Tensor& dy) {
    assert(y.same_shape(dy));
    const float* py = y.data();
    float* pd = dy.data();
    for (int i = 0; i < y.size(); ++i) pd[i] *= 1.f - py[i] * py[i];
}

void instance_norm(const Tensor& x, Tensor& y, InstanceNormCtx* ctx, float eps) {
    assert(x.same_shape(y));
    const int n = x.h() * x.w();
    if (ctx) ctx->inv_std.assign(size_t(x.c()), 0.f);
    for (int ci = 0; ci < x.c(); ++ci) {
        const float* px = x.row(ci, 0);
        double sum = 0, sq = 0;
        for (int i = 0; i < n; ++i) {
            sum += px[i];
            sq += double(px[i]) * px[i];
        }
        const double mean = sum / n;
        const double var = std::max(0.0, sq / n - mean * mean);
        const float inv = float(1.0 / std::sqrt(var + eps));
        if (ctx) ctx->inv_std[size_t(ci)] = inv;
        float* py = y.row(ci, 0);
        const float fm = float(mean);
        for (int i = 0; i < n; ++i) py[i] = (px[i] - fm) * inv;
    }
}

void instance_norm_backward(const Tensor& xhat, const InstanceNormCtx& ctx, const Tensor& dy,
                            Tensor& dx) {
    assert(xhat.same_shape(dy) && xhat.same_shape(dx));
    const int n = xhat.h() * xhat.w();
    for (int ci = 0; ci < xhat.c(); ++ci) {
        const float* ph = xhat.row(ci, 0);
        const float* pd = dy.row(ci, 0);
        float* po = dx.row(ci, 0);
        double m1 = 0, m2 = 0;
        for (int i = 0; i < n; ++i) {
            m1 += pd[i];
            m2 += double(pd[i]) * ph[i];
        }
        const float a = float(m1 / n), b = float(m2 / n);
        const float inv = ctx.inv_std[size_t(ci)];
        for (int i = 0; i < n; ++i) po[i] += inv * (pd[i] - a - ph[i] * b);
    }
}

void upsample2x(const Tensor& x, Tensor& y) {
    assert(y.c() == x.c() && y.h() == 2 * x.h() && y.w() == 2 * x.w());
    for (int ci = 0; ci < x.c(); ++ci) {
        for (int r = 0; r < x.h(); ++r) {
            const float* src = x.row(ci, r);
            float* d0 = y.row(ci, 2 * r);
            for (int c = 0; c < x.w(); ++c) {
                d0[2 * c] = src[c];
                d0[2 * c + 1] = src[c];
            }
            std::copy_n(d0, y.w(), y.row(ci, 2 * r + 1));
        }
    }
}

void upsample2x_backward(const Tensor& dy, Tensor& dx) {
    assert(dy.c() == dx.c() && dy.h() == 2 * dx.h() && dy.w() == 2 * dx.w());
    for (int ci = 0; ci < dx.c(); ++ci) {
        for (int r = 0; r < dx.h(); ++r) {
            const float* s0 = dy.row(ci, 2 * r);
            const float* s1 = dy.row(ci, 2 * r + 1);
            float* dst = dx.row(ci, r);
            for (int c = 0; c < dx.w(); ++c)
                dst[c] += s0[2 * c] + s0[2 * c + 1] + s1[2 * c] + s1[2 * c + 1];
        }
    }
}

void add_gaussian_noise(Tensor& t, float sd, Rng& rng) {
    float* p = t.data();
    for (int i = 0; i < t.size(); ++i) p[i] += rng.normal(0.f, sd);
}

void Conv2d::init(Rng& rng, float sd) {
    w.assign(size_t(cout) * cin * kernel * kernel, 0.f);
    gw.assign(w.size(), 0.f);
    for (float& v : w) v = rng.normal(0.f, sd);
    if (has_bias) {
        b.assign(size_t(cout), 0.f);
        gb.assign(size_t(cout), 0.f);
    }
}

void Conv2d::forward(const Tensor& x, Tensor& y, Ctx* ctx, Scratch& s) const {
    assert(x.c() == cin && y.c() == cout);
    assert(y.h() == out_h(x.h()) && y.w() == out_w(x.w()));
    const Pad p = same_pad(kernel, stride, pad_mode, pad_value);
    Tensor local;
    Tensor& xpad = ctx ? ctx->xpad : local;
    xpad = Tensor(cin, x.h() + p.top + p.bottom, x.w() + p.left + p.right);
    pad(x, p, xpad);

    const int ho = y.h(), wo = y.w();
    const long ckk = long(cin) * kernel * kernel;
    const int rows_per_strip = std::clamp(int(kStripCapFloats / std::max(1L, ckk * wo)), 1, ho);
    s.col.resize(size_t(ckk) * rows_per_strip * wo);
    CMapRM wmat(w.data(), cout, ckk);
    for (int r0 = 0; r0 < ho; r0 += rows_per_strip) {
        const int r1 = std::min(ho, r0 + rows_per_strip);
        const long ls = long(r1 - r0) * wo;
        im2col_rows(xpad, kernel, stride, wo, r0, r1, s.col.data());
        CMapRM colm(s.col.data(), ckk, ls);
        StridedMap ym(y.data() + long(r0) * wo, cout, ls,
                      Eigen::OuterStride<>(long(ho) * wo));
        ym.noalias() = wmat * colm;
    }
    if (has_bias) {
        for (int co = 0; co < cout; ++co) {
            float* py = y.row(co, 0);
            const float bv = b[size_t(co)];
            for (long i = 0; i < long(ho) * wo; ++i) py[i] += bv;
        }
    }
}

void Conv2d::backward(const Ctx& ctx, const Tensor& dy, Tensor* dx, Scratch& s) {
    assert(dy.c() == cout);
    const Pad p = same_pad(kernel, stride, pad_mode, pad_value);
    const Tensor& xpad = ctx.xpad;
    const int ho = dy.h(), wo = dy.w();
    const long ckk = long(cin) * kernel * kernel;

    if (has_bias) {
        for (int co = 0; co < cout; ++co) {
            const float* pd = dy.row(co, 0);
            double acc = 0;
            for (long i = 0; i < long(ho) * wo; ++i) acc += pd[i];
            gb[size_t(co)] += float(acc);
        }
    }

    if (dx) {
        s.pad_grad = Tensor(xpad.c(), xpad.h(), xpad.w());
        s.pad_grad.fill(0.f);
    }
    const int rows_per_strip = std::clamp(int(kStripCapFloats / std::max(1L, ckk * wo)), 1, ho);
    s.col.resize(size_t(ckk) * rows_per_strip * wo);
    if (dx) s.dcol.resize(s.col.size());
    MapRM gwm(gw.data(), cout, ckk);
    CMapRM wmat(w.data(), cout, ckk);
    for (int r0 = 0; r0 < ho; r0 += rows_per_strip) {
        const int r1 = std::min(ho, r0 + rows_per_strip);
        const long ls = long(r1 - r0) * wo;
        im2col_rows(xpad, kernel, stride, wo, r0, r1, s.col.data());
        CMapRM colm(s.col.data(), ckk, ls);
        CStridedMap dym(dy.data() + long(r0) * wo, cout, ls,
                        Eigen::OuterStride<>(long(ho) * wo));
        gwm.noalias() += dym * colm.transpose();
        if (dx) {
            MapRM dcolm(s.dcol.data(), ckk, ls);
            dcolm.noalias() = wmat.transpose() * dym;
            col2im_rows(s.dcol.data(), kernel, stride, wo, r0, r1, s.pad_grad);
        }
    }
    if (dx) pad_backward(s.pad_grad, p, *dx);
}

}  // namespace ctxlate::nn
