// Low-level differentiable ops. Forward variants fill caller-sized outputs;
// backward variants accumulate into gradients unless noted. All ops are
// single-image (CHW) since the training batch size is 1.
#pragma once

#include <vector>

#include "ctxlate/nn/rng.hpp"
#include "ctxlate/nn/tensor.hpp"

namespace ctxlate::nn {

enum class PadMode { reflect, constant };

struct Pad {
    int top = 0, bottom = 0, left = 0, right = 0;
    PadMode mode = PadMode::reflect;
    float value = 0.f;
};

/// Same-padding amounts for the kernel/stride pairs the networks use
/// (k3s1, k3s2, k7s1, k4s1, k4s2). Output dims become ceil(in/stride).
Pad same_pad(int kernel, int stride, PadMode mode, float value = 0.f);

void pad(const Tensor& in, const Pad& p, Tensor& out);
/// Adjoint of pad: folds gradient at padded cells back onto their sources
/// (reflect) or drops it (constant). Accumulates into din.
void pad_backward(const Tensor& dpadded, const Pad& p, Tensor& din);

/// Caffe-layout im2col over output rows [row0, row1): writes a
/// (cin*k*k) x ((row1-row0)*wo) row-major matrix into col.
void im2col_rows(const Tensor& padded, int kernel, int stride, int wo, int row0, int row1,
                 float* col);
/// Adjoint: scatters col back into dpadded (accumulating).
void col2im_rows(const float* col, int kernel, int stride, int wo, int row0, int row1,
                 Tensor& dpadded);

// Activations. Backward takes the forward *output* for relu/leaky/tanh
// (all three are invertible enough for that) and multiplies dy in place.
void relu(Tensor& t);
void leaky_relu(Tensor& t, float slope);
void tanh_op(Tensor& t);
void relu_backward(const Tensor& y, Tensor& dy);
void leaky_relu_backward(const Tensor& y, float slope, Tensor& dy);
void tanh_backward(const Tensor& y, Tensor& dy);

/// Instance normalization without affine terms, per channel over H*W.
struct InstanceNormCtx {
    std::vector<float> inv_std;  // one per channel
};
void instance_norm(const Tensor& x, Tensor& y, InstanceNormCtx* ctx, float eps = 1e-5f);
/// dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat)); xhat is the
/// forward output. Accumulates into dx.
void instance_norm_backward(const Tensor& xhat, const InstanceNormCtx& ctx, const Tensor& dy,
                            Tensor& dx);

/// Nearest-neighbor 2x upsampling.
void upsample2x(const Tensor& x, Tensor& y);
void upsample2x_backward(const Tensor& dy, Tensor& dx);  // accumulates

/// Adds N(0, sd) noise elementwise.
void add_gaussian_noise(Tensor& t, float sd, Rng& rng);

/// Reusable scratch buffers for the conv inner loops.
struct Scratch {
    std::vector<float> col, dcol;
    Tensor pad_grad;
};

struct Conv2d {
    int cin = 0, cout = 0, kernel = 0, stride = 1;
    bool has_bias = false;
    PadMode pad_mode = PadMode::reflect;
    float pad_value = 0.f;

    std::vector<float> w;   // cout x cin x k x k
    std::vector<float> b;   // cout (empty when !has_bias)
    std::vector<float> gw;
    std::vector<float> gb;

    struct Ctx {
        Tensor xpad;  // padded input, kept for the backward pass
    };

    void init(Rng& rng, float sd = 0.02f);
    int out_h(int h) const { return (stride == 1) ? h : h / 2; }
    int out_w(int w) const { return (stride == 1) ? w : w / 2; }
    size_t param_count() const { return w.size() + b.size(); }

    /// y must be pre-sized to (cout, out_h, out_w). ctx may be null in
    /// eval mode.
    void forward(const Tensor& x, Tensor& y, Ctx* ctx, Scratch& s) const;
    /// Accumulates gw/gb and, when dx is non-null, the input gradient.
    void backward(const Ctx& ctx, const Tensor& dy, Tensor* dx, Scratch& s);
};

}  // namespace ctxlate::nn
