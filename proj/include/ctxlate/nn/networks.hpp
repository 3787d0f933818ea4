// Generator and discriminator graphs with hand-rolled backward passes.
// The layer inventory follows the encoder/decoder description in the design
// notes: stem 7x7 -> 3 strided 3x3 down-convs -> 9 residual blocks -> 3x
// (nearest-neighbor unpool + residual block) -> 7x7 head with tanh, with
// addition skips stem<->head and encoder<->decoder. Instance norm carries no
// affine terms anywhere.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctxlate/nn/ops.hpp"

namespace ctxlate::nn {

struct ParamRef {
    std::string name;
    std::vector<float>* value;
    std::vector<float>* grad;
};

struct GeneratorSpec {
    int base_channels = 32;    // stem width; encoder doubles it twice
    int residual_blocks = 9;
    int noise_after_block = 4;  // latent noise insertion point (1-based)
    float noise_sd = 0.05f;
    float stem_pad_value = -1.f;  // air intensity in scaled units

    void validate() const;
};

struct DiscriminatorSpec {
    int base_channels = 32;
    // Instance norm sits on every layer but the last. The flag exists for
    // the receptive-field probe, where normalization (a global op) would
    // smear one-pixel perturbations across the whole map.
    bool use_instance_norm = true;

    void validate() const;
};

/// conv-norm-relu-conv-norm plus identity, or a 1x1 projection (with norm)
/// when the channel count changes.
struct ResBlock {
    Conv2d conv1, conv2, proj;
    bool has_proj = false;

    struct Ctx {
        Conv2d::Ctx c1, c2, cp;
        InstanceNormCtx in1, in2, inp;
        Tensor n1, r1, n2, np;
    };

    void configure(int cin, int cout, Rng& rng);
    void forward(const Tensor& x, Tensor& y, Ctx* ctx, Scratch& s) const;
    /// Accumulates dx; dy is consumed (scratch use) but not modified.
    void backward(const Ctx& ctx, const Tensor& dy, Tensor& dx, Scratch& s);
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
    void zero_grads();
};

class Generator {
public:
    struct Ctx {
        Conv2d::Ctx stem_c;
        InstanceNormCtx stem_in;
        Tensor stem_n, e0;
        std::array<Conv2d::Ctx, 3> down_c;
        std::array<InstanceNormCtx, 3> down_in;
        std::array<Tensor, 3> down_n, down_r;
        std::vector<ResBlock::Ctx> res;
        std::array<ResBlock::Ctx, 3> dec;
        Conv2d::Ctx head_c;
        Tensor y;  // tanh output
    };

    explicit Generator(const GeneratorSpec& spec, std::uint64_t seed);

    const GeneratorSpec& spec() const { return spec_; }
    /// Throws std::invalid_argument unless both spatial dims divide by 8.
    /// Noise is injected only when noise_rng is non-null (training mode).
    Tensor forward(const Tensor& x, Ctx* ctx, Scratch& s, Rng* noise_rng = nullptr) const;
    /// Accumulates parameter gradients; writes input gradient when dx set.
    void backward(const Ctx& ctx, const Tensor& dLdy, Scratch& s, Tensor* dx = nullptr);
    std::vector<ParamRef> params();
    size_t param_count() const;
    void zero_grads();

private:
    GeneratorSpec spec_;
    Conv2d stem_;
    std::array<Conv2d, 3> down_;
    std::vector<ResBlock> res_;
    std::array<ResBlock, 3> dec_;
    Conv2d head_;
};

class Discriminator {
public:
    static constexpr int kLayers = 6;

    struct Ctx {
        std::array<Conv2d::Ctx, kLayers> conv;
        std::array<InstanceNormCtx, kLayers> in;
        std::array<Tensor, kLayers> n, r;  // norm outputs, activations
    };

    explicit Discriminator(const DiscriminatorSpec& spec, std::uint64_t seed);

    const DiscriminatorSpec& spec() const { return spec_; }
    /// (1, H, W) -> (1, H/8, W/8); throws unless dims divide by 8 and are
    /// at least 24 (the reflect padding of the trailing 4x4 layers needs a
    /// 3 px score map).
    Tensor forward(const Tensor& x, Ctx* ctx, Scratch& s) const;
    void backward(const Ctx& ctx, const Tensor& dLdy, Scratch& s, Tensor* dx = nullptr);
    std::vector<ParamRef> params();
    size_t param_count() const;
    void zero_grads();

    /// (kernel, stride) per layer, the receptive-field input.
    static std::vector<std::pair<int, int>> layer_shapes();

private:
    DiscriminatorSpec spec_;
    std::array<Conv2d, kLayers> conv_;
};

/// rf <- rf + (k-1)*jump, jump <- jump*s over the layer list.
int receptive_field(const std::vector<std::pair<int, int>>& layers);

}  // namespace ctxlate::nn
