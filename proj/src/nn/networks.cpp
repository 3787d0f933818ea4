#include "ctxlate/nn/networks.hpp"

#include <stdexcept>

namespace ctxlate::nn {

namespace {

Conv2d make_conv(int cin, int cout, int k, int stride, bool bias, PadMode mode, float padv,
                 Rng& rng) {
    Conv2d c;
    c.cin = cin;
    c.cout = cout;
    c.kernel = k;
    c.stride = stride;
    c.has_bias = bias;
    c.pad_mode = mode;
    c.pad_value = padv;
    c.init(rng);
    return c;
}

void check_input(const Tensor& x) {
    if (x.c() != 1)
        throw std::invalid_argument("network input must have a single channel");
    if (x.h() % 8 != 0 || x.w() % 8 != 0)
        throw std::invalid_argument("network input dims must be divisible by 8, got " +
                                    std::to_string(x.h()) + "x" + std::to_string(x.w()));
}

void add_param(std::vector<ParamRef>& out, const std::string& name, Conv2d& c) {
    out.push_back({name + ".w", &c.w, &c.gw});
    if (c.has_bias) out.push_back({name + ".b", &c.b, &c.gb});
}

}  // namespace

void GeneratorSpec::validate() const {
    if (base_channels <= 0) throw std::invalid_argument("GeneratorSpec: base_channels must be positive");
    if (residual_blocks < 1) throw std::invalid_argument("GeneratorSpec: need at least one residual block");
    if (noise_after_block < 1 || noise_after_block > residual_blocks)
        throw std::invalid_argument("GeneratorSpec: noise insertion point out of range");
    if (noise_sd < 0.f) throw std::invalid_argument("GeneratorSpec: noise_sd must be non-negative");
}

void DiscriminatorSpec::validate() const {
    if (base_channels <= 0)
        throw std::invalid_argument("DiscriminatorSpec: base_channels must be positive");
}

void ResBlock::configure(int cin, int cout, Rng& rng) {
    conv1 = make_conv(cin, cout, 3, 1, false, PadMode::reflect, 0.f, rng);
    conv2 = make_conv(cout, cout, 3, 1, false, PadMode::reflect, 0.f, rng);
    has_proj = cin != cout;
    if (has_proj) proj = make_conv(cin, cout, 1, 1, false, PadMode::reflect, 0.f, rng);
}

void ResBlock::forward(const Tensor& x, Tensor& y, Ctx* ctx, Scratch& s) const {
    Ctx local;
    Ctx& C = ctx ? *ctx : local;
    const int co = conv1.cout, h = x.h(), w = x.w();
    Tensor t(co, h, w);
    conv1.forward(x, t, &C.c1, s);
    C.n1 = Tensor(co, h, w);
    instance_norm(t, C.n1, &C.in1);
    C.r1 = C.n1;
    relu(C.r1);
    conv2.forward(C.r1, t, &C.c2, s);
    C.n2 = Tensor(co, h, w);
    instance_norm(t, C.n2, &C.in2);
    y = C.n2;
    if (!has_proj) {
        y += x;
    } else {
        Tensor tp(co, h, w);
        proj.forward(x, tp, &C.cp, s);
        C.np = Tensor(co, h, w);
        instance_norm(tp, C.np, &C.inp);
        y += C.np;
    }
}

void ResBlock::backward(const Ctx& C, const Tensor& dy, Tensor& dx, Scratch& s) {
    const int co = conv1.cout, h = dy.h(), w = dy.w();
    Tensor dt(co, h, w);
    instance_norm_backward(C.n2, C.in2, dy, dt);
    Tensor dr1(conv2.cin, h, w);
    conv2.backward(C.c2, dt, &dr1, s);
    relu_backward(C.r1, dr1);
    dt.fill(0.f);
    instance_norm_backward(C.n1, C.in1, dr1, dt);
    conv1.backward(C.c1, dt, &dx, s);
    if (!has_proj) {
        dx += dy;
    } else {
        Tensor dtp(co, h, w);
        instance_norm_backward(C.np, C.inp, dy, dtp);
        proj.backward(C.cp, dtp, &dx, s);
    }
}

void ResBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    add_param(out, prefix + ".conv1", conv1);
    add_param(out, prefix + ".conv2", conv2);
    if (has_proj) add_param(out, prefix + ".proj", proj);
}

void ResBlock::zero_grads() {
    std::fill(conv1.gw.begin(), conv1.gw.end(), 0.f);
    std::fill(conv2.gw.begin(), conv2.gw.end(), 0.f);
    if (has_proj) std::fill(proj.gw.begin(), proj.gw.end(), 0.f);
}

Generator::Generator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng = derive_rng(seed, "init/generator");
    const int c = spec_.base_channels;
    stem_ = make_conv(1, c, 7, 1, false, PadMode::constant, spec_.stem_pad_value, rng);
    down_[0] = make_conv(c, c, 3, 2, false, PadMode::reflect, 0.f, rng);
    down_[1] = make_conv(c, 2 * c, 3, 2, false, PadMode::reflect, 0.f, rng);
    down_[2] = make_conv(2 * c, 4 * c, 3, 2, false, PadMode::reflect, 0.f, rng);
    res_.resize(size_t(spec_.residual_blocks));
    for (auto& r : res_) r.configure(4 * c, 4 * c, rng);
    dec_[0].configure(4 * c, 2 * c, rng);
    dec_[1].configure(2 * c, c, rng);
    dec_[2].configure(c, c, rng);
    head_ = make_conv(c, 1, 7, 1, true, PadMode::reflect, 0.f, rng);
}

Tensor Generator::forward(const Tensor& x, Ctx* ctx, Scratch& s, Rng* noise_rng) const {
    check_input(x);
    Ctx local;
    Ctx& C = ctx ? *ctx : local;
    C.res.resize(res_.size());
    const int c = spec_.base_channels;
    const int h = x.h(), w = x.w();

    Tensor t(c, h, w);
    stem_.forward(x, t, &C.stem_c, s);
    C.stem_n = Tensor(c, h, w);
    instance_norm(t, C.stem_n, &C.stem_in);
    C.e0 = C.stem_n;
    relu(C.e0);

    const Tensor* prev = &C.e0;
    int hh = h, ww = w;
    for (int i = 0; i < 3; ++i) {
        hh /= 2;
        ww /= 2;
        Tensor ti(down_[i].cout, hh, ww);
        down_[i].forward(*prev, ti, &C.down_c[i], s);
        C.down_n[i] = Tensor(down_[i].cout, hh, ww);
        instance_norm(ti, C.down_n[i], &C.down_in[i]);
        C.down_r[i] = C.down_n[i];
        relu(C.down_r[i]);
        prev = &C.down_r[i];
    }

    Tensor cur = *prev;
    for (size_t i = 0; i < res_.size(); ++i) {
        Tensor out(4 * c, hh, ww);
        res_[i].forward(cur, out, &C.res[i], s);
        cur = std::move(out);
        if (noise_rng && int(i) + 1 == spec_.noise_after_block)
            add_gaussian_noise(cur, spec_.noise_sd, *noise_rng);
    }

    const Tensor* skips[3] = {&C.down_r[1], &C.down_r[0], &C.e0};
    for (int i = 0; i < 3; ++i) {
        hh *= 2;
        ww *= 2;
        Tensor up(cur.c(), hh, ww);
        upsample2x(cur, up);
        Tensor out(dec_[i].conv1.cout, hh, ww);
        dec_[i].forward(up, out, &C.dec[i], s);
        out += *skips[i];
        cur = std::move(out);
    }

    Tensor y(1, h, w);
    head_.forward(cur, y, &C.head_c, s);
    tanh_op(y);
    C.y = y;
    return y;
}

void Generator::backward(const Ctx& C, const Tensor& dLdy, Scratch& s, Tensor* dx) {
    const int c = spec_.base_channels;
    const int h = C.y.h(), w = C.y.w();

    Tensor dy = dLdy;
    tanh_backward(C.y, dy);
    Tensor d_e0(c, h, w);
    head_.backward(C.head_c, dy, &d_e0, s);
    // d_e0 currently holds the gradient of z2 = dec2_out + e0; it feeds the
    // decoder chain and keeps accumulating the e0 skip contribution.

    // Skip accumulators: each collects the decoder-side contribution first,
    // then the encoder loop adds the conv-input gradient before moving on.
    Tensor d_e1, d_e2;

    Tensor cur = d_e0;  // gradient wrt current decoder stage output
    int hh = h, ww = w;
    for (int i = 2; i >= 0; --i) {
        Tensor dup(dec_[i].conv1.cin, hh, ww);
        dec_[i].backward(C.dec[i], cur, dup, s);
        hh /= 2;
        ww /= 2;
        Tensor dprev(dec_[i].conv1.cin, hh, ww);
        upsample2x_backward(dup, dprev);
        if (i == 2) d_e1 = dprev;  // z1 feeds both dec1's chain and the e1 skip
        if (i == 1) d_e2 = dprev;
        cur = std::move(dprev);
    }
    // cur is now the gradient wrt the bottleneck output (after the last
    // residual block) at h/8.
    for (int i = int(res_.size()) - 1; i >= 0; --i) {
        Tensor dprev(4 * c, hh, ww);
        res_[i].backward(C.res[i], cur, dprev, s);
        cur = std::move(dprev);
    }

    // Encoder in reverse: cur holds d(down_r[2]).
    Tensor* enc_grads[3] = {&d_e0, &d_e1, &d_e2};
    for (int i = 2; i >= 0; --i) {
        relu_backward(C.down_r[i], cur);
        Tensor dt(down_[i].cout, cur.h(), cur.w());
        instance_norm_backward(C.down_n[i], C.down_in[i], cur, dt);
        Tensor din(down_[i].cin, cur.h() * 2, cur.w() * 2);
        down_[i].backward(C.down_c[i], dt, &din, s);
        if (i > 0) {
            *enc_grads[i] += din;  // add to the skip contribution
            cur = std::move(*enc_grads[i]);
        } else {
            d_e0 += din;
            cur = std::move(d_e0);
        }
    }

    relu_backward(C.e0, cur);
    Tensor dt(c, h, w);
    instance_norm_backward(C.stem_n, C.stem_in, cur, dt);
    stem_.backward(C.stem_c, dt, dx, s);
}

std::vector<ParamRef> Generator::params() {
    std::vector<ParamRef> out;
    add_param(out, "stem", stem_);
    for (int i = 0; i < 3; ++i) add_param(out, "down" + std::to_string(i), down_[i]);
    for (size_t i = 0; i < res_.size(); ++i)
        res_[i].collect_params("res" + std::to_string(i), out);
    for (int i = 0; i < 3; ++i) dec_[i].collect_params("dec" + std::to_string(i), out);
    add_param(out, "head", head_);
    return out;
}

size_t Generator::param_count() const {
    size_t n = stem_.param_count() + head_.param_count();
    for (const auto& d : down_) n += d.param_count();
    for (const auto& r : res_) {
        n += r.conv1.param_count() + r.conv2.param_count();
        if (r.has_proj) n += r.proj.param_count();
    }
    for (const auto& r : dec_) {
        n += r.conv1.param_count() + r.conv2.param_count();
        if (r.has_proj) n += r.proj.param_count();
    }
    return n;
}

void Generator::zero_grads() {
    for (auto& p : params()) std::fill(p.grad->begin(), p.grad->end(), 0.f);
}

Discriminator::Discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng = derive_rng(seed, "init/discriminator");
    const int c = spec_.base_channels;
    const bool in = spec_.use_instance_norm;
    conv_[0] = make_conv(1, c, 4, 1, !in, PadMode::reflect, 0.f, rng);
    conv_[1] = make_conv(c, 2 * c, 4, 2, !in, PadMode::reflect, 0.f, rng);
    conv_[2] = make_conv(2 * c, 4 * c, 4, 2, !in, PadMode::reflect, 0.f, rng);
    conv_[3] = make_conv(4 * c, 8 * c, 4, 2, !in, PadMode::reflect, 0.f, rng);
    conv_[4] = make_conv(8 * c, 8 * c, 4, 1, !in, PadMode::reflect, 0.f, rng);
    conv_[5] = make_conv(8 * c, 1, 4, 1, true, PadMode::reflect, 0.f, rng);
}

Tensor Discriminator::forward(const Tensor& x, Ctx* ctx, Scratch& s) const {
    check_input(x);
    // The two trailing stride-1 layers reflect-pad by 2, so the 8x-reduced
    // map must be at least 3 px per side.
    if (x.h() < 24 || x.w() < 24)
        throw std::invalid_argument("discriminator input must be at least 24x24, got " +
                                    std::to_string(x.h()) + "x" + std::to_string(x.w()));
    Ctx local;
    Ctx& C = ctx ? *ctx : local;
    const Tensor* prev = &x;
    int hh = x.h(), ww = x.w();
    for (int i = 0; i + 1 < kLayers; ++i) {
        hh = conv_[i].out_h(hh);
        ww = conv_[i].out_w(ww);
        Tensor t(conv_[i].cout, hh, ww);
        conv_[i].forward(*prev, t, &C.conv[i], s);
        if (spec_.use_instance_norm) {
            C.n[i] = Tensor(conv_[i].cout, hh, ww);
            instance_norm(t, C.n[i], &C.in[i]);
            C.r[i] = C.n[i];
        } else {
            C.r[i] = std::move(t);
        }
        leaky_relu(C.r[i], 0.2f);
        prev = &C.r[i];
    }
    Tensor y(1, hh, ww);
    conv_[kLayers - 1].forward(*prev, y, &C.conv[kLayers - 1], s);
    return y;
}

void Discriminator::backward(const Ctx& C, const Tensor& dLdy, Scratch& s, Tensor* dx) {
    Tensor cur = dLdy;
    for (int i = kLayers - 1; i >= 0; --i) {
        if (i < kLayers - 1) {
            leaky_relu_backward(C.r[i], 0.2f, cur);
            if (spec_.use_instance_norm) {
                Tensor dt(cur.c(), cur.h(), cur.w());
                instance_norm_backward(C.n[i], C.in[i], cur, dt);
                cur = std::move(dt);
            }
        }
        if (i > 0) {
            const Tensor& below = C.r[i - 1];
            Tensor din(below.c(), below.h(), below.w());
            conv_[i].backward(C.conv[i], cur, &din, s);
            cur = std::move(din);
        } else {
            conv_[0].backward(C.conv[0], cur, dx, s);
        }
    }
}

std::vector<ParamRef> Discriminator::params() {
    std::vector<ParamRef> out;
    for (int i = 0; i < kLayers; ++i) add_param(out, "layer" + std::to_string(i), conv_[i]);
    return out;
}

size_t Discriminator::param_count() const {
    size_t n = 0;
    for (const auto& c : conv_) n += c.param_count();
    return n;
}

void Discriminator::zero_grads() {
    for (auto& p : params()) std::fill(p.grad->begin(), p.grad->end(), 0.f);
}

std::vector<std::pair<int, int>> Discriminator::layer_shapes() {
    return {{4, 1}, {4, 2}, {4, 2}, {4, 2}, {4, 1}, {4, 1}};
}

int receptive_field(const std::vector<std::pair<int, int>>& layers) {
    if (layers.empty()) throw std::invalid_argument("receptive_field: empty layer list");
    long rf = 1, jump = 1;
    for (auto [k, s] : layers) {
        rf += long(k - 1) * jump;
        jump *= s;
    }
    return int(rf);
}

}  // namespace ctxlate::nn
