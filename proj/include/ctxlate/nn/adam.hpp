#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ctxlate/nn/networks.hpp"

namespace ctxlate::nn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a fixed parameter registry. First/second moments are stored
/// flat in registry order, which is also their checkpoint layout.
class Adam {
public:
    Adam(std::vector<ParamRef> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        size_t total = 0;
        for (const auto& p : params_) total += p.value->size();
        m_.assign(total, 0.f);
        v_.assign(total, 0.f);
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        size_t off = 0;
        for (const auto& p : params_) {
            float* w = p.value->data();
            const float* g = p.grad->data();
            const size_t n = p.value->size();
            if (p.grad->size() != n)
                throw std::logic_error("Adam: gradient size mismatch for " + p.name);
            for (size_t i = 0; i < n; ++i) {
                float& m = m_[off + i];
                float& v = v_[off + i];
                m = float(cfg_.beta1 * m + (1.0 - cfg_.beta1) * g[i]);
                v = float(cfg_.beta2 * v + (1.0 - cfg_.beta2) * double(g[i]) * g[i]);
                const double mhat = m / c1;
                const double vhat = v / c2;
                w[i] = float(w[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
            off += n;
        }
    }

    std::int64_t update_count() const { return t_; }
    std::vector<float>& moment1() { return m_; }
    std::vector<float>& moment2() { return v_; }
    void set_update_count(std::int64_t t) { t_ = t; }

private:
    std::vector<ParamRef> params_;
    AdamConfig cfg_;
    std::vector<float> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace ctxlate::nn
