#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ctxlate::nn {

/// Dense CHW float tensor. Batch size is always 1 in this codebase, so a
/// single image is (channels, height, width) and a 2D map is (1, h, w).
class Tensor {
public:
    Tensor() = default;
    Tensor(int c, int h, int w) : c_(c), h_(h), w_(w), v_(static_cast<size_t>(c) * h * w, 0.f) {
        if (c <= 0 || h <= 0 || w <= 0)
            throw std::invalid_argument("Tensor: dimensions must be positive");
    }

    static Tensor full(int c, int h, int w, float value) {
        Tensor t(c, h, w);
        std::fill(t.v_.begin(), t.v_.end(), value);
        return t;
    }

    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    int size() const { return static_cast<int>(v_.size()); }
    bool empty() const { return v_.empty(); }
    bool same_shape(const Tensor& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }

    float& at(int ci, int y, int x) { return v_[idx(ci, y, x)]; }
    float at(int ci, int y, int x) const { return v_[idx(ci, y, x)]; }

    float& operator[](size_t i) { return v_[i]; }
    float operator[](size_t i) const { return v_[i]; }

    /// Pointer to the start of row y in channel ci.
    float* row(int ci, int y) { return v_.data() + idx(ci, y, 0); }
    const float* row(int ci, int y) const { return v_.data() + idx(ci, y, 0); }

    void fill(float value) { std::fill(v_.begin(), v_.end(), value); }

    Tensor& operator+=(const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
        return *this;
    }
    Tensor& operator*=(float s) {
        for (auto& x : v_) x *= s;
        return *this;
    }

    /// this += s * o
    void axpy(float s, const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < v_.size(); ++i) v_[i] += s * o.v_[i];
    }

private:
    size_t idx(int ci, int y, int x) const {
        assert(ci >= 0 && ci < c_ && y >= 0 && y < h_ && x >= 0 && x < w_);
        return (static_cast<size_t>(ci) * h_ + y) * w_ + x;
    }

    int c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> v_;
};

}  // namespace ctxlate::nn
