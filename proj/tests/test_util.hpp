#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "ctxlate/nn/rng.hpp"
#include "ctxlate/nn/tensor.hpp"

namespace testutil {

/// Fresh directory under the system temp root, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::mt19937_64 rng(std::random_device{}());
        path = base / ("ctxlate-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline ctxlate::nn::Tensor random_tensor(int c, int h, int w, std::uint64_t seed, float lo = -1.f,
                                         float hi = 1.f) {
    ctxlate::nn::Tensor t(c, h, w);
    ctxlate::nn::Rng rng(seed);
    for (int i = 0; i < t.size(); ++i)
        t[size_t(i)] = lo + float(rng.uniform()) * (hi - lo);
    return t;
}

/// Central finite difference of a scalar functional with respect to one
/// tensor entry, using the exactly-representable step actually taken.
template <typename Fn>
double fd_partial(ctxlate::nn::Tensor& x, int idx, double h, Fn&& value) {
    const float old = x[size_t(idx)];
    const float hi = float(old + h), lo = float(old - h);
    x[size_t(idx)] = hi;
    const double vp = value();
    x[size_t(idx)] = lo;
    const double vm = value();
    x[size_t(idx)] = old;
    return (vp - vm) / (double(hi) - double(lo));
}

}  // namespace testutil
