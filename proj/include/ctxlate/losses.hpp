// Loss terms of the composite objective. Every term comes in a value form
// and a gradient form; gradients accumulate scaled contributions into
// caller-owned tensors so the trainer can sum chain-rule paths.
//
// Reduction convention: all pixel sums are means, so the lambda weights are
// independent of image size and batch size.
#pragma once

#include <optional>

#include "ctxlate/nn/tensor.hpp"
#include "ctxlate/preprocess.hpp"

namespace ctxlate {

struct LossWeights {
    double lambda_cycle = 10.0;
    double lambda_adv = 1.0;
    double lambda_grad = 0.1;
    double lambda_tv = 0.01;
    double lambda_air = 1.0;
    double lambda_idem = 1.0;
    double lambda_d = 1.0;
    float air_threshold_scaled = ctxlate::air_threshold_scaled();  // scaled value of -465 HU

    void validate() const;
};

struct LossBreakdown {
    double cycle_a = 0, cycle_b = 0;
    double adv = 0, tv = 0, air = 0, grad = 0, idem = 0;
    double d = 0;
    double loss_g = 0, loss_d = 0;
};

/// lambda_d * [MSE(dp_fake,0) + MSE(dc_real,1) + MSE(dc_fake,0) + MSE(dp_real,1)]
double loss_discriminator(const nn::Tensor& dp_fake, const nn::Tensor& dc_real,
                          const nn::Tensor& dc_fake, const nn::Tensor& dp_real,
                          const LossWeights& w);
/// Same value; also accumulates d(loss)/d(map) into any non-null grad.
double loss_discriminator_grad(const nn::Tensor& dp_fake, const nn::Tensor& dc_real,
                               const nn::Tensor& dc_fake, const nn::Tensor& dp_real,
                               const LossWeights& w, nn::Tensor* g_dp_fake,
                               nn::Tensor* g_dc_real, nn::Tensor* g_dc_fake,
                               nn::Tensor* g_dp_real);

struct CycleLosses {
    double a = 0;  // mean|x - x_cyc|
    double b = 0;  // mean|y - y_cyc|
};
CycleLosses loss_cycle(const nn::Tensor& x, const nn::Tensor& x_cyc, const nn::Tensor& y,
                       const nn::Tensor& y_cyc);

/// MSE(dp_of_fake, 1) + MSE(dc_of_fake, 1)
double loss_adversarial_g(const nn::Tensor& dp_of_fake, const nn::Tensor& dc_of_fake);

/// Anisotropic total variation: mean of |forward differences| pooled over
/// both directions. Applied to the synthesized PlanCT only.
double loss_tv(const nn::Tensor& fake_plan);

/// mean|psi(gx) - psi(x)| + mean|psi(gy) - psi(y)| with
/// psi(z) = z for z < threshold, 0 otherwise.
double loss_air(const nn::Tensor& x, const nn::Tensor& gx, const nn::Tensor& y,
                const nn::Tensor& gy, float threshold);

/// 3x3 Sobel correlation under reflect padding. g1 differentiates along
/// columns (x), g2 along rows (y). Input must be at least 3x3.
void sobel_gradients(const nn::Tensor& img, nn::Tensor& g1, nn::Tensor& g2);
/// Adjoint of sobel_gradients: accumulates scale * S^T(gin) into out.
void sobel_adjoint(const nn::Tensor& g1_in, const nn::Tensor& g2_in, float scale,
                   nn::Tensor& out);

/// Sum over both Sobel directions of mean-square of d(x - gx), plus the
/// same for (y - gy).
double loss_grad(const nn::Tensor& x, const nn::Tensor& gx, const nn::Tensor& y,
                 const nn::Tensor& gy);

/// mean|gx - ggx| + mean|gy - ggy|
double loss_idem(const nn::Tensor& gx, const nn::Tensor& ggx, const nn::Tensor& gy,
                 const nn::Tensor& ggy);

// Gradient forms. Each returns the term value and accumulates
// scale * d(term)/d(input) into the non-null tensors.
double l1_mean_grad(const nn::Tensor& a, const nn::Tensor& b, float scale, nn::Tensor* ga,
                    nn::Tensor* gb);
double mse_to_const_grad(const nn::Tensor& a, float target, float scale, nn::Tensor* ga);
double loss_tv_grad(const nn::Tensor& img, float scale, nn::Tensor* g);
double loss_air_grad(const nn::Tensor& x, const nn::Tensor& gx, float threshold, float scale,
                     nn::Tensor* g_gx, nn::Tensor* g_x = nullptr);
double loss_grad_grad(const nn::Tensor& x, const nn::Tensor& gx, float scale, nn::Tensor* g_gx,
                      nn::Tensor* g_x = nullptr);

struct GeneratorLossTerms {
    double cycle_a = 0, cycle_b = 0;
    double adv = 0, tv = 0, air = 0, grad = 0, idem = 0;
    double d = 0;  // carried through for logging
};

/// Weighted composite. Throws std::runtime_error on any non-finite term.
LossBreakdown compose_generator_loss(const GeneratorLossTerms& terms, const LossWeights& w);

}  // namespace ctxlate
