#pragma once

#include <vector>

#include "dtd/tensor.hpp"

namespace dtd {

// Forward-diffusion noise schedule. Index 0 is the clean sample: alpha_bar[0]
// is 1 by convention and alpha_bar[k] = prod_{s=1..k} (1 - beta[s]) for k >= 1,
// which keeps both boundary behaviors (x_0 unchanged, x_{T-1} near pure noise).
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    double sqrt_alpha_bar(int k) const;
    double sqrt_one_minus_alpha_bar(int k) const;
};

// Linear beta interpolation over T steps. Requires T >= 2 and
// 0 < beta_start <= beta_end < 1. A final alpha_bar above 0.05 is legal
// (tiny schedules exist for testing) but warned about, since scoring
// assumes the far end of the chain is close to pure noise.
NoiseSchedule build_schedule(int T, double beta_start, double beta_end);

// x_k = sqrt(alpha_bar_k) * x0 + sqrt(1 - alpha_bar_k) * eps, elementwise.
Tensor forward_diffuse(const Tensor& x0, int k, const Tensor& eps, const NoiseSchedule& schedule);

// Mean over batch rows of the squared L2 distance between noise and
// prediction. Rank-1 tensors are a batch of one.
double diffusion_loss(const Tensor& eps, const Tensor& eps_hat);

}  // namespace dtd
