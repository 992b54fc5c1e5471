#include "dtd/schedule.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace dtd {

double NoiseSchedule::sqrt_alpha_bar(int k) const { return std::sqrt(alpha_bars.at(k)); }

double NoiseSchedule::sqrt_one_minus_alpha_bar(int k) const {
    return std::sqrt(1.0 - alpha_bars.at(k));
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw std::invalid_argument("schedule needs T >= 2, got " + std::to_string(T));
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw std::invalid_argument("schedule needs 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    for (int k = 0; k < T; ++k) {
        s.betas[k] = beta_start + (beta_end - beta_start) * static_cast<double>(k) /
                                      static_cast<double>(T - 1);
        s.alphas[k] = 1.0 - s.betas[k];
    }
    s.alpha_bars[0] = 1.0;  // index 0 is the clean sample
    for (int k = 1; k < T; ++k) s.alpha_bars[k] = s.alpha_bars[k - 1] * s.alphas[k];
    if (s.alpha_bars[T - 1] >= 0.05) {
        std::cerr << "warning: alpha_bar[T-1] = " << s.alpha_bars[T - 1]
                  << " >= 0.05; the chain end is far from pure noise\n";
    }
    return s;
}

Tensor forward_diffuse(const Tensor& x0, int k, const Tensor& eps, const NoiseSchedule& schedule) {
    if (k < 0 || k >= schedule.T) {
        throw std::invalid_argument("diffusion step " + std::to_string(k) + " outside [0, " +
                                    std::to_string(schedule.T) + ")");
    }
    if (!x0.same_shape(eps)) {
        throw std::invalid_argument("forward_diffuse: noise shape " + eps.shape_str() +
                                    " does not match sample " + x0.shape_str());
    }
    const double a = schedule.sqrt_alpha_bar(k);
    const double b = schedule.sqrt_one_minus_alpha_bar(k);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

double diffusion_loss(const Tensor& eps, const Tensor& eps_hat) {
    if (!eps.same_shape(eps_hat)) {
        throw std::invalid_argument("diffusion_loss: shapes differ, " + eps.shape_str() + " vs " +
                                    eps_hat.shape_str());
    }
    const int rows = eps.rows();
    const int cols = eps.cols();
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double d = eps.at(r, c) - eps_hat.at(r, c);
            acc += d * d;
        }
    }
    return acc / static_cast<double>(rows);
}

}  // namespace dtd
