#pragma once

#include <functional>
#include <vector>

#include "edmsr/rng.hpp"
#include "edmsr/tensor.hpp"

namespace edmsr {

// Decreasing sigma grid for probability-flow ODE sampling. grid has steps+1
// entries ending at exactly 0.
struct NoiseSchedule {
    double sigma_max = 80.0;
    double sigma_min = 0.002;
    double rho       = 7.0;
    int steps        = 20;
    std::vector<double> grid;

    void validate() const;
};

// rho-power-spaced grid:
//   sigma_i = (smax^(1/rho) + i/(N-1) * (smin^(1/rho) - smax^(1/rho)))^rho
// for i < N, with a final 0 appended. N == 1 gives [smax, 0].
NoiseSchedule karras_schedule(double sigma_max, double sigma_min, double rho, int steps);

// Preconditioned denoiser with the conditioning bound by the caller; must
// never mutate its inputs.
using DenoiserFn = std::function<Tensor(const Tensor& x, double sigma, const Tensor& cond)>;

// Euler (order 1): x <- x + (sigma_{i+1} - sigma_i) * (x - D(x, sigma_i)) / sigma_i,
// starting from x = sigma_0 * eps.
Tensor euler_sample(const DenoiserFn& denoiser, const NoiseSchedule& schedule,
                    const Tensor& cond, const std::vector<int64_t>& shape, Rng& rng);

// Heun (order 2): Euler predictor plus trapezoidal correction; the correction
// is skipped when the step lands exactly on sigma == 0.
Tensor heun_sample(const DenoiserFn& denoiser, const NoiseSchedule& schedule,
                   const Tensor& cond, const std::vector<int64_t>& shape, Rng& rng);

}  // namespace edmsr
