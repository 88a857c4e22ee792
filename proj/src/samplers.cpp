#include "edmsr/samplers.hpp"

#include <cmath>

#include "edmsr/error.hpp"

namespace edmsr {

void NoiseSchedule::validate() const {
    require(steps >= 1, "schedule: steps must be >= 1");
    require(grid.size() == static_cast<size_t>(steps) + 1, "schedule: grid size mismatch");
    require(grid.back() == 0.0, "schedule: grid must terminate at 0");
    require(grid.front() == sigma_max, "schedule: grid must start at sigma_max");
    for (size_t i = 0; i + 1 < grid.size(); ++i)
        require(grid[i] > grid[i + 1], "schedule: grid must be strictly decreasing");
}

NoiseSchedule karras_schedule(double sigma_max, double sigma_min, double rho, int steps) {
    require(sigma_max > sigma_min && sigma_min > 0.0,
            "karras_schedule: need sigma_max > sigma_min > 0");
    require(rho > 0.0, "karras_schedule: rho must be positive");
    require(steps >= 1, "karras_schedule: steps must be >= 1");

    NoiseSchedule s;
    s.sigma_max = sigma_max;
    s.sigma_min = sigma_min;
    s.rho       = rho;
    s.steps     = steps;
    s.grid.resize(static_cast<size_t>(steps) + 1);
    if (steps == 1) {
        s.grid[0] = sigma_max;
    } else {
        const double max_r = std::pow(sigma_max, 1.0 / rho);
        const double min_r = std::pow(sigma_min, 1.0 / rho);
        for (int i = 0; i < steps; ++i) {
            const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
            s.grid[static_cast<size_t>(i)] = std::pow(max_r + t * (min_r - max_r), rho);
        }
        s.grid[0]                              = sigma_max;
        s.grid[static_cast<size_t>(steps - 1)] = sigma_min;
    }
    s.grid[static_cast<size_t>(steps)] = 0.0;
    s.validate();
    return s;
}

namespace {

void check_state(const Tensor& x, const char* solver, int step) {
    for (double v : x.data)
        if (!std::isfinite(v))
            fail(std::string(solver) + ": non-finite state at step " + std::to_string(step));
}

Tensor init_state(const NoiseSchedule& schedule, const std::vector<int64_t>& shape, Rng& rng) {
    schedule.validate();
    Tensor x(shape);
    for (double& v : x.data)
        v = schedule.grid[0] * rng.normal();
    return x;
}

}  // namespace

Tensor euler_sample(const DenoiserFn& denoiser, const NoiseSchedule& schedule,
                    const Tensor& cond, const std::vector<int64_t>& shape, Rng& rng) {
    Tensor x = init_state(schedule, shape, rng);
    for (int i = 0; i < schedule.steps; ++i) {
        const double s  = schedule.grid[static_cast<size_t>(i)];
        const double sn = schedule.grid[static_cast<size_t>(i) + 1];
        const Tensor d  = denoiser(x, s, cond);
        require(d.shape == x.shape, "euler_sample: denoiser changed the shape");
        const double dt = sn - s;
        for (size_t j = 0; j < x.data.size(); ++j)
            x.data[j] += dt * (x.data[j] - d.data[j]) / s;
        check_state(x, "euler_sample", i);
    }
    return x;
}

Tensor heun_sample(const DenoiserFn& denoiser, const NoiseSchedule& schedule,
                   const Tensor& cond, const std::vector<int64_t>& shape, Rng& rng) {
    Tensor x = init_state(schedule, shape, rng);
    Tensor x2(shape);
    for (int i = 0; i < schedule.steps; ++i) {
        const double s  = schedule.grid[static_cast<size_t>(i)];
        const double sn = schedule.grid[static_cast<size_t>(i) + 1];
        const Tensor d  = denoiser(x, s, cond);
        require(d.shape == x.shape, "heun_sample: denoiser changed the shape");
        const double dt = sn - s;
        if (sn == 0.0) {
            // no denoiser evaluation is possible at sigma == 0; predictor only
            for (size_t j = 0; j < x.data.size(); ++j)
                x.data[j] += dt * (x.data[j] - d.data[j]) / s;
        } else {
            for (size_t j = 0; j < x.data.size(); ++j)
                x2.data[j] = x.data[j] + dt * (x.data[j] - d.data[j]) / s;
            const Tensor d2 = denoiser(x2, sn, cond);
            for (size_t j = 0; j < x.data.size(); ++j) {
                const double slope  = (x.data[j] - d.data[j]) / s;
                const double slope2 = (x2.data[j] - d2.data[j]) / sn;
                x.data[j] += dt * 0.5 * (slope + slope2);
            }
        }
        check_state(x, "heun_sample", i);
    }
    return x;
}

}  // namespace edmsr
