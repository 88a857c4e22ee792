#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "edmsr/graph.hpp"
#include "edmsr/params.hpp"
#include "edmsr/rng.hpp"
#include "edmsr/tensor.hpp"
#include "edmsr/unet.hpp"

namespace edmsr {

// EDM scaling functions around the raw network:
//   c_in   = 1/sqrt(sigma^2 + sigma_data^2)
//   c_skip = sigma_data^2 / (sigma^2 + sigma_data^2)
//   c_out  = sigma * sqrt(c_skip)
//   c_noise = ln(sigma)/4
struct Preconditioner {
    double sigma_data = 0.5;

    double c_in(double sigma) const;
    double c_skip(double sigma) const;
    double c_out(double sigma) const;
    double c_noise(double sigma) const;  // throws at sigma == 0
};

struct PrecondCoeffs {
    double c_in, c_skip, c_out, c_noise;
};

// All four coefficients; requires sigma > 0 because c_noise is undefined at 0.
PrecondCoeffs precondition_coeffs(double sigma, const Preconditioner& pc);

// ln(sigma) ~ N(p_mean, p_std^2)
struct SigmaDistribution {
    double p_mean = -1.2;
    double p_std  = 1.2;

    double sample(Rng& rng) const;
};

// x_sigma = x + sigma * eps, eps ~ N(0, I)
Tensor perturb(const Tensor& x_hr, double sigma, Rng& rng);

// Graph-mode preconditioned denoiser, one sigma per batch element:
//   D = c_skip * x_sigma + c_out * F(c_in * x_sigma, c_noise, cond)
Graph::NodeId denoise_node(Graph& g, ParameterStore& store, const UNet& net,
                           const Preconditioner& pc, Graph::NodeId x_sigma,
                           const std::vector<double>& sigmas, Graph::NodeId cond);

// Eval convenience: plain tensors in and out.
Tensor denoise(ParameterStore& store, const UNet& net, const Preconditioner& pc,
               const Tensor& x_sigma, double sigma, const Tensor& cond);

// Loss with injected noise draws (tests and the accumulation-equivalence
// check): sigmas and noise must match the batch.
Graph::NodeId edm_loss_given(Graph& g, ParameterStore& store, const UNet& net,
                             const Preconditioner& pc, const Tensor& x_hr, const Tensor& cond,
                             const std::vector<double>& sigmas, const Tensor& noise);

// Draws one sigma per batch element and fresh noise, then delegates.
Graph::NodeId edm_loss(Graph& g, ParameterStore& store, const UNet& net,
                       const Preconditioner& pc, const Tensor& x_hr, const Tensor& cond,
                       const SigmaDistribution& dist, Rng& rng,
                       std::vector<double>* sigmas_out = nullptr);

// ------------------------------------------------------------- optimizer --

struct TrainConfig {
    double lr           = 1e-4;
    double weight_decay = 1e-2;
    double beta1        = 0.9;
    double beta2        = 0.999;
    double eps          = 1e-8;
    int batch_size         = 4;
    int grad_accum_steps   = 1;
    int updates_per_epoch  = 100;
    int epochs             = 1;
    int patches_per_volume = 8;
    uint64_t seed          = 0;

    void validate() const;
};

struct OptimizerState {
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> moments;
    int64_t t = 0;
};

// Decoupled weight decay AdamW update from the gradients currently held by
// the store's trainable entries.
void adamw_step(ParameterStore& store, OptimizerState& state, const TrainConfig& cfg);

// -------------------------------------------------------------- training --

struct TrainLogRow {
    int64_t update;
    int64_t epoch;
    double sigma_mean;
    double loss;
};

// Fills one micro-batch of (x_hr, cond) tensors. Must draw all randomness
// from the provided rng so runs are reproducible.
using BatchSampler = std::function<void(Rng& rng, int batch_size, Tensor& x_hr, Tensor& cond)>;

struct TrainResult {
    std::vector<TrainLogRow> log;
};

// Algorithm: per update, accumulate grad_accum_steps micro-batch gradients
// (mean of micro-batch means), one AdamW step. on_epoch, when set, fires
// after each epoch with the 1-based epoch index.
TrainResult train(ParameterStore& store, const UNet& net, const Preconditioner& pc,
                  const SigmaDistribution& dist, const TrainConfig& cfg,
                  const BatchSampler& sampler,
                  const std::function<void(int64_t)>& on_epoch = {},
                  int64_t first_update_index = 0);

}  // namespace edmsr
