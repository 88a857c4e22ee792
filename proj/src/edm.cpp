#include "edmsr/edm.hpp"

#include <cmath>

namespace edmsr {

double Preconditioner::c_in(double sigma) const {
    require(sigma >= 0.0 && sigma_data > 0.0, "preconditioner: sigma must be >= 0");
    return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data);
}

double Preconditioner::c_skip(double sigma) const {
    require(sigma >= 0.0 && sigma_data > 0.0, "preconditioner: sigma must be >= 0");
    const double sd2 = sigma_data * sigma_data;
    return sd2 / (sigma * sigma + sd2);
}

double Preconditioner::c_out(double sigma) const {
    return sigma * std::sqrt(c_skip(sigma));
}

double Preconditioner::c_noise(double sigma) const {
    require(sigma > 0.0, "preconditioner: c_noise is undefined at sigma == 0");
    return 0.25 * std::log(sigma);
}

PrecondCoeffs precondition_coeffs(double sigma, const Preconditioner& pc) {
    return {pc.c_in(sigma), pc.c_skip(sigma), pc.c_out(sigma), pc.c_noise(sigma)};
}

double SigmaDistribution::sample(Rng& rng) const {
    require(p_std > 0.0, "sigma distribution: p_std must be positive");
    return std::exp(p_mean + p_std * rng.normal());
}

Tensor perturb(const Tensor& x_hr, double sigma, Rng& rng) {
    require(sigma >= 0.0, "perturb: sigma must be >= 0");
    Tensor out = x_hr;
    if (sigma > 0.0)
        for (double& v : out.data)
            v += sigma * rng.normal();
    return out;
}

Graph::NodeId denoise_node(Graph& g, ParameterStore& store, const UNet& net,
                           const Preconditioner& pc, Graph::NodeId x_sigma,
                           const std::vector<double>& sigmas, Graph::NodeId cond) {
    const int64_t B = g.value(x_sigma).shape[0];
    require(static_cast<int64_t>(sigmas.size()) == B,
            "denoise: one sigma per batch element required");
    std::vector<double> cin(static_cast<size_t>(B)), cskip(static_cast<size_t>(B)),
        cout_(static_cast<size_t>(B)), cnoise(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        const PrecondCoeffs c     = precondition_coeffs(sigmas[static_cast<size_t>(b)], pc);
        cin[static_cast<size_t>(b)]   = c.c_in;
        cskip[static_cast<size_t>(b)] = c.c_skip;
        cout_[static_cast<size_t>(b)] = c.c_out;
        cnoise[static_cast<size_t>(b)] = c.c_noise;
    }
    Graph::NodeId x_in = g.sample_scale(x_sigma, cin);
    Graph::NodeId f    = net.forward(g, store, x_in, cond, cnoise);
    return g.add(g.sample_scale(x_sigma, cskip), g.sample_scale(f, cout_));
}

Tensor denoise(ParameterStore& store, const UNet& net, const Preconditioner& pc,
               const Tensor& x_sigma, double sigma, const Tensor& cond) {
    Graph g;
    Graph::NodeId x = g.input(x_sigma);
    Graph::NodeId c = g.input(cond);
    const int64_t B = x_sigma.shape[0];
    return g.value(denoise_node(g, store, net, pc, x,
                                std::vector<double>(static_cast<size_t>(B), sigma), c));
}

Graph::NodeId edm_loss_given(Graph& g, ParameterStore& store, const UNet& net,
                             const Preconditioner& pc, const Tensor& x_hr, const Tensor& cond,
                             const std::vector<double>& sigmas, const Tensor& noise) {
    require(x_hr.numel() > 0, "edm_loss: empty batch");
    require(noise.shape == x_hr.shape, "edm_loss: noise must match x_hr shape");
    const int64_t B = x_hr.shape[0];
    require(static_cast<int64_t>(sigmas.size()) == B,
            "edm_loss: one sigma per batch element required");

    Tensor x_sigma = x_hr;
    const int64_t S = x_hr.numel() / B;
    for (int64_t b = 0; b < B; ++b) {
        const double s = sigmas[static_cast<size_t>(b)];
        for (int64_t i = 0; i < S; ++i)
            x_sigma.data[static_cast<size_t>(b * S + i)] +=
                s * noise.data[static_cast<size_t>(b * S + i)];
    }

    Graph::NodeId xs = g.input(std::move(x_sigma));
    Graph::NodeId cd = g.input(cond);
    Graph::NodeId d  = denoise_node(g, store, net, pc, xs, sigmas, cd);
    return g.mse(d, g.input(x_hr));
}

Graph::NodeId edm_loss(Graph& g, ParameterStore& store, const UNet& net,
                       const Preconditioner& pc, const Tensor& x_hr, const Tensor& cond,
                       const SigmaDistribution& dist, Rng& rng,
                       std::vector<double>* sigmas_out) {
    const int64_t B = x_hr.shape[0];
    std::vector<double> sigmas(static_cast<size_t>(B));
    for (double& s : sigmas)
        s = dist.sample(rng);
    Tensor noise(x_hr.shape);
    for (double& v : noise.data)
        v = rng.normal();
    if (sigmas_out)
        *sigmas_out = sigmas;
    return edm_loss_given(g, store, net, pc, x_hr, cond, sigmas, noise);
}

// ------------------------------------------------------------- optimizer --

void TrainConfig::validate() const {
    require(lr > 0.0 && weight_decay >= 0.0, "train config: bad lr/weight_decay");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0,
            "train config: betas must lie in (0,1)");
    require(eps > 0.0, "train config: eps must be positive");
    require(batch_size >= 1 && grad_accum_steps >= 1, "train config: bad batch settings");
    require(updates_per_epoch >= 1 && epochs >= 1, "train config: bad schedule");
    require(patches_per_volume >= 1, "train config: patches_per_volume must be >= 1");
}

void adamw_step(ParameterStore& store, OptimizerState& state, const TrainConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

    for (auto& [name, e] : store.entries()) {
        if (!e.trainable)
            continue;
        require(e.tensor.grad.has_value(),
                "adamw: parameter " + name + " has no gradient");
        auto& mom = state.moments[name];
        if (mom.m.empty()) {
            mom.m.assign(e.tensor.data.size(), 0.0);
            mom.v.assign(e.tensor.data.size(), 0.0);
        }
        auto& p = e.tensor.data;
        auto& g = *e.tensor.grad;
        for (size_t i = 0; i < p.size(); ++i) {
            // decoupled decay, independent of the moment update
            p[i] -= cfg.lr * cfg.weight_decay * p[i];
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// -------------------------------------------------------------- training --

TrainResult train(ParameterStore& store, const UNet& net, const Preconditioner& pc,
                  const SigmaDistribution& dist, const TrainConfig& cfg,
                  const BatchSampler& sampler, const std::function<void(int64_t)>& on_epoch,
                  int64_t first_update_index) {
    cfg.validate();
    require(static_cast<bool>(sampler), "train: no batch sampler provided");

    Rng rng(cfg.seed);
    OptimizerState opt;
    TrainResult result;

    const double inv_accum = 1.0 / static_cast<double>(cfg.grad_accum_steps);
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int64_t u = 0; u < cfg.updates_per_epoch; ++u) {
            store.zero_grads();
            double loss_acc  = 0.0;
            double sigma_acc = 0.0;
            for (int a = 0; a < cfg.grad_accum_steps; ++a) {
                Tensor x_hr, cond;
                sampler(rng, cfg.batch_size, x_hr, cond);
                require(x_hr.numel() > 0 && x_hr.shape[0] == cfg.batch_size,
                        "train: sampler produced a bad batch");
                Graph g;
                std::vector<double> sigmas;
                Graph::NodeId loss = edm_loss(g, store, net, pc, x_hr, cond, dist, rng, &sigmas);
                loss_acc += g.value(loss).data[0];
                for (double s : sigmas)
                    sigma_acc += s;
                g.backward(loss);
            }
            store.scale_grads(inv_accum);
            adamw_step(store, opt, cfg);

            TrainLogRow row;
            row.update     = first_update_index + epoch * cfg.updates_per_epoch + u;
            row.epoch      = epoch;
            row.sigma_mean = sigma_acc /
                             static_cast<double>(cfg.grad_accum_steps * cfg.batch_size);
            row.loss = loss_acc * inv_accum;
            result.log.push_back(row);
        }
        if (on_epoch)
            on_epoch(epoch + 1);
    }
    return result;
}

}  // namespace edmsr
