#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edmsr/graph.hpp"
#include "edmsr/params.hpp"

namespace edmsr {

// F_theta backbone configuration. dims selects 2D (slice) or 3D (patch)
// convolutions. input_channels counts the noisy channel plus conditioning
// channels: 2 for the 3D pipeline, 3 for the 2.5D pipeline.
struct UNetConfig {
    int dims = 2;
    std::vector<int> channels{8, 8, 16};
    int res_blocks          = 2;
    bool attention_deepest  = true;
    int input_channels      = 3;
    int noise_embed_dim     = 32;
    int gn_groups           = 4;
    int attn_heads          = 4;

    void validate() const;

    // spatial dims must divide by this (one stride-2 stage per level)
    int64_t spatial_divisor() const { return int64_t(1) << channels.size(); }

    static UNetConfig desk_3d();
    static UNetConfig desk_2d();
    static UNetConfig paper_3d();   // [32,64,128,256], constructible, not CI-trained
    static UNetConfig paper_25d();  // [64,64,128,256]

    std::map<std::string, std::string> to_meta() const;
    static UNetConfig from_meta(const std::map<std::string, std::string>& meta);
};

// Stateless forward builder; all parameters live in a ParameterStore created
// by build_denoiser_params with deterministic names.
class UNet {
public:
    explicit UNet(UNetConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const UNetConfig& config() const { return cfg_; }

    // Raw F_theta. x_scaled is the c_in-scaled noisy input (B,1,sp..),
    // cond the never-noised conditioning channels (B,input_channels-1,sp..),
    // c_noise one value per batch element. Output has 1 channel and the
    // input's spatial dims.
    Graph::NodeId forward(Graph& g, ParameterStore& store, Graph::NodeId x_scaled,
                          Graph::NodeId cond, const std::vector<double>& c_noise) const;

private:
    UNetConfig cfg_;
};

// Fresh parameter store for the given config; equal seeds give identical
// initial parameters. Fourier frequencies are stored as a non-trainable
// entry so checkpoints are self-contained.
ParameterStore build_denoiser_params(const UNetConfig& cfg, uint64_t seed);

}  // namespace edmsr
