#include "edmsr/unet.hpp"

#include <cmath>
#include <sstream>

#include "edmsr/rng.hpp"

namespace edmsr {

namespace {

std::string join_channels(const std::vector<int>& ch) {
    std::string s;
    for (size_t i = 0; i < ch.size(); ++i) {
        if (i)
            s += ",";
        s += std::to_string(ch[i]);
    }
    return s;
}

std::vector<int> parse_channels(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        out.push_back(std::stoi(tok));
    return out;
}

}  // namespace

void UNetConfig::validate() const {
    require(dims == 2 || dims == 3, "unet: dims must be 2 or 3");
    require(!channels.empty(), "unet: channels-per-level must be nonempty");
    for (int c : channels)
        require(c >= 1 && c % gn_groups == 0,
                "unet: every channel width must be divisible by gn_groups");
    require(res_blocks >= 1, "unet: res_blocks must be >= 1");
    require(input_channels >= 2, "unet: need the noisy channel plus conditioning");
    require(noise_embed_dim >= 2 && noise_embed_dim % 2 == 0,
            "unet: noise_embed_dim must be even");
    require(attn_heads >= 1 && channels.back() % attn_heads == 0,
            "unet: attn_heads must divide the deepest channel width");
}

UNetConfig UNetConfig::desk_3d() {
    UNetConfig c;
    c.dims           = 3;
    c.channels       = {8, 16};
    c.input_channels = 2;
    return c;
}

UNetConfig UNetConfig::desk_2d() {
    UNetConfig c;
    c.dims           = 2;
    c.channels       = {8, 8, 16};
    c.input_channels = 3;
    return c;
}

UNetConfig UNetConfig::paper_3d() {
    UNetConfig c;
    c.dims            = 3;
    c.channels        = {32, 64, 128, 256};
    c.input_channels  = 2;
    c.noise_embed_dim = 128;
    c.gn_groups       = 8;
    return c;
}

UNetConfig UNetConfig::paper_25d() {
    UNetConfig c;
    c.dims            = 2;
    c.channels        = {64, 64, 128, 256};
    c.input_channels  = 3;
    c.noise_embed_dim = 128;
    c.gn_groups       = 8;
    return c;
}

std::map<std::string, std::string> UNetConfig::to_meta() const {
    return {
        {"model.dims", std::to_string(dims)},
        {"model.channels", join_channels(channels)},
        {"model.res_blocks", std::to_string(res_blocks)},
        {"model.attention", attention_deepest ? "1" : "0"},
        {"model.input_channels", std::to_string(input_channels)},
        {"model.noise_embed_dim", std::to_string(noise_embed_dim)},
        {"model.gn_groups", std::to_string(gn_groups)},
        {"model.attn_heads", std::to_string(attn_heads)},
    };
}

UNetConfig UNetConfig::from_meta(const std::map<std::string, std::string>& meta) {
    auto need = [&](const std::string& k) {
        auto it = meta.find(k);
        require(it != meta.end(), "checkpoint meta missing key " + k);
        return it->second;
    };
    UNetConfig c;
    c.dims              = std::stoi(need("model.dims"));
    c.channels          = parse_channels(need("model.channels"));
    c.res_blocks        = std::stoi(need("model.res_blocks"));
    c.attention_deepest = need("model.attention") == "1";
    c.input_channels    = std::stoi(need("model.input_channels"));
    c.noise_embed_dim   = std::stoi(need("model.noise_embed_dim"));
    c.gn_groups         = std::stoi(need("model.gn_groups"));
    c.attn_heads        = std::stoi(need("model.attn_heads"));
    c.validate();
    return c;
}

// ----------------------------------------------------------- param setup --

namespace {

struct Builder {
    const UNetConfig& cfg;
    ParameterStore& store;
    Rng& rng;

    void conv(const std::string& name, int cin, int cout, int k) {
        std::vector<int64_t> shape;
        if (cfg.dims == 3)
            shape = {cout, cin, k, k, k};
        else
            shape = {cout, cin, k, k};
        const int64_t fan_in = Tensor::numel_of(shape) / cout;
        store.create(name + ".w",
                     Tensor::randn(shape, rng, 1.0 / std::sqrt(static_cast<double>(fan_in))));
        store.create(name + ".b", Tensor::zeros({cout}));
    }

    void lin(const std::string& name, int in, int out) {
        store.create(name + ".w",
                     Tensor::randn({out, in}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
        store.create(name + ".b", Tensor::zeros({out}));
    }

    void gn(const std::string& name, int c) {
        store.create(name + ".g", Tensor::full({c}, 1.0));
        store.create(name + ".b", Tensor::zeros({c}));
    }

    void res_block(const std::string& name, int win, int wout) {
        gn(name + ".gn1", win);
        lin(name + ".mod1", cfg.noise_embed_dim, 2 * win);
        conv(name + ".conv1", win, wout, 3);
        gn(name + ".gn2", wout);
        lin(name + ".mod2", cfg.noise_embed_dim, 2 * wout);
        conv(name + ".conv2", wout, wout, 3);
        if (win != wout)
            conv(name + ".skip", win, wout, 1);
    }

    void attn_block(const std::string& name, int c) {
        gn(name + ".gn", c);
        lin(name + ".q", c, c);
        lin(name + ".k", c, c);
        lin(name + ".v", c, c);
        lin(name + ".proj", c, c);
    }
};

}  // namespace

ParameterStore build_denoiser_params(const UNetConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParameterStore store;
    Rng rng(seed);
    Builder b{cfg, store, rng};

    // Fourier frequencies, fixed at build time (EDM-style scale 16)
    store.create("noise_embed.freqs",
                 Tensor::randn({cfg.noise_embed_dim / 2}, rng, 16.0), /*trainable=*/false);
    b.lin("noise_embed.mlp0", cfg.noise_embed_dim, cfg.noise_embed_dim);
    b.lin("noise_embed.mlp1", cfg.noise_embed_dim, cfg.noise_embed_dim);

    const auto& ch = cfg.channels;
    const int L    = static_cast<int>(ch.size());

    b.conv("stem", cfg.input_channels, ch[0], 3);

    int width = ch[0];
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < cfg.res_blocks; ++j) {
            b.res_block("enc" + std::to_string(i) + ".res" + std::to_string(j), width, ch[i]);
            width = ch[i];
        }
        b.conv("enc" + std::to_string(i) + ".down", width, width, 3);  // stride 2 at forward
    }

    b.res_block("mid.res0", width, width);
    if (cfg.attention_deepest)
        b.attn_block("mid.attn", width);
    b.res_block("mid.res1", width, width);

    for (int i = L - 1; i >= 0; --i) {
        b.conv("dec" + std::to_string(i) + ".up", width, width, 3);
        int w = width + ch[i];  // after skip concat
        for (int j = 0; j < cfg.res_blocks; ++j) {
            b.res_block("dec" + std::to_string(i) + ".res" + std::to_string(j), w, ch[i]);
            w = ch[i];
        }
        width = ch[i];
    }

    b.gn("head.gn", width);
    b.conv("head.out", width, 1, 3);
    return store;
}

// -------------------------------------------------------------- forward --

namespace {

struct Ctx {
    Graph& g;
    ParameterStore& store;
    const UNetConfig& cfg;
    Graph::NodeId emb_act;  // silu(embedding), (B, E)

    Graph::NodeId conv(const std::string& name, Graph::NodeId x, int stride = 1) {
        Graph::NodeId w = g.param(store, name + ".w");
        Graph::NodeId b = g.param(store, name + ".b");
        return cfg.dims == 3 ? g.conv3d(x, w, b, stride) : g.conv2d(x, w, b, stride);
    }

    Graph::NodeId lin(const std::string& name, Graph::NodeId x) {
        return g.linear(x, g.param(store, name + ".w"), g.param(store, name + ".b"));
    }

    // group norm followed by the embedding-driven (1+scale, shift) modulation
    Graph::NodeId ada_gn(const std::string& gn_name, const std::string& mod_name,
                         Graph::NodeId x, int width) {
        Graph::NodeId h = g.group_norm(x, g.param(store, gn_name + ".g"),
                                       g.param(store, gn_name + ".b"), cfg.gn_groups);
        Graph::NodeId mod   = lin(mod_name, emb_act);      // (B, 2*width)
        Graph::NodeId scale = g.slice_last(mod, 0, width);
        Graph::NodeId shift = g.slice_last(mod, width, width);
        return g.scale_shift(h, scale, shift);
    }

    Graph::NodeId res_block(const std::string& name, Graph::NodeId x, int win, int wout) {
        Graph::NodeId h = ada_gn(name + ".gn1", name + ".mod1", x, win);
        h               = g.silu(h);
        h               = conv(name + ".conv1", h);
        h               = ada_gn(name + ".gn2", name + ".mod2", h, wout);
        h               = g.silu(h);
        h               = conv(name + ".conv2", h);
        Graph::NodeId s = (win == wout) ? x : conv(name + ".skip", x);
        return g.add(h, s);
    }

    Graph::NodeId attn_block(const std::string& name, Graph::NodeId x) {
        const Tensor& xv = g.value(x);
        std::vector<int64_t> spatial(xv.shape.begin() + 2, xv.shape.end());
        Graph::NodeId t = g.group_norm(x, g.param(store, name + ".gn.g"),
                                       g.param(store, name + ".gn.b"), cfg.gn_groups);
        t               = g.channels_last(t);
        Graph::NodeId q = g.split_heads(lin(name + ".q", t), cfg.attn_heads);
        Graph::NodeId k = g.split_heads(lin(name + ".k", t), cfg.attn_heads);
        Graph::NodeId v = g.split_heads(lin(name + ".v", t), cfg.attn_heads);
        Graph::NodeId o = g.merge_heads(g.attention(q, k, v));
        o               = lin(name + ".proj", o);
        return g.add(x, g.channels_first(o, spatial));
    }
};

}  // namespace

Graph::NodeId UNet::forward(Graph& g, ParameterStore& store, Graph::NodeId x_scaled,
                            Graph::NodeId cond, const std::vector<double>& c_noise) const {
    const Tensor& xv = g.value(x_scaled);
    require(xv.shape.size() == static_cast<size_t>(cfg_.dims + 2),
            "unet: input rank does not match configured dimensionality");
    require(xv.shape[1] == 1, "unet: noisy input must have a single channel");
    const Tensor& cv = g.value(cond);
    require(cv.shape[1] == cfg_.input_channels - 1,
            "unet: conditioning channel count mismatch");
    const int64_t B = xv.shape[0];
    require(static_cast<int64_t>(c_noise.size()) == B,
            "unet: one c_noise value per batch element required");
    for (size_t i = 2; i < xv.shape.size(); ++i)
        require(xv.shape[i] % cfg_.spatial_divisor() == 0,
                "unet: spatial dims must be divisible by " +
                    std::to_string(cfg_.spatial_divisor()));

    // Fourier features of c_noise, fixed frequencies
    const Tensor& freqs = store.get("noise_embed.freqs");
    const int64_t F     = freqs.shape[0];
    Tensor feats({B, 2 * F});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < F; ++j) {
            const double a = 2.0 * M_PI * freqs.data[static_cast<size_t>(j)] *
                             c_noise[static_cast<size_t>(b)];
            feats.data[static_cast<size_t>(b * 2 * F + j)]     = std::cos(a);
            feats.data[static_cast<size_t>(b * 2 * F + F + j)] = std::sin(a);
        }

    Ctx ctx{g, store, cfg_, 0};
    Graph::NodeId emb = ctx.lin("noise_embed.mlp0", g.input(std::move(feats)));
    emb               = g.silu(emb);
    emb               = ctx.lin("noise_embed.mlp1", emb);
    ctx.emb_act       = g.silu(emb);

    const auto& ch = cfg_.channels;
    const int L    = static_cast<int>(ch.size());

    Graph::NodeId h = ctx.conv("stem", g.concat_channels(x_scaled, cond));
    std::vector<Graph::NodeId> skips;
    int width = ch[0];
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < cfg_.res_blocks; ++j) {
            h     = ctx.res_block("enc" + std::to_string(i) + ".res" + std::to_string(j), h,
                                  width, ch[i]);
            width = ch[i];
        }
        skips.push_back(h);
        h = ctx.conv("enc" + std::to_string(i) + ".down", h, /*stride=*/2);
    }

    h = ctx.res_block("mid.res0", h, width, width);
    if (cfg_.attention_deepest)
        h = ctx.attn_block("mid.attn", h);
    h = ctx.res_block("mid.res1", h, width, width);

    for (int i = L - 1; i >= 0; --i) {
        h     = ctx.conv("dec" + std::to_string(i) + ".up", g.nearest_up2(h));
        h     = g.concat_channels(h, skips[static_cast<size_t>(i)]);
        int w = width + ch[i];
        for (int j = 0; j < cfg_.res_blocks; ++j) {
            h = ctx.res_block("dec" + std::to_string(i) + ".res" + std::to_string(j), h, w,
                              ch[i]);
            w = ch[i];
        }
        width = ch[i];
    }

    h = g.group_norm(h, g.param(store, "head.gn.g"), g.param(store, "head.gn.b"),
                     cfg_.gn_groups);
    h = g.silu(h);
    return ctx.conv("head.out", h);
}

}  // namespace edmsr
