#include "edmsr/sr25d.hpp"

#include <algorithm>

namespace edmsr {

SliceCondition build_slice_condition(const Volume& lr_vol, int64_t i, int s) {
    require(i >= 0 && i < lr_vol.d, "build_slice_condition: slice index out of range");
    SliceCondition cond;
    cond.slice_index   = i;
    const int64_t prev = std::max<int64_t>(i - 1, 0);
    cond.target_lr_up   = bicubic_upsample_slice(get_slice(lr_vol, i), s);
    cond.neighbor_lr_up = bicubic_upsample_slice(get_slice(lr_vol, prev), s);
    return cond;
}

Volume super_resolve_25d(ParameterStore& store, const UNet& net, const Preconditioner& pc,
                         const NoiseSchedule& schedule, const Volume& lr_vol, int s,
                         uint64_t seed) {
    require(lr_vol.domain == Domain::Unit, "super_resolve_25d: LR volume must be unit-domain");
    require(net.config().dims == 2, "super_resolve_25d: needs a 2D denoiser");
    require(net.config().input_channels == 3,
            "super_resolve_25d: denoiser must take 3 input channels");
    schedule.validate();

    const int64_t oh = lr_vol.h * s, ow = lr_vol.w * s;
    require(oh % net.config().spatial_divisor() == 0 &&
                ow % net.config().spatial_divisor() == 0,
            "super_resolve_25d: HR slice dims must be divisible by " +
                std::to_string(net.config().spatial_divisor()));

    std::vector<Image> out_slices;
    out_slices.reserve(static_cast<size_t>(lr_vol.d));
    for (int64_t i = 0; i < lr_vol.d; ++i) {
        const SliceCondition sc = build_slice_condition(lr_vol, i, s);
        Tensor cond({1, 2, oh, ow});
        std::copy(sc.target_lr_up.pixels.begin(), sc.target_lr_up.pixels.end(),
                  cond.data.begin());
        std::copy(sc.neighbor_lr_up.pixels.begin(), sc.neighbor_lr_up.pixels.end(),
                  cond.data.begin() + oh * ow);

        DenoiserFn dn = [&](const Tensor& x, double sigma, const Tensor& c) {
            return denoise(store, net, pc, x, sigma, c);
        };
        Rng rng    = Rng::stream(seed, static_cast<uint64_t>(i));
        Tensor out = heun_sample(dn, schedule, cond, {1, 1, oh, ow}, rng);

        Image img(oh, ow);
        img.pixels = std::move(out.data);
        for (double& v : img.pixels)
            v = std::min(1.0, std::max(-1.0, v));
        out_slices.push_back(std::move(img));
    }
    return restack_slices(out_slices, Domain::Unit);
}

Volume bicubic_baseline(const Volume& lr_vol, int s) {
    std::vector<Image> slices;
    slices.reserve(static_cast<size_t>(lr_vol.d));
    for (int64_t i = 0; i < lr_vol.d; ++i) {
        Image up = bicubic_upsample_slice(get_slice(lr_vol, i), s);
        if (lr_vol.domain == Domain::Unit)
            for (double& v : up.pixels)
                v = std::min(1.0, std::max(-1.0, v));
        slices.push_back(std::move(up));
    }
    return restack_slices(slices, lr_vol.domain);
}

}  // namespace edmsr
