#include "edmsr/sr3d.hpp"

#include <algorithm>
#include <cmath>

namespace edmsr {

namespace {

std::vector<int64_t> axis_positions(int64_t n, int64_t patch, double overlap) {
    const int64_t stride =
        std::max<int64_t>(1, static_cast<int64_t>(std::llround(
                                 static_cast<double>(patch) * (1.0 - overlap))));
    std::vector<int64_t> pos;
    for (int64_t p = 0; p + patch <= n; p += stride)
        pos.push_back(p);
    if (pos.empty() || pos.back() != n - patch)
        pos.push_back(n - patch);
    return pos;
}

std::vector<double> axis_window(int64_t n, double floor) {
    std::vector<double> w(static_cast<size_t>(n), 1.0);
    if (n > 1)
        for (int64_t j = 0; j < n; ++j) {
            const double hann =
                0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(j) /
                                     static_cast<double>(n - 1));
            w[static_cast<size_t>(j)] = floor + (1.0 - floor) * hann;
        }
    return w;
}

}  // namespace

PatchPlan plan_patches(std::array<int64_t, 3> vol_dims, std::array<int64_t, 3> patch_dims,
                       double overlap_fraction, double window_floor) {
    for (int a = 0; a < 3; ++a)
        require(vol_dims[static_cast<size_t>(a)] >= 1, "plan_patches: zero-sized volume");
    require(overlap_fraction >= 0.0 && overlap_fraction < 1.0,
            "plan_patches: overlap fraction must lie in [0,1)");
    require(window_floor > 0.0 && window_floor <= 1.0,
            "plan_patches: window floor must lie in (0,1]");

    PatchPlan plan;
    plan.vol_dims     = vol_dims;
    plan.overlap      = overlap_fraction;
    plan.window_floor = window_floor;
    for (int a = 0; a < 3; ++a)
        plan.patch[static_cast<size_t>(a)] =
            std::min(patch_dims[static_cast<size_t>(a)], vol_dims[static_cast<size_t>(a)]);

    const auto pd = axis_positions(vol_dims[0], plan.patch[0], overlap_fraction);
    const auto ph = axis_positions(vol_dims[1], plan.patch[1], overlap_fraction);
    const auto pw = axis_positions(vol_dims[2], plan.patch[2], overlap_fraction);
    for (int64_t z : pd)
        for (int64_t y : ph)
            for (int64_t x : pw)
                plan.positions.push_back({z, y, x});

    const auto wd = axis_window(plan.patch[0], window_floor);
    const auto wh = axis_window(plan.patch[1], window_floor);
    const auto ww = axis_window(plan.patch[2], window_floor);
    plan.window.resize(static_cast<size_t>(plan.patch[0] * plan.patch[1] * plan.patch[2]));
    size_t idx = 0;
    for (int64_t z = 0; z < plan.patch[0]; ++z)
        for (int64_t y = 0; y < plan.patch[1]; ++y)
            for (int64_t x = 0; x < plan.patch[2]; ++x)
                plan.window[idx++] = wd[static_cast<size_t>(z)] * wh[static_cast<size_t>(y)] *
                                     ww[static_cast<size_t>(x)];
    return plan;
}

Volume crop_patch(const Volume& vol, std::array<int64_t, 3> corner,
                  std::array<int64_t, 3> dims) {
    require(corner[0] >= 0 && corner[1] >= 0 && corner[2] >= 0 &&
                corner[0] + dims[0] <= vol.d && corner[1] + dims[1] <= vol.h &&
                corner[2] + dims[2] <= vol.w,
            "crop_patch: out of bounds");
    Volume out(dims[0], dims[1], dims[2], vol.domain);
    for (int64_t z = 0; z < dims[0]; ++z)
        for (int64_t y = 0; y < dims[1]; ++y)
            for (int64_t x = 0; x < dims[2]; ++x)
                out.at(z, y, x) = vol.at(corner[0] + z, corner[1] + y, corner[2] + x);
    return out;
}

Volume blend_patches(const PatchPlan& plan, const std::vector<Volume>& outputs,
                     Domain domain) {
    require(outputs.size() == plan.positions.size(),
            "blend_patches: one output per planned position required");
    Volume acc(plan.vol_dims[0], plan.vol_dims[1], plan.vol_dims[2], domain);
    Volume wsum(plan.vol_dims[0], plan.vol_dims[1], plan.vol_dims[2], domain);

    for (size_t p = 0; p < plan.positions.size(); ++p) {
        const auto& pos  = plan.positions[p];
        const Volume& ov = outputs[p];
        require(ov.d == plan.patch[0] && ov.h == plan.patch[1] && ov.w == plan.patch[2],
                "blend_patches: patch output dims mismatch");
        size_t idx = 0;
        for (int64_t z = 0; z < plan.patch[0]; ++z)
            for (int64_t y = 0; y < plan.patch[1]; ++y)
                for (int64_t x = 0; x < plan.patch[2]; ++x, ++idx) {
                    const double w = plan.window[idx];
                    acc.at(pos[0] + z, pos[1] + y, pos[2] + x) += w * ov.voxels[idx];
                    wsum.at(pos[0] + z, pos[1] + y, pos[2] + x) += w;
                }
    }

    for (size_t i = 0; i < acc.voxels.size(); ++i) {
        require(wsum.voxels[i] > 0.0, "blend_patches: uncovered voxel");
        acc.voxels[i] /= wsum.voxels[i];
    }
    return acc;
}

Volume super_resolve_3d(ParameterStore& store, const UNet& net, const Preconditioner& pc,
                        const NoiseSchedule& schedule, const Volume& lr_vol, int s,
                        const Sr3dOptions& opts) {
    require(lr_vol.domain == Domain::Unit, "super_resolve_3d: LR volume must be unit-domain");
    require(net.config().dims == 3, "super_resolve_3d: needs a 3D denoiser");
    schedule.validate();

    const Volume cond_full = trilinear_upsample(lr_vol, s, UpsampleMode::InPlane);
    const std::array<int64_t, 3> hr_dims{cond_full.d, cond_full.h, cond_full.w};

    PatchPlan plan = plan_patches(hr_dims, opts.patch, opts.overlap, opts.window_floor);
    for (int a = 0; a < 3; ++a)
        require(plan.patch[static_cast<size_t>(a)] % net.config().spatial_divisor() == 0,
                "super_resolve_3d: patch dims must be divisible by " +
                    std::to_string(net.config().spatial_divisor()));

    std::vector<Volume> outputs;
    outputs.reserve(plan.positions.size());
    for (size_t p = 0; p < plan.positions.size(); ++p) {
        const Volume cond_crop = crop_patch(cond_full, plan.positions[p], plan.patch);
        Tensor cond({1, 1, plan.patch[0], plan.patch[1], plan.patch[2]}, cond_crop.voxels);

        DenoiserFn dn = [&](const Tensor& x, double sigma, const Tensor& c) {
            return denoise(store, net, pc, x, sigma, c);
        };
        Rng rng = Rng::stream(opts.seed, p);
        Tensor out = euler_sample(dn, schedule, cond,
                                  {1, 1, plan.patch[0], plan.patch[1], plan.patch[2]}, rng);

        Volume ov(plan.patch[0], plan.patch[1], plan.patch[2], Domain::Unit);
        ov.voxels = std::move(out.data);
        outputs.push_back(std::move(ov));
    }

    Volume result = blend_patches(plan, outputs, Domain::Unit);
    for (double& v : result.voxels)
        v = std::min(1.0, std::max(-1.0, v));
    return result;
}

Volume trilinear_baseline(const Volume& lr_vol, int s) {
    Volume out = trilinear_upsample(lr_vol, s, UpsampleMode::InPlane);
    if (out.domain == Domain::Unit)
        for (double& v : out.voxels)
            v = std::min(1.0, std::max(-1.0, v));
    return out;
}

}  // namespace edmsr
