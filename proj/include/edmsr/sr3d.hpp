#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "edmsr/edm.hpp"
#include "edmsr/samplers.hpp"
#include "edmsr/volume.hpp"

namespace edmsr {

// Sliding-window plan over a (D,H,W) volume: positions are HR-space corner
// offsets at stride patch*(1-overlap), the final position clamped to the far
// edge so coverage is complete. window holds the per-voxel blending weights
// of one patch (separable Hann raised by a positive floor).
struct PatchPlan {
    std::array<int64_t, 3> vol_dims{};
    std::array<int64_t, 3> patch{};
    double overlap      = 0.5;
    double window_floor = 0.05;
    std::vector<std::array<int64_t, 3>> positions;
    std::vector<double> window;  // length patch[0]*patch[1]*patch[2]
};

PatchPlan plan_patches(std::array<int64_t, 3> vol_dims, std::array<int64_t, 3> patch_dims,
                       double overlap_fraction, double window_floor = 0.05);

// Weighted overlap blending; normalization by the accumulated window makes
// the identity per-patch operator reconstruct the volume exactly.
Volume blend_patches(const PatchPlan& plan, const std::vector<Volume>& outputs,
                     Domain domain);

Volume crop_patch(const Volume& vol, std::array<int64_t, 3> corner,
                  std::array<int64_t, 3> dims);

struct Sr3dOptions {
    std::array<int64_t, 3> patch{8, 16, 16};  // HR-space
    double overlap      = 0.5;
    double window_floor = 0.05;
    uint64_t seed       = 0;
};

// Full-volume 3D super-resolution: in-plane trilinear condition, per-patch
// Euler sampling with patch-index-derived seeds, overlap blending, clamp to
// the unit range.
Volume super_resolve_3d(ParameterStore& store, const UNet& net, const Preconditioner& pc,
                        const NoiseSchedule& schedule, const Volume& lr_vol, int s,
                        const Sr3dOptions& opts);

// In-plane trilinear interpolation clamped to the unit range.
Volume trilinear_baseline(const Volume& lr_vol, int s);

}  // namespace edmsr
