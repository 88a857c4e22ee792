#pragma once

#include <cstdint>

#include "edmsr/edm.hpp"
#include "edmsr/samplers.hpp"
#include "edmsr/volume.hpp"

namespace edmsr {

// Conditioning for one target slice: the bicubic-upsampled target LR slice
// and the bicubic-upsampled previous LR slice (replicated at index 0).
struct SliceCondition {
    Image target_lr_up;
    Image neighbor_lr_up;
    int64_t slice_index = 0;
};

SliceCondition build_slice_condition(const Volume& lr_vol, int64_t i, int s);

// Per-slice 2.5D super-resolution: 3-channel conditioned 2D denoiser, Heun
// sampling per slice (slice-index-derived seeds), stacked and clamped to the
// unit range. Condition channel order: [target_lr_up, neighbor_lr_up].
Volume super_resolve_25d(ParameterStore& store, const UNet& net, const Preconditioner& pc,
                         const NoiseSchedule& schedule, const Volume& lr_vol, int s,
                         uint64_t seed);

// Per-slice bicubic upsample, stacked, clamped.
Volume bicubic_baseline(const Volume& lr_vol, int s);

}  // namespace edmsr
