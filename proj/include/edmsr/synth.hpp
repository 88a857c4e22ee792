#pragma once

#include <cstdint>

#include "edmsr/volume.hpp"

namespace edmsr {

// Smooth random phantom: a handful of band-limited Gaussian blobs inside an
// ellipsoid "skull" shell, in arbitrary raw intensity units. Same seed, same
// volume.
Volume synth_volume(int64_t d, int64_t h, int64_t w, uint64_t seed);

}  // namespace edmsr
