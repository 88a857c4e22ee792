#pragma once

#include <cstdint>
#include <vector>

#include "edmsr/error.hpp"

namespace edmsr {

// Intensity domain a volume currently lives in. Raw is whatever came off
// disk; Byte255 is percentile-normalized [0,255]; Unit is [-1,1].
enum class Domain { Raw, Byte255, Unit };

// (D,H,W) grid of real intensities, W fastest. Axis 0 (depth) is treated as
// the sagittal axis by convention throughout the pipeline.
struct Volume {
    int64_t d = 0, h = 0, w = 0;
    std::vector<double> voxels;  // length d*h*w, row-major, w fastest
    Domain domain = Domain::Raw;

    Volume() = default;
    Volume(int64_t d_, int64_t h_, int64_t w_, Domain dom = Domain::Raw)
        : d(d_), h(h_), w(w_), domain(dom) {
        require(d_ > 0 && h_ > 0 && w_ > 0, "volume: dims must be positive");
        voxels.assign(static_cast<size_t>(d_ * h_ * w_), 0.0);
    }

    int64_t numel() const { return d * h * w; }

    double& at(int64_t z, int64_t y, int64_t x) {
        return voxels[static_cast<size_t>((z * h + y) * w + x)];
    }
    double at(int64_t z, int64_t y, int64_t x) const {
        return voxels[static_cast<size_t>((z * h + y) * w + x)];
    }

    bool same_dims(const Volume& o) const { return d == o.d && h == o.h && w == o.w; }
};

// 2D image, W fastest.
struct Image {
    int64_t h = 0, w = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int64_t h_, int64_t w_) : h(h_), w(w_) {
        require(h_ > 0 && w_ > 0, "image: dims must be positive");
        pixels.assign(static_cast<size_t>(h_ * w_), 0.0);
    }

    double& at(int64_t y, int64_t x) { return pixels[static_cast<size_t>(y * w + x)]; }
    double at(int64_t y, int64_t x) const { return pixels[static_cast<size_t>(y * w + x)]; }
};

// LR/HR pair related by in-plane scale s; depth is preserved.
struct VolumePair {
    Volume lr;
    Volume hr;
    int scale = 1;

    void validate() const {
        require(scale >= 1, "volume pair: scale must be >= 1");
        require(lr.d == hr.d, "volume pair: depth must be preserved");
        require(hr.h == scale * lr.h && hr.w == scale * lr.w,
                "volume pair: HR dims must be scale * LR dims");
        require(lr.domain == hr.domain, "volume pair: domain tags must match");
    }
};

enum class UpsampleMode { InPlane, Full3D };

// Percentile normalization to [0,255] using the nearest-rank 1st/99th
// percentiles of the whole volume. Throws on a degenerate (constant) range.
Volume percentile_normalize(const Volume& vol);

Volume to_unit(const Volume& vol);
Volume from_unit(const Volume& vol);

// Mean over s x s in-plane blocks; depth untouched. H and W must divide by s.
Volume block_average_downsample(const Volume& vol, int s);

// Linear resampling with the align-corners-false convention: output center i
// maps to input coordinate (i+0.5)/s - 0.5, clamped at borders.
Volume trilinear_upsample(const Volume& vol, int s, UpsampleMode mode = UpsampleMode::InPlane);

// Catmull-Rom (a = -0.5) bicubic with edge replication; same center mapping.
Image bicubic_upsample_slice(const Image& img, int s);

std::vector<Image> extract_slices(const Volume& vol);
Volume restack_slices(const std::vector<Image>& slices, Domain domain);

Image get_slice(const Volume& vol, int64_t index);

}  // namespace edmsr
