#include "edmsr/volume.hpp"

#include <algorithm>
#include <cmath>

namespace edmsr {

namespace {

// nearest-rank percentile on the sorted multiset: 1-based rank ceil(p/100 * n)
double nearest_rank_percentile(std::vector<double>& sorted, double p) {
    const int64_t n    = static_cast<int64_t>(sorted.size());
    int64_t rank       = static_cast<int64_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    rank               = std::max<int64_t>(1, std::min(rank, n));
    return sorted[static_cast<size_t>(rank - 1)];
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// source coordinate for output index i at integer scale s (align-corners-false)
inline double src_coord(int64_t i, int s) {
    return (static_cast<double>(i) + 0.5) / static_cast<double>(s) - 0.5;
}

double catmull_rom(double t) {
    const double a  = -0.5;
    const double at = std::fabs(t);
    if (at <= 1.0)
        return ((a + 2.0) * at - (a + 3.0)) * at * at + 1.0;
    if (at < 2.0)
        return (((at - 5.0) * at + 8.0) * at - 4.0) * a;
    return 0.0;
}

}  // namespace

Volume percentile_normalize(const Volume& vol) {
    require(vol.domain == Domain::Raw, "percentile_normalize: expects a raw-domain volume");
    require(vol.numel() >= 2, "percentile_normalize: volume too small");
    std::vector<double> sorted = vol.voxels;
    std::sort(sorted.begin(), sorted.end());
    const double p1  = nearest_rank_percentile(sorted, 1.0);
    const double p99 = nearest_rank_percentile(sorted, 99.0);
    require(p99 > p1, "percentile_normalize: degenerate intensity range (p1 == p99)");

    Volume out(vol.d, vol.h, vol.w, Domain::Byte255);
    const double inv = 1.0 / (p99 - p1);
    for (size_t i = 0; i < vol.voxels.size(); ++i)
        out.voxels[i] = clamp01((vol.voxels[i] - p1) * inv) * 255.0;
    return out;
}

Volume to_unit(const Volume& vol) {
    require(vol.domain == Domain::Byte255, "to_unit: expects a [0,255]-domain volume");
    Volume out(vol.d, vol.h, vol.w, Domain::Unit);
    for (size_t i = 0; i < vol.voxels.size(); ++i)
        out.voxels[i] = vol.voxels[i] / 127.5 - 1.0;
    return out;
}

Volume from_unit(const Volume& vol) {
    require(vol.domain == Domain::Unit, "from_unit: expects a unit-domain volume");
    Volume out(vol.d, vol.h, vol.w, Domain::Byte255);
    for (size_t i = 0; i < vol.voxels.size(); ++i)
        out.voxels[i] = (vol.voxels[i] + 1.0) * 127.5;
    return out;
}

Volume block_average_downsample(const Volume& vol, int s) {
    require(s >= 1, "block_average_downsample: scale must be >= 1");
    require(vol.h % s == 0 && vol.w % s == 0,
            "block_average_downsample: H and W must be divisible by the scale");
    Volume out(vol.d, vol.h / s, vol.w / s, vol.domain);
    const double inv = 1.0 / (static_cast<double>(s) * static_cast<double>(s));
    for (int64_t z = 0; z < out.d; ++z)
        for (int64_t y = 0; y < out.h; ++y)
            for (int64_t x = 0; x < out.w; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < s; ++dy)
                    for (int dx = 0; dx < s; ++dx)
                        acc += vol.at(z, y * s + dy, x * s + dx);
                out.at(z, y, x) = acc * inv;
            }
    return out;
}

namespace {

// 1D linear resample of a line of length n to n*s, gathered via accessor
struct LinearAxis {
    int64_t i0, i1;
    double w0, w1;
};

LinearAxis linear_weights(int64_t i, int s, int64_t n) {
    double c = src_coord(i, s);
    c        = std::min(static_cast<double>(n - 1), std::max(0.0, c));
    const int64_t i0 = static_cast<int64_t>(std::floor(c));
    const int64_t i1 = std::min(i0 + 1, n - 1);
    const double f   = c - static_cast<double>(i0);
    return {i0, i1, 1.0 - f, f};
}

}  // namespace

Volume trilinear_upsample(const Volume& vol, int s, UpsampleMode mode) {
    require(s >= 1, "trilinear_upsample: scale must be >= 1");
    const bool full = (mode == UpsampleMode::Full3D);
    const int64_t od = full ? vol.d * s : vol.d;
    Volume out(od, vol.h * s, vol.w * s, vol.domain);

    for (int64_t z = 0; z < out.d; ++z) {
        const LinearAxis az = full ? linear_weights(z, s, vol.d)
                                   : LinearAxis{z, z, 1.0, 0.0};
        for (int64_t y = 0; y < out.h; ++y) {
            const LinearAxis ay = linear_weights(y, s, vol.h);
            for (int64_t x = 0; x < out.w; ++x) {
                const LinearAxis ax = linear_weights(x, s, vol.w);
                double v = 0.0;
                v += az.w0 * (ay.w0 * (ax.w0 * vol.at(az.i0, ay.i0, ax.i0) +
                                       ax.w1 * vol.at(az.i0, ay.i0, ax.i1)) +
                              ay.w1 * (ax.w0 * vol.at(az.i0, ay.i1, ax.i0) +
                                       ax.w1 * vol.at(az.i0, ay.i1, ax.i1)));
                if (az.w1 != 0.0)
                    v += az.w1 * (ay.w0 * (ax.w0 * vol.at(az.i1, ay.i0, ax.i0) +
                                           ax.w1 * vol.at(az.i1, ay.i0, ax.i1)) +
                                  ay.w1 * (ax.w0 * vol.at(az.i1, ay.i1, ax.i0) +
                                           ax.w1 * vol.at(az.i1, ay.i1, ax.i1)));
                out.at(z, y, x) = v;
            }
        }
    }
    return out;
}

Image bicubic_upsample_slice(const Image& img, int s) {
    require(s >= 1, "bicubic_upsample_slice: scale must be >= 1");
    require(img.h >= 4 && img.w >= 4, "bicubic_upsample_slice: image must be at least 4x4");
    Image out(img.h * s, img.w * s);

    auto clampi = [](int64_t i, int64_t n) { return std::min(n - 1, std::max<int64_t>(0, i)); };

    for (int64_t y = 0; y < out.h; ++y) {
        const double cy   = src_coord(y, s);
        const int64_t fy  = static_cast<int64_t>(std::floor(cy));
        double wy[4];
        for (int k = 0; k < 4; ++k)
            wy[k] = catmull_rom(cy - static_cast<double>(fy - 1 + k));
        for (int64_t x = 0; x < out.w; ++x) {
            const double cx  = src_coord(x, s);
            const int64_t fx = static_cast<int64_t>(std::floor(cx));
            double wx[4];
            for (int k = 0; k < 4; ++k)
                wx[k] = catmull_rom(cx - static_cast<double>(fx - 1 + k));
            double v = 0.0;
            for (int ky = 0; ky < 4; ++ky) {
                const int64_t sy = clampi(fy - 1 + ky, img.h);
                double row = 0.0;
                for (int kx = 0; kx < 4; ++kx)
                    row += wx[kx] * img.at(sy, clampi(fx - 1 + kx, img.w));
                v += wy[ky] * row;
            }
            out.at(y, x) = v;
        }
    }
    return out;
}

std::vector<Image> extract_slices(const Volume& vol) {
    std::vector<Image> slices;
    slices.reserve(static_cast<size_t>(vol.d));
    for (int64_t z = 0; z < vol.d; ++z)
        slices.push_back(get_slice(vol, z));
    return slices;
}

Image get_slice(const Volume& vol, int64_t index) {
    require(index >= 0 && index < vol.d, "get_slice: slice index out of range");
    Image img(vol.h, vol.w);
    std::copy_n(vol.voxels.begin() + index * vol.h * vol.w,
                static_cast<size_t>(vol.h * vol.w), img.pixels.begin());
    return img;
}

Volume restack_slices(const std::vector<Image>& slices, Domain domain) {
    require(!slices.empty(), "restack_slices: no slices");
    const int64_t h = slices[0].h, w = slices[0].w;
    Volume vol(static_cast<int64_t>(slices.size()), h, w, domain);
    for (size_t z = 0; z < slices.size(); ++z) {
        require(slices[z].h == h && slices[z].w == w, "restack_slices: slice dims differ");
        std::copy(slices[z].pixels.begin(), slices[z].pixels.end(),
                  vol.voxels.begin() + static_cast<int64_t>(z) * h * w);
    }
    return vol;
}

}  // namespace edmsr
