#include "edmsr/synth.hpp"

#include <cmath>
#include <vector>

#include "edmsr/rng.hpp"

namespace edmsr {

Volume synth_volume(int64_t d, int64_t h, int64_t w, uint64_t seed) {
    require(d >= 16 && h >= 16 && w >= 16, "synth_volume: dims must be at least 16^3");
    Rng rng(seed);

    struct Blob {
        double cz, cy, cx;   // center in [-1,1] coords
        double wz, wy, wx;   // per-axis widths
        double amp;
    };
    const int n_blobs = 6 + static_cast<int>(rng.uniform_int(5));
    std::vector<Blob> blobs;
    for (int i = 0; i < n_blobs; ++i) {
        Blob b;
        b.cz  = (rng.uniform() * 2.0 - 1.0) * 0.55;
        b.cy  = (rng.uniform() * 2.0 - 1.0) * 0.55;
        b.cx  = (rng.uniform() * 2.0 - 1.0) * 0.55;
        b.wz  = 0.12 + 0.25 * rng.uniform();
        b.wy  = 0.12 + 0.25 * rng.uniform();
        b.wx  = 0.12 + 0.25 * rng.uniform();
        b.amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (150.0 + 350.0 * rng.uniform());
        blobs.push_back(b);
    }

    // slight per-subject anatomy variation
    const double ax = 0.80 + 0.08 * rng.uniform();
    const double ay = 0.80 + 0.08 * rng.uniform();
    const double az = 0.80 + 0.08 * rng.uniform();

    Volume vol(d, h, w, Domain::Raw);
    for (int64_t z = 0; z < d; ++z) {
        const double nz = 2.0 * (static_cast<double>(z) + 0.5) / static_cast<double>(d) - 1.0;
        for (int64_t y = 0; y < h; ++y) {
            const double ny =
                2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 1.0;
            for (int64_t x = 0; x < w; ++x) {
                const double nx =
                    2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 1.0;

                const double rho = std::sqrt((nz / az) * (nz / az) + (ny / ay) * (ny / ay) +
                                             (nx / ax) * (nx / ax));
                // crisp ellipsoid shell plus a smooth interior falloff
                const double shell  = 900.0 * std::exp(-std::pow((rho - 1.0) / 0.055, 2.0));
                const double inside = 1.0 / (1.0 + std::exp((rho - 0.92) / 0.025));

                double tissue = 320.0;
                for (const Blob& b : blobs) {
                    const double e = std::pow((nz - b.cz) / b.wz, 2.0) +
                                     std::pow((ny - b.cy) / b.wy, 2.0) +
                                     std::pow((nx - b.cx) / b.wx, 2.0);
                    tissue += b.amp * std::exp(-e);
                }
                vol.at(z, y, x) = 20.0 + shell + inside * std::max(0.0, tissue);
            }
        }
    }
    return vol;
}

}  // namespace edmsr
