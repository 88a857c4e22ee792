#pragma once

#include <cstdint>
#include <string>

#include "edmsr/volume.hpp"

namespace edmsr {

// Decoded NIfTI-1 header fields the pipeline cares about. Orientation
// matrices (qform/sform) are intentionally ignored; axis 0 of the resulting
// Volume is the file's z axis and is treated as sagittal by convention.
struct NiftiHeader {
    int32_t header_size = 348;
    int16_t dim[8]      = {3, 1, 1, 1, 1, 1, 1, 1};  // dim[1..3] = W,H,D
    int16_t datatype    = 16;                         // 2=u8, 4=i16, 16=f32, 64=f64
    int16_t bitpix      = 32;
    float voxel_size[3] = {1.0f, 1.0f, 1.0f};         // mm
    float scl_slope     = 1.0f;
    float scl_inter     = 0.0f;
    float vox_offset    = 352.0f;
    bool big_endian     = false;
};

// Reads a volume by extension: .nii / .nii.gz (NIfTI-1) or .rawvol (test
// fixture). A gzip container is detected by its 0x1F8B prefix regardless of
// extension. Intensities have scl_slope/scl_inter applied (slope 0 means no
// rescale); the result carries the Raw domain tag.
Volume read_volume(const std::string& path);

// Writes NIfTI-1 (float32, little-endian, scl_slope=1, scl_inter=0) for
// .nii / .nii.gz, or the raw float64 fixture for .rawvol. The gzip stream is
// written with a zeroed timestamp so output bytes are reproducible.
void write_volume(const Volume& vol, const std::string& path);

// Raw fixture format: magic "EDMSRVOL", three little-endian int64 dims
// (D,H,W), then D*H*W little-endian float64 voxels, W fastest.
inline constexpr char kRawVolumeMagic[8] = {'E', 'D', 'M', 'S', 'R', 'V', 'O', 'L'};

}  // namespace edmsr
