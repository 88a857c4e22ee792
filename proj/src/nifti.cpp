#include "edmsr/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

#include "edmsr/error.hpp"

namespace edmsr {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    require(out.good(), "write failed: " + path);
}

bool is_gzip(const std::vector<uint8_t>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in) {
    z_stream strm{};
    require(inflateInit2(&strm, 15 + 16) == Z_OK, "gzip: inflateInit failed");
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 16);
    strm.next_in  = const_cast<Bytef*>(in.data());
    strm.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    do {
        strm.next_out  = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        ret            = inflate(&strm, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&strm);
            fail("gzip: corrupt compressed stream");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
    } while (ret != Z_STREAM_END);
    inflateEnd(&strm);
    return out;
}

// gzip with a zeroed mtime so identical volumes compress to identical bytes
std::vector<uint8_t> gzip_deterministic(const std::vector<uint8_t>& in) {
    z_stream strm{};
    require(deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                         Z_DEFAULT_STRATEGY) == Z_OK,
            "gzip: deflateInit failed");
    gz_header head{};
    head.os = 255;  // unknown
    deflateSetHeader(&strm, &head);
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 16);
    strm.next_in  = const_cast<Bytef*>(in.data());
    strm.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    do {
        strm.next_out  = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        ret            = deflate(&strm, Z_FINISH);
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
    } while (ret != Z_STREAM_END);
    deflateEnd(&strm);
    return out;
}

template <typename T>
T read_le(const uint8_t* p, bool swap) {
    T v;
    if (!swap) {
        std::memcpy(&v, p, sizeof(T));
        return v;
    }
    uint8_t tmp[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i)
        tmp[i] = p[sizeof(T) - 1 - i];
    std::memcpy(&v, tmp, sizeof(T));
    return v;
}

template <typename T>
void write_le(std::vector<uint8_t>& out, size_t offset, T v) {
    std::memcpy(out.data() + offset, &v, sizeof(T));
}

template <typename T>
void append_le(std::vector<uint8_t>& out, T v) {
    const size_t at = out.size();
    out.resize(at + sizeof(T));
    std::memcpy(out.data() + at, &v, sizeof(T));
}

struct DataType {
    int16_t code;
    int16_t bits;
};

constexpr DataType kSupported[] = {{2, 8}, {4, 16}, {16, 32}, {64, 64}};

int16_t bitpix_for(int16_t code) {
    for (const auto& t : kSupported)
        if (t.code == code)
            return t.bits;
    return 0;
}

Volume parse_nifti(const std::vector<uint8_t>& bytes, const std::string& path) {
    require(bytes.size() >= 348, "nifti: file shorter than the 348-byte header: " + path);

    // sizeof_hdr doubles as the endianness probe
    bool swap = false;
    int32_t hdr_size = read_le<int32_t>(bytes.data(), false);
    if (hdr_size != 348) {
        hdr_size = read_le<int32_t>(bytes.data(), true);
        require(hdr_size == 348, "nifti: sizeof_hdr is not 348 in either byte order: " + path);
        swap = true;
    }

    NiftiHeader h;
    h.big_endian = swap;
    for (int i = 0; i < 8; ++i)
        h.dim[i] = read_le<int16_t>(bytes.data() + 40 + 2 * i, swap);
    h.datatype   = read_le<int16_t>(bytes.data() + 70, swap);
    h.bitpix     = read_le<int16_t>(bytes.data() + 72, swap);
    for (int i = 0; i < 3; ++i)
        h.voxel_size[i] = read_le<float>(bytes.data() + 76 + 4 * (i + 1), swap);
    h.vox_offset = read_le<float>(bytes.data() + 108, swap);
    h.scl_slope  = read_le<float>(bytes.data() + 112, swap);
    h.scl_inter  = read_le<float>(bytes.data() + 116, swap);

    char magic[4];
    std::memcpy(magic, bytes.data() + 344, 4);
    require(std::memcmp(magic, "n+1\0", 4) == 0,
            "nifti: bad magic (expected single-file \"n+1\"): " + path);

    const int16_t expect_bits = bitpix_for(h.datatype);
    require(expect_bits != 0,
            "nifti: unsupported datatype code " + std::to_string(h.datatype) + ": " + path);
    require(h.bitpix == expect_bits, "nifti: bitpix inconsistent with datatype: " + path);

    require(h.dim[0] == 3 || h.dim[0] == 4, "nifti: dim[0] must be 3 or 4: " + path);
    if (h.dim[0] == 4)
        require(h.dim[4] == 1, "nifti: multi-channel volumes (dim[4] > 1) unsupported: " + path);
    const int64_t w = h.dim[1], hh = h.dim[2], d = h.dim[3];
    require(w > 0 && hh > 0 && d > 0, "nifti: non-positive spatial dims: " + path);

    const int64_t numel  = w * hh * d;
    const int64_t offset = static_cast<int64_t>(h.vox_offset);
    require(offset >= 348, "nifti: vox_offset inside the header: " + path);
    const int64_t need = offset + numel * expect_bits / 8;
    require(static_cast<int64_t>(bytes.size()) >= need,
            "nifti: truncated data section: " + path);

    Volume vol(d, hh, w, Domain::Raw);
    const uint8_t* src = bytes.data() + offset;
    const bool rescale = (h.scl_slope != 0.0f);
    const double slope = rescale ? static_cast<double>(h.scl_slope) : 1.0;
    const double inter = rescale ? static_cast<double>(h.scl_inter) : 0.0;
    for (int64_t i = 0; i < numel; ++i) {
        double v = 0.0;
        switch (h.datatype) {
            case 2:  v = static_cast<double>(src[i]); break;
            case 4:  v = static_cast<double>(read_le<int16_t>(src + 2 * i, swap)); break;
            case 16: v = static_cast<double>(read_le<float>(src + 4 * i, swap)); break;
            case 64: v = read_le<double>(src + 8 * i, swap); break;
        }
        vol.voxels[static_cast<size_t>(i)] = v * slope + inter;
    }
    return vol;
}

Volume parse_rawvol(const std::vector<uint8_t>& bytes, const std::string& path) {
    require(bytes.size() >= 8 + 3 * 8, "rawvol: truncated header: " + path);
    require(std::memcmp(bytes.data(), kRawVolumeMagic, 8) == 0, "rawvol: bad magic: " + path);
    const int64_t d = read_le<int64_t>(bytes.data() + 8, false);
    const int64_t h = read_le<int64_t>(bytes.data() + 16, false);
    const int64_t w = read_le<int64_t>(bytes.data() + 24, false);
    require(d > 0 && h > 0 && w > 0, "rawvol: non-positive dims: " + path);
    const int64_t numel = d * h * w;
    require(static_cast<int64_t>(bytes.size()) == 32 + numel * 8,
            "rawvol: data length does not match dims: " + path);
    Volume vol(d, h, w, Domain::Raw);
    for (int64_t i = 0; i < numel; ++i)
        vol.voxels[static_cast<size_t>(i)] = read_le<double>(bytes.data() + 32 + 8 * i, false);
    return vol;
}

std::vector<uint8_t> serialize_nifti(const Volume& vol) {
    std::vector<uint8_t> out(352, 0);  // header + 4-byte extension flag
    write_le<int32_t>(out, 0, 348);
    write_le<int16_t>(out, 40, 3);
    write_le<int16_t>(out, 42, static_cast<int16_t>(vol.w));
    write_le<int16_t>(out, 44, static_cast<int16_t>(vol.h));
    write_le<int16_t>(out, 46, static_cast<int16_t>(vol.d));
    for (int i = 4; i < 8; ++i)
        write_le<int16_t>(out, 40 + 2 * i, 1);
    write_le<int16_t>(out, 70, 16);  // float32
    write_le<int16_t>(out, 72, 32);
    for (int i = 0; i < 8; ++i)
        write_le<float>(out, 76 + 4 * i, 1.0f);
    write_le<float>(out, 108, 352.0f);
    write_le<float>(out, 112, 1.0f);  // scl_slope
    write_le<float>(out, 116, 0.0f);  // scl_inter
    std::memcpy(out.data() + 344, "n+1\0", 4);

    out.reserve(out.size() + vol.voxels.size() * 4);
    for (double v : vol.voxels)
        append_le<float>(out, static_cast<float>(v));
    return out;
}

std::vector<uint8_t> serialize_rawvol(const Volume& vol) {
    std::vector<uint8_t> out(kRawVolumeMagic, kRawVolumeMagic + 8);
    append_le<int64_t>(out, vol.d);
    append_le<int64_t>(out, vol.h);
    append_le<int64_t>(out, vol.w);
    for (double v : vol.voxels)
        append_le<double>(out, v);
    return out;
}

}  // namespace

Volume read_volume(const std::string& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    if (is_gzip(bytes))
        bytes = gunzip(bytes);
    if (ends_with(path, ".rawvol"))
        return parse_rawvol(bytes, path);
    if (ends_with(path, ".nii") || ends_with(path, ".nii.gz"))
        return parse_nifti(bytes, path);
    fail("read_volume: unrecognized extension (expected .nii, .nii.gz or .rawvol): " + path);
}

void write_volume(const Volume& vol, const std::string& path) {
    for (double v : vol.voxels)
        require(std::isfinite(v), "write_volume: volume contains non-finite voxels");
    require(vol.d <= 32767 && vol.h <= 32767 && vol.w <= 32767,
            "write_volume: dims exceed NIfTI-1 int16 range");

    if (ends_with(path, ".rawvol")) {
        write_file_bytes(path, serialize_rawvol(vol));
    } else if (ends_with(path, ".nii.gz")) {
        write_file_bytes(path, gzip_deterministic(serialize_nifti(vol)));
    } else if (ends_with(path, ".nii")) {
        write_file_bytes(path, serialize_nifti(vol));
    } else {
        fail("write_volume: unrecognized extension (expected .nii, .nii.gz or .rawvol): " + path);
    }
}

}  // namespace edmsr
