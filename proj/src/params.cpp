#include "edmsr/params.hpp"

#include <cstring>
#include <fstream>

namespace edmsr {

namespace {

constexpr char kMagic[8]     = {'E', 'D', 'M', 'S', 'R', 'P', 'A', 'R'};
constexpr uint32_t kVersion  = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::ofstream& out, const std::string& s) {
    put<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T take(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(in.good(), "checkpoint: truncated file");
    return v;
}

std::string take_str(std::ifstream& in) {
    const uint32_t len = take<uint32_t>(in);
    require(len < (1u << 20), "checkpoint: implausible string length");
    std::string s(len, '\0');
    in.read(s.data(), len);
    require(in.good(), "checkpoint: truncated file");
    return s;
}

}  // namespace

void save_checkpoint(const ParameterStore& store,
                     const std::map<std::string, std::string>& meta,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "checkpoint: cannot open for writing: " + path);
    out.write(kMagic, 8);
    put<uint32_t>(out, kVersion);
    put<uint32_t>(out, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        put_str(out, k);
        put_str(out, v);
    }
    put<uint32_t>(out, static_cast<uint32_t>(store.entries().size()));
    for (const auto& [name, e] : store.entries()) {
        put_str(out, name);
        put<uint8_t>(out, e.trainable ? 1 : 0);
        put<uint32_t>(out, static_cast<uint32_t>(e.tensor.shape.size()));
        for (int64_t d : e.tensor.shape)
            put<int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(e.tensor.data.data()),
                  static_cast<std::streamsize>(e.tensor.data.size() * sizeof(double)));
    }
    require(out.good(), "checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    require(in.good() && std::memcmp(magic, kMagic, 8) == 0,
            "checkpoint: bad magic: " + path);
    const uint32_t ver = take<uint32_t>(in);
    require(ver == kVersion, "checkpoint: unsupported format version " + std::to_string(ver));

    Checkpoint cp;
    const uint32_t n_meta = take<uint32_t>(in);
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = take_str(in);
        cp.meta[k]    = take_str(in);
    }
    const uint32_t n_params = take<uint32_t>(in);
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name     = take_str(in);
        const bool trainable = take<uint8_t>(in) != 0;
        const uint32_t rank  = take<uint32_t>(in);
        require(rank <= 8, "checkpoint: implausible tensor rank");
        std::vector<int64_t> shape(rank);
        for (uint32_t r = 0; r < rank; ++r)
            shape[r] = take<int64_t>(in);
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        require(in.good(), "checkpoint: truncated tensor data: " + path);
        cp.store.create(name, std::move(t), trainable);
    }
    return cp;
}

}  // namespace edmsr
