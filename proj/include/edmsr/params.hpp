#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edmsr/tensor.hpp"

namespace edmsr {

// Named parameters of a denoiser. Entries marked non-trainable (fixed
// buffers such as Fourier frequencies) are saved to checkpoints but skipped
// by the optimizer and excluded from param_count.
class ParameterStore {
public:
    struct Entry {
        Tensor tensor;
        bool trainable = true;
    };

    Tensor& create(const std::string& name, Tensor init, bool trainable = true) {
        require(entries_.find(name) == entries_.end(),
                "parameter store: duplicate name " + name);
        auto& e     = entries_[name];
        e.tensor    = std::move(init);
        e.trainable = trainable;
        if (trainable)
            e.tensor.ensure_grad();
        return e.tensor;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor& get(const std::string& name) {
        auto it = entries_.find(name);
        require(it != entries_.end(), "parameter store: unknown name " + name);
        return it->second.tensor;
    }
    const Tensor& get(const std::string& name) const {
        auto it = entries_.find(name);
        require(it != entries_.end(), "parameter store: unknown name " + name);
        return it->second.tensor;
    }

    bool trainable(const std::string& name) const {
        auto it = entries_.find(name);
        require(it != entries_.end(), "parameter store: unknown name " + name);
        return it->second.trainable;
    }

    void zero_grads() {
        for (auto& [name, e] : entries_)
            if (e.trainable) {
                e.tensor.ensure_grad();
                e.tensor.zero_grad();
            }
    }

    void scale_grads(double s) {
        for (auto& [name, e] : entries_)
            if (e.trainable && e.tensor.grad)
                for (double& g : *e.tensor.grad)
                    g *= s;
    }

    // exact count of trainable scalar parameters
    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, e] : entries_)
            if (e.trainable)
                n += e.tensor.numel();
        return n;
    }

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

private:
    std::map<std::string, Entry> entries_;
};

// Checkpoint container: "EDMSRPAR" magic, format version, string metadata
// pairs, then (name, trainable flag, shape, float64 little-endian values)
// records. Everything is little-endian.
void save_checkpoint(const ParameterStore& store,
                     const std::map<std::string, std::string>& meta,
                     const std::string& path);

struct Checkpoint {
    ParameterStore store;
    std::map<std::string, std::string> meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace edmsr
