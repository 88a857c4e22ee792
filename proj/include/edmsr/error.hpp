#pragma once

#include <stdexcept>
#include <string>

namespace edmsr {

// All recoverable failures (bad files, shape mismatches, invalid configs)
// surface as this exception type with a human-readable message.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) {
    throw Error(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond)
        throw Error(msg);
}

}  // namespace edmsr
