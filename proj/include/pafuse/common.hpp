#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace pafuse {

// Error categories map onto CLI exit codes: usage/config -> 1, data -> 2, numeric -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Dense frames x joints x dims array, row-major with dims fastest.
struct Tensor3 {
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::size_t dims = 0;
    std::vector<double> values;

    Tensor3() = default;
    Tensor3(std::size_t n, std::size_t j, std::size_t d, double fill = 0.0)
        : frames(n), joints(j), dims(d), values(n * j * d, fill) {}

    double& operator()(std::size_t n, std::size_t j, std::size_t d) {
        return values[(n * joints + j) * dims + d];
    }
    double operator()(std::size_t n, std::size_t j, std::size_t d) const {
        return values[(n * joints + j) * dims + d];
    }

    std::size_t size() const noexcept { return values.size(); }
    bool same_shape(const Tensor3& o) const noexcept {
        return frames == o.frames && joints == o.joints && dims == o.dims;
    }
    bool operator==(const Tensor3& o) const = default;
};

inline std::string shape_string(const Tensor3& t) {
    return std::to_string(t.frames) + "x" + std::to_string(t.joints) + "x" + std::to_string(t.dims);
}

inline void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
    }
}

inline bool all_finite(const Tensor3& t) {
    for (double v : t.values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

/// Per-part arrays keyed by part name.
using PartTensors = std::map<std::string, Tensor3>;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `index` under `seed`; independent of evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

// FNV-1a over bytes.
inline std::uint64_t fnv1a64(const std::string& bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace pafuse
