#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sfp/errors.hpp"

namespace sfp {

/// Dense row-major tensor of rank 1..4. Value semantics throughout; the
/// scalar type is float in training mode and double in verification mode.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        validate_shape();
        data.assign(numel_of(shape), T(0));
    }

    Tensor(std::vector<std::size_t> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (data.size() != numel_of(shape)) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str());
        }
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto e : s) n *= e;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t d) const { return shape.at(d); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // Rank-4 indexing, the common case for activation and filter tensors.
    T& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
        return data[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    const T& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return data[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    T& at2(std::size_t a, std::size_t b) { return data[a * shape[1] + b]; }
    const T& at2(std::size_t a, std::size_t b) const { return data[a * shape[1] + b]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ']';
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

private:
    void validate_shape() const {
        if (shape.empty() || shape.size() > 4) {
            throw DimensionError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
        }
        for (auto e : shape) {
            if (e == 0) throw DimensionError("tensor extents must be >= 1, got shape " + shape_str());
        }
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Deterministic RNG used for weight init, data synthesis and test inputs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(eng_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(eng_);
    }
    std::uint64_t next_u64() { return eng_(); }
    std::size_t index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        return d(eng_);
    }
    std::mt19937_64& engine() { return eng_; }

    template <typename T>
    void fill_normal(Tensor<T>& t, double mean, double stddev) {
        for (auto& v : t.data) v = static_cast<T>(normal(mean, stddev));
    }
    template <typename T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (auto& v : t.data) v = static_cast<T>(uniform(lo, hi));
    }

private:
    std::mt19937_64 eng_;
};

/// FNV-1a 64-bit, used for config hashes, log hashes and blob checksums.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

} // namespace sfp
