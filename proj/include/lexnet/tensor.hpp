#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lexnet {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or dimension mismatch between tensors.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Malformed input data (CSV/JSONL rows, bad values).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

/// File-level failures: missing files, bad magic, checksum, version.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Operation invoked in an invalid state (uninitialized BN stats,
/// untrained model, missing gradients).
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(msg) {}
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + ")";
}

/// Dense N-d array of float32 with an optional same-shape gradient buffer.
/// Axis order for feature maps is (channel, height, width); batches are
/// handled by iterating over tensors.
struct Tensor {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty unless allocated; same length as data otherwise

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}
    Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    int dim(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

    // (c,h,w) accessors for 3-axis feature maps
    float& at(int c, int h, int w) {
        return data[static_cast<std::size_t>((c * shape[1] + h) * shape[2] + w)];
    }
    float at(int c, int h, int w) const {
        return data[static_cast<std::size_t>((c * shape[1] + h) * shape[2] + w)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
    }
    bool has_grad() const { return grad.size() == data.size() && !data.empty(); }
};

inline void require_shape(const Tensor& t, const Shape& expect, const char* what) {
    if (t.shape != expect)
        throw ShapeError(std::string(what) + ": expected shape " + shape_str(expect) +
                         ", got " + shape_str(t.shape));
}

/// NaN/Inf anywhere in a buffer is an error; every forward/backward output
/// must stay finite.
inline void check_finite(const std::vector<float>& v, const char* what) {
    for (float x : v) {
        if (!std::isfinite(x)) throw Error(std::string("non-finite value in ") + what);
    }
}

inline void check_finite(const Tensor& t, const char* what) { check_finite(t.data, what); }

enum class ParamGroup { backbone, prototype, last_layer };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::backbone: return "backbone";
        case ParamGroup::prototype: return "prototype";
        case ParamGroup::last_layer: return "last_layer";
    }
    return "?";
}

/// A trainable tensor. Group membership is fixed at construction; the
/// training stages select parameters by group.
struct Parameter {
    Tensor tensor;
    bool trainable = true;
    ParamGroup group = ParamGroup::backbone;
    std::string name;

    Parameter() = default;
    Parameter(Shape s, ParamGroup g, std::string n)
        : tensor(std::move(s)), group(g), name(std::move(n)) {}
};

// --- deterministic RNG helpers -------------------------------------------
//
// All draws go through explicit constructions on top of mt19937 output so
// corpora, splits and training runs are bit-reproducible for a given seed.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive an independent stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {
        if (state_ == 0) state_ = 0x1234abcdULL;
    }

    std::uint64_t next() {
        // xorshift64*: small, fast, fully specified here.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    /// Uniform in [0,1) with 24-bit resolution.
    float unit() { return static_cast<float>(next() >> 40) * (1.0f / 16777216.0f); }

    /// Uniform in [0,1) with 53-bit resolution.
    double unit_double() {
        return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0);
    }

    float uniform(float a, float b) { return a + (b - a) * unit(); }

    /// Uniform integer in [0, n).
    std::uint32_t bounded(std::uint32_t n) {
        if (n == 0) throw Error("bounded(0)");
        std::uint64_t threshold = (~std::uint64_t(0)) - (~std::uint64_t(0)) % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= threshold);
        return static_cast<std::uint32_t>(x % n);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = unit_double();
        double u2 = unit_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = bounded(static_cast<std::uint32_t>(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace lexnet
