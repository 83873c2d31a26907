#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace stvid {

// Configuration / usage errors (bad shapes, bad flags). CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric failures (NaN/Inf encountered, divergence). CLI maps these to exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. mt19937_64 has a standardized bit stream; uniform/normal are
// derived from raw 64-bit draws so the value sequence is identical on every platform
// with the same libm.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller (cosine branch only, two draws per sample)
    double normal();

    // uniform integer in [0, n)
    int uniform_int(int n);

private:
    std::mt19937_64 eng_;
};

// Splitmix-style seed combiner for deriving per-step / per-item streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Dense row-major tensor of doubles, up to 5 axes. Plain value type; all ops are pure.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v);
    static Tensor randn(std::vector<int> s, Rng& rng);

    std::int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }
    int extent(int axis) const;

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    double& at(int i0);
    double& at(int i0, int i1);
    double& at(int i0, int i1, int i2);
    double& at(int i0, int i1, int i2, int i3);
    double at(int i0) const;
    double at(int i0, int i1) const;
    double at(int i0, int i1, int i2) const;
    double at(int i0, int i1, int i2, int i3) const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;
};

std::int64_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Global toggle for per-op finiteness checking (enabled by test mains).
bool& finite_checks();
// Throws NumericError if t contains NaN/Inf. `where` names the producing op.
void require_finite(const Tensor& t, const char* where);
// Same check, but only when finite_checks() is on.
void check_finite(const Tensor& t, const char* where);

// FNV-1a over the raw little-endian bytes of the data vector.
std::uint64_t fnv1a(const Tensor& t);

// Round every element to the nearest float32-representable value. Weights are kept
// on the float32 grid so checkpoints (f32 payload) round-trip bit-exactly.
Tensor quantize_f32(const Tensor& t);
double quantize_f32(double v);

}  // namespace stvid
