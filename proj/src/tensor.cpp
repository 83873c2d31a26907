#include "stvid/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

namespace stvid {

double Rng::normal() {
    // u1 in (0,1] so log is finite
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw ConfigError("Rng::uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 0) throw ConfigError("negative extent in shape " + ::stvid::shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    if (shape.size() > 5) throw ConfigError("tensor rank > 5: " + ::stvid::shape_str(shape));
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape.size() > 5) throw ConfigError("tensor rank > 5: " + ::stvid::shape_str(shape));
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
        throw ConfigError("data length " + std::to_string(data.size()) + " does not match shape " + ::stvid::shape_str(shape));
}

Tensor Tensor::full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
}

Tensor Tensor::randn(std::vector<int> s, Rng& rng) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = rng.normal();
    return t;
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

int Tensor::extent(int axis) const {
    if (axis < 0 || axis >= rank()) throw ConfigError("axis " + std::to_string(axis) + " out of range for " + shape_str());
    return shape[static_cast<std::size_t>(axis)];
}

std::string Tensor::shape_str() const { return ::stvid::shape_str(shape); }

namespace {
inline std::size_t idx2(const std::vector<int>& s, int a, int b) {
    return static_cast<std::size_t>(a) * s[1] + b;
}
inline std::size_t idx3(const std::vector<int>& s, int a, int b, int c) {
    return (static_cast<std::size_t>(a) * s[1] + b) * s[2] + c;
}
inline std::size_t idx4(const std::vector<int>& s, int a, int b, int c, int d) {
    return ((static_cast<std::size_t>(a) * s[1] + b) * s[2] + c) * s[3] + d;
}
}  // namespace

double& Tensor::at(int i0) { return data[static_cast<std::size_t>(i0)]; }
double& Tensor::at(int i0, int i1) { return data[idx2(shape, i0, i1)]; }
double& Tensor::at(int i0, int i1, int i2) { return data[idx3(shape, i0, i1, i2)]; }
double& Tensor::at(int i0, int i1, int i2, int i3) { return data[idx4(shape, i0, i1, i2, i3)]; }
double Tensor::at(int i0) const { return data[static_cast<std::size_t>(i0)]; }
double Tensor::at(int i0, int i1) const { return data[idx2(shape, i0, i1)]; }
double Tensor::at(int i0, int i1, int i2) const { return data[idx3(shape, i0, i1, i2)]; }
double Tensor::at(int i0, int i1, int i2, int i3) const { return data[idx4(shape, i0, i1, i2, i3)]; }

bool& finite_checks() {
    static bool enabled = false;
    return enabled;
}

void require_finite(const Tensor& t, const char* where) {
    for (double v : t.data) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + where);
    }
}

void check_finite(const Tensor& t, const char* where) {
    if (finite_checks()) require_finite(t, where);
}

std::uint64_t fnv1a(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : t.data) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor quantize_f32(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.data) v = quantize_f32(v);
    return out;
}

}  // namespace stvid
