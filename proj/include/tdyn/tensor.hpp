#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tdyn {

/// Dense row-major tensor of doubles. Training math runs at f64; file
/// formats store f32 (see checkpoint.hpp / dataset.hpp).
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s);
    Tensor(std::vector<std::int64_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::int64_t> s, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // 3D access for [C,H,W] tensors.
    double& at3(std::int64_t c, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) {
        return data[static_cast<std::size_t>((c * h + y) * w + x)];
    }
    double at3(std::int64_t c, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) const {
        return data[static_cast<std::size_t>((c * h + y) * w + x)];
    }

    void fill(double v);
    void zero() { fill(0.0); }

    /// Throws std::runtime_error naming `what` if any element is NaN/Inf.
    void check_finite(const std::string& what) const;
};

std::int64_t shape_numel(std::span<const std::int64_t> shape);
std::string shape_str(std::span<const std::int64_t> shape);

/// Deterministic RNG. Same seed, same binary -> identical streams.
/// Gaussian uses Box-Muller so draws do not depend on library internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0,1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    double normal(double mu, double sigma) { return mu + sigma * normal(); }
    /// Uniform integer in [0, n).
    std::int64_t index(std::int64_t n);
    std::uint64_t next_u64() { return engine_(); }

    /// Derives an independent stream (for sub-tasks keyed by id).
    Rng fork(std::uint64_t stream_id) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(index(i + 1))]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64; used to derive stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id);

} // namespace tdyn
