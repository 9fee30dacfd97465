#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tdyn/tensor.hpp"

namespace tdyn {

/// Non-finite values where finite ones are required (NaN/Inf abort).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named parameter with gradient and Adam state. All four tensors share a shape.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
};

/// Ordered set of parameters. Iteration order is insertion order, which makes
/// checkpoints and Adam updates deterministic.
class ParamSet {
public:
    Param& add(const std::string& name, Tensor value);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param>& entries() { return entries_; }
    const std::vector<Param>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void zero_grad();
    std::int64_t total_elements() const;

private:
    std::vector<Param> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step_count = 0;

    void validate() const;
};

/// Bias-corrected Adam update over every parameter; increments step_count and
/// zeroes gradients. Throws if any gradient is non-finite, naming the parameter.
void adam_step(ParamSet& params, AdamConfig& cfg);

// ---- layer primitives (pure functions + cache structs) ----

struct ConvSpec {
    std::int64_t in_c = 0, out_c = 0, k = 3, stride = 1, pad = 0;
};

/// out[Cout,H',W'] with H' = (H + 2*pad - K)/stride + 1 (floor).
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec);
void conv2d_backward(const Tensor& x, const Tensor& w, const ConvSpec& spec, const Tensor& dy,
                     Tensor* dx, Tensor& dw, Tensor& db);

/// out[M] = W[M,N] * x[N] + b[M].
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor& dw,
                     Tensor& db);

Tensor relu_forward(const Tensor& x);
/// Subgradient at 0 is taken as 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

/// log(1+exp(x)), stable for large |x|; strictly positive.
Tensor softplus_forward(const Tensor& x);
Tensor softplus_backward(const Tensor& x, const Tensor& dy);
double softplus_scalar(double x);

// ---- layers bound to a ParamSet ----

struct Conv2dLayer {
    std::string wname, bname;
    ConvSpec spec;

    void init(ParamSet& ps, const std::string& prefix, std::int64_t in_c, std::int64_t out_c,
              std::int64_t k, std::int64_t stride, std::int64_t pad, Rng& rng);
    Tensor forward(const ParamSet& ps, const Tensor& x, Tensor& x_cache) const;
    Tensor backward(ParamSet& ps, const Tensor& x_cache, const Tensor& dy, bool need_dx = true) const;
};

struct LinearLayer {
    std::string wname, bname;

    void init(ParamSet& ps, const std::string& prefix, std::int64_t in_dim, std::int64_t out_dim,
              Rng& rng, double scale = 1.0);
    Tensor forward(const ParamSet& ps, const Tensor& x, Tensor& x_cache) const;
    Tensor backward(ParamSet& ps, const Tensor& x_cache, const Tensor& dy, bool need_dx = true) const;
};

/// He-uniform fan-in init, U(+-sqrt(6/fan_in)) * scale.
void he_uniform(Tensor& t, std::int64_t fan_in, Rng& rng, double scale = 1.0);

// ---- finite-difference gradient check ----

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

/// Compares analytic gradients against central finite differences.
/// `loss_fn` must compute the scalar loss and leave fresh gradients in
/// `params` (it is called with zeroed grads). At most `max_per_param`
/// elements per tensor are probed (seeded subsample; <=0 checks all).
GradCheckResult grad_check(const std::function<double(ParamSet&)>& loss_fn, ParamSet& params,
                           double eps = 1e-5, std::int64_t max_per_param = 0,
                           std::uint64_t probe_seed = 0);

} // namespace tdyn
