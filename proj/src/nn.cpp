#include "tdyn/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace tdyn {

Param& ParamSet::add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate parameter " + name);
    Param p;
    p.name = name;
    p.grad = Tensor::zeros(value.shape);
    p.adam_m = Tensor::zeros(value.shape);
    p.adam_v = Tensor::zeros(value.shape);
    p.value = std::move(value);
    index_[name] = entries_.size();
    entries_.push_back(std::move(p));
    return entries_.back();
}

Param& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no parameter " + name);
    return entries_[it->second];
}

const Param& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no parameter " + name);
    return entries_[it->second];
}

void ParamSet::zero_grad() {
    for (auto& p : entries_) p.grad.zero();
}

std::int64_t ParamSet::total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : entries_) n += p.value.numel();
    return n;
}

void AdamConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("AdamConfig: lr must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw std::invalid_argument("AdamConfig: betas must be in [0,1)");
    if (step_count < 0) throw std::invalid_argument("AdamConfig: negative step_count");
}

void adam_step(ParamSet& params, AdamConfig& cfg) {
    cfg.validate();
    for (const auto& p : params.entries()) {
        for (double g : p.grad.data) {
            if (!std::isfinite(g)) {
                throw NumericError("adam_step: non-finite gradient in parameter " + p.name);
            }
        }
    }
    cfg.step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(cfg.step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(cfg.step_count));
    for (auto& p : params.entries()) {
        const std::size_t n = p.value.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = p.grad.data[i];
            p.adam_m.data[i] = cfg.beta1 * p.adam_m.data[i] + (1.0 - cfg.beta1) * g;
            p.adam_v.data[i] = cfg.beta2 * p.adam_v.data[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p.adam_m.data[i] / bc1;
            const double vhat = p.adam_v.data[i] / bc2;
            p.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        p.grad.zero();
    }
}

static std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

static void conv_check(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
    if (x.shape.size() != 3 || x.shape[0] != s.in_c)
        throw std::invalid_argument("conv2d: input must be [Cin,H,W], got " + shape_str(x.shape));
    if (w.shape.size() != 4 || w.shape[0] != s.out_c || w.shape[1] != s.in_c ||
        w.shape[2] != s.k || w.shape[3] != s.k)
        throw std::invalid_argument("conv2d: weight shape mismatch " + shape_str(w.shape));
    if (b.shape.size() != 1 || b.shape[0] != s.out_c)
        throw std::invalid_argument("conv2d: bias shape mismatch " + shape_str(b.shape));
    if (s.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (x.shape[1] + 2 * s.pad < s.k || x.shape[2] + 2 * s.pad < s.k)
        throw std::invalid_argument("conv2d: kernel does not fit padded input");
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
    conv_check(x, w, b, s);
    const std::int64_t h = x.shape[1], wd = x.shape[2];
    const std::int64_t oh = conv_out_dim(h, s.k, s.stride, s.pad);
    const std::int64_t ow = conv_out_dim(wd, s.k, s.stride, s.pad);
    Tensor y({s.out_c, oh, ow});
    const double* xp = x.data.data();
    const double* wp = w.data.data();
    double* yp = y.data.data();
    for (std::int64_t oc = 0; oc < s.out_c; ++oc) {
        const double bias = b.data[static_cast<std::size_t>(oc)];
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                double acc = bias;
                const std::int64_t iy0 = oy * s.stride - s.pad;
                const std::int64_t ix0 = ox * s.stride - s.pad;
                for (std::int64_t ic = 0; ic < s.in_c; ++ic) {
                    const double* xc = xp + (ic * h) * wd;
                    const double* wc = wp + ((oc * s.in_c + ic) * s.k) * s.k;
                    for (std::int64_t ky = 0; ky < s.k; ++ky) {
                        const std::int64_t iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xc + iy * wd;
                        const double* wrow = wc + ky * s.k;
                        for (std::int64_t kx = 0; kx < s.k; ++kx) {
                            const std::int64_t ix = ix0 + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += xrow[ix] * wrow[kx];
                        }
                    }
                }
                yp[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvSpec& s, const Tensor& dy,
                     Tensor* dx, Tensor& dw, Tensor& db) {
    const std::int64_t h = x.shape[1], wd = x.shape[2];
    const std::int64_t oh = conv_out_dim(h, s.k, s.stride, s.pad);
    const std::int64_t ow = conv_out_dim(wd, s.k, s.stride, s.pad);
    if (dy.shape.size() != 3 || dy.shape[0] != s.out_c || dy.shape[1] != oh || dy.shape[2] != ow)
        throw std::invalid_argument("conv2d_backward: dy shape mismatch " + shape_str(dy.shape));
    if (!dw.same_shape(w)) dw = Tensor::zeros(w.shape);
    if (db.shape != std::vector<std::int64_t>{s.out_c}) db = Tensor::zeros({s.out_c});
    if (dx) *dx = Tensor::zeros(x.shape);

    const double* xp = x.data.data();
    const double* wp = w.data.data();
    const double* dyp = dy.data.data();
    for (std::int64_t oc = 0; oc < s.out_c; ++oc) {
        double bacc = 0.0;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const double g = dyp[(oc * oh + oy) * ow + ox];
                if (g == 0.0) continue;
                bacc += g;
                const std::int64_t iy0 = oy * s.stride - s.pad;
                const std::int64_t ix0 = ox * s.stride - s.pad;
                for (std::int64_t ic = 0; ic < s.in_c; ++ic) {
                    const double* xc = xp + (ic * h) * wd;
                    double* dwc = dw.data.data() + ((oc * s.in_c + ic) * s.k) * s.k;
                    const double* wc = wp + ((oc * s.in_c + ic) * s.k) * s.k;
                    double* dxc = dx ? dx->data.data() + (ic * h) * wd : nullptr;
                    for (std::int64_t ky = 0; ky < s.k; ++ky) {
                        const std::int64_t iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xc + iy * wd;
                        double* dwrow = dwc + ky * s.k;
                        const double* wrow = wc + ky * s.k;
                        double* dxrow = dxc ? dxc + iy * wd : nullptr;
                        for (std::int64_t kx = 0; kx < s.k; ++kx) {
                            const std::int64_t ix = ix0 + kx;
                            if (ix < 0 || ix >= wd) continue;
                            dwrow[kx] += g * xrow[ix];
                            if (dxrow) dxrow[ix] += g * wrow[kx];
                        }
                    }
                }
            }
        }
        db.data[static_cast<std::size_t>(oc)] += bacc;
    }
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.shape.size() != 2 || x.numel() != w.shape[1] || b.numel() != w.shape[0])
        throw std::invalid_argument("linear: dim mismatch x=" + shape_str(x.shape) +
                                    " w=" + shape_str(w.shape) + " b=" + shape_str(b.shape));
    const std::int64_t m = w.shape[0], n = w.shape[1];
    Tensor y({m});
    const double* xp = x.data.data();
    const double* wp = w.data.data();
    for (std::int64_t i = 0; i < m; ++i) {
        double acc = b.data[static_cast<std::size_t>(i)];
        const double* wrow = wp + i * n;
        for (std::int64_t j = 0; j < n; ++j) acc += wrow[j] * xp[j];
        y.data[static_cast<std::size_t>(i)] = acc;
    }
    return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor& dw,
                     Tensor& db) {
    const std::int64_t m = w.shape[0], n = w.shape[1];
    if (dy.numel() != m) throw std::invalid_argument("linear_backward: dy dim mismatch");
    if (!dw.same_shape(w)) dw = Tensor::zeros(w.shape);
    if (db.numel() != m) db = Tensor::zeros({m});
    if (dx) *dx = Tensor::zeros(x.shape);
    const double* xp = x.data.data();
    const double* wp = w.data.data();
    for (std::int64_t i = 0; i < m; ++i) {
        const double g = dy.data[static_cast<std::size_t>(i)];
        db.data[static_cast<std::size_t>(i)] += g;
        if (g == 0.0) continue;
        double* dwrow = dw.data.data() + i * n;
        const double* wrow = wp + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            dwrow[j] += g * xp[j];
            if (dx) dx->data[static_cast<std::size_t>(j)] += g * wrow[j];
        }
    }
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    if (!x.same_shape(dy)) throw std::invalid_argument("relu_backward: shape mismatch");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
        if (x.data[i] <= 0.0) dx.data[i] = 0.0;
    }
    return dx;
}

double softplus_scalar(double x) {
    // max(x,0) + log1p(exp(-|x|)) avoids overflow on either tail.
    return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor softplus_forward(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = softplus_scalar(v);
    return y;
}

Tensor softplus_backward(const Tensor& x, const Tensor& dy) {
    if (!x.same_shape(dy)) throw std::invalid_argument("softplus_backward: shape mismatch");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
        const double v = x.data[i];
        const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        dx.data[i] *= sig;
    }
    return dx;
}

void he_uniform(Tensor& t, std::int64_t fan_in, Rng& rng, double scale) {
    const double limit = scale * std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = rng.uniform(-limit, limit);
}

void Conv2dLayer::init(ParamSet& ps, const std::string& prefix, std::int64_t in_c,
                       std::int64_t out_c, std::int64_t k, std::int64_t stride, std::int64_t pad,
                       Rng& rng) {
    spec = ConvSpec{in_c, out_c, k, stride, pad};
    wname = prefix + ".w";
    bname = prefix + ".b";
    Tensor w({out_c, in_c, k, k});
    he_uniform(w, in_c * k * k, rng);
    ps.add(wname, std::move(w));
    ps.add(bname, Tensor::zeros({out_c}));
}

Tensor Conv2dLayer::forward(const ParamSet& ps, const Tensor& x, Tensor& x_cache) const {
    x_cache = x;
    return conv2d_forward(x, ps.at(wname).value, ps.at(bname).value, spec);
}

Tensor Conv2dLayer::backward(ParamSet& ps, const Tensor& x_cache, const Tensor& dy,
                             bool need_dx) const {
    Tensor dx;
    conv2d_backward(x_cache, ps.at(wname).value, spec, dy, need_dx ? &dx : nullptr,
                    ps.at(wname).grad, ps.at(bname).grad);
    return dx;
}

void LinearLayer::init(ParamSet& ps, const std::string& prefix, std::int64_t in_dim,
                       std::int64_t out_dim, Rng& rng, double scale) {
    wname = prefix + ".w";
    bname = prefix + ".b";
    Tensor w({out_dim, in_dim});
    he_uniform(w, in_dim, rng, scale);
    ps.add(wname, std::move(w));
    ps.add(bname, Tensor::zeros({out_dim}));
}

Tensor LinearLayer::forward(const ParamSet& ps, const Tensor& x, Tensor& x_cache) const {
    x_cache = x;
    return linear_forward(x, ps.at(wname).value, ps.at(bname).value);
}

Tensor LinearLayer::backward(ParamSet& ps, const Tensor& x_cache, const Tensor& dy,
                             bool need_dx) const {
    Tensor dx;
    linear_backward(x_cache, ps.at(wname).value, dy, need_dx ? &dx : nullptr, ps.at(wname).grad,
                    ps.at(bname).grad);
    return dx;
}

GradCheckResult grad_check(const std::function<double(ParamSet&)>& loss_fn, ParamSet& params,
                           double eps, std::int64_t max_per_param, std::uint64_t probe_seed) {
    params.zero_grad();
    loss_fn(params);
    // Snapshot analytic gradients before FD evaluations clobber them.
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params.entries()) analytic.push_back(p.grad);

    GradCheckResult res;
    Rng probe(mix_seed(probe_seed, 0x67726164));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params.entries()[pi];
        const std::int64_t n = p.value.numel();
        std::vector<std::int64_t> idx;
        if (max_per_param > 0 && n > max_per_param) {
            for (std::int64_t j = 0; j < max_per_param; ++j) idx.push_back(probe.index(n));
        } else {
            idx.resize(static_cast<std::size_t>(n));
            for (std::int64_t j = 0; j < n; ++j) idx[static_cast<std::size_t>(j)] = j;
        }
        for (std::int64_t j : idx) {
            const std::size_t sj = static_cast<std::size_t>(j);
            const double orig = p.value.data[sj];
            p.value.data[sj] = orig + eps;
            params.zero_grad();
            const double fp = loss_fn(params);
            p.value.data[sj] = orig - eps;
            params.zero_grad();
            const double fm = loss_fn(params);
            p.value.data[sj] = orig;
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = analytic[pi].data[sj];
            const double denom = std::max({1.0, std::abs(num), std::abs(ana)});
            const double rel = std::abs(num - ana) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = p.name;
                res.worst_index = j;
            }
        }
    }
    // Restore analytic gradients so callers see a consistent state.
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        params.entries()[pi].grad = analytic[pi];
    }
    return res;
}

} // namespace tdyn
