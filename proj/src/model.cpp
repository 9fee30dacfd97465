#include "tdyn/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace tdyn::model {

using nlohmann::json;

Mode mode_from_name(const std::string& s) {
    if (s == "single_object") return Mode::SingleObject;
    if (s == "multi_object") return Mode::MultiObject;
    throw std::invalid_argument("unknown mode: " + s);
}

Variant variant_from_name(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "no_touch") return Variant::NoTouch;
    if (s == "no_embed") return Variant::NoEmbed;
    throw std::invalid_argument("unknown variant: " + s);
}

std::string mode_name(Mode m) {
    return m == Mode::SingleObject ? "single_object" : "multi_object";
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoTouch: return "no_touch";
        case Variant::NoEmbed: return "no_embed";
    }
    throw std::invalid_argument("bad variant");
}

void ModelConfig::validate() const {
    if (m < 1) throw std::invalid_argument("ModelConfig: M must be >= 1");
    if (!data::resolution_supported(resolution))
        throw std::invalid_argument("ModelConfig: unsupported resolution " +
                                    std::to_string(resolution));
    if (g_dim < 1 || e_dim < 1 || hidden < 1)
        throw std::invalid_argument("ModelConfig: dims must be positive");
    if (mode == Mode::SingleObject && variant == Variant::NoEmbed)
        throw std::invalid_argument("ModelConfig: no_embed only applies to multi_object");
}

std::string ModelConfig::to_json() const {
    json j{{"m", m},
           {"resolution", resolution},
           {"g_dim", g_dim},
           {"e_dim", e_dim},
           {"hidden", hidden},
           {"dt", dt},
           {"mode", mode_name(mode)},
           {"variant", variant_name(variant)}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
    const json j = json::parse(s);
    ModelConfig c;
    c.m = j.at("m").get<int>();
    c.resolution = j.at("resolution").get<int>();
    c.g_dim = j.at("g_dim").get<int>();
    c.e_dim = j.at("e_dim").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.dt = j.at("dt").get<double>();
    c.mode = mode_from_name(j.at("mode").get<std::string>());
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.validate();
    return c;
}

namespace {

std::int64_t conv_out(std::int64_t in) { return (in + 2 - 3) / 2 + 1; }

// Per-step mean corrections saturate at this many normalized units. Real
// one-step changes stay near or below 1, so training never reaches the
// saturation region, but runaway feedback during long rollouts does.
constexpr double kDeltaCap = 3.0;

} // namespace

void ConvTrunk::init(ParamSet& ps, const std::string& prefix, int in_ch, int out, int res,
                     Rng& rng) {
    in_channels = in_ch;
    out_dim = out;
    resolution = res;
    c1.init(ps, prefix + ".c1", in_ch, 32, 3, 2, 1, rng);
    c2.init(ps, prefix + ".c2", 32, 64, 3, 2, 1, rng);
    c3.init(ps, prefix + ".c3", 64, 128, 3, 2, 1, rng);
    const std::int64_t s = conv_out(conv_out(conv_out(res)));
    LinearLayer fcl;
    fcl.init(ps, prefix + ".fc", 128 * s * s, out, rng);
    fc = fcl;
}

void ConvTrunk::bind(const std::string& prefix, int in_ch, int out, int res) {
    in_channels = in_ch;
    out_dim = out;
    resolution = res;
    c1 = Conv2dLayer{prefix + ".c1.w", prefix + ".c1.b", ConvSpec{in_ch, 32, 3, 2, 1}};
    c2 = Conv2dLayer{prefix + ".c2.w", prefix + ".c2.b", ConvSpec{32, 64, 3, 2, 1}};
    c3 = Conv2dLayer{prefix + ".c3.w", prefix + ".c3.b", ConvSpec{64, 128, 3, 2, 1}};
    fc = LinearLayer{prefix + ".fc.w", prefix + ".fc.b"};
}

Tensor ConvTrunk::forward(const ParamSet& ps, const Tensor& stack, Cache& cache) const {
    if (stack.shape.size() != 3 || stack.shape[0] != in_channels ||
        stack.shape[1] != resolution || stack.shape[2] != resolution) {
        throw std::invalid_argument("ConvTrunk: input " + shape_str(stack.shape) +
                                    " does not match configured resolution " +
                                    std::to_string(resolution));
    }
    cache.a1 = c1.forward(ps, stack, cache.x1);
    Tensor r1 = relu_forward(cache.a1);
    cache.a2 = c2.forward(ps, r1, cache.x2);
    Tensor r2 = relu_forward(cache.a2);
    cache.a3 = c3.forward(ps, r2, cache.x3);
    Tensor r3 = relu_forward(cache.a3);
    const std::int64_t flat_len = r3.numel();
    cache.flat = Tensor({flat_len}, std::move(r3.data));
    return linear_forward(cache.flat, ps.at(fc.wname).value, ps.at(fc.bname).value);
}

void ConvTrunk::backward(ParamSet& ps, const Cache& cache, const Tensor& d_out) const {
    Tensor d_flat = fc.backward(ps, cache.flat, d_out);
    Tensor d_r3(cache.a3.shape, std::move(d_flat.data));
    Tensor d_a3 = relu_backward(cache.a3, d_r3);
    Tensor d_r2 = c3.backward(ps, cache.x3, d_a3);
    Tensor d_a2 = relu_backward(cache.a2, d_r2);
    Tensor d_r1 = c2.backward(ps, cache.x2, d_a2);
    Tensor d_a1 = relu_backward(cache.a1, d_r1);
    c1.backward(ps, cache.x1, d_a1, /*need_dx=*/false);
}

void ObjectEncoder::init(ParamSet& ps, int resolution, int e_dim, Rng& rng) {
    trunk.init(ps, "obj", data::kContrastLen, e_dim, resolution, rng);
}

void ObjectEncoder::bind(int resolution, int e_dim) {
    trunk.bind("obj", data::kContrastLen, e_dim, resolution);
}

Tensor ObjectEncoder::encode(const ParamSet& ps, const Tensor& segment, Cache& cache) const {
    cache.raw = trunk.forward(ps, segment, cache.trunk);
    double n2 = 0.0;
    for (double v : cache.raw.data) n2 += v * v;
    cache.norm = std::sqrt(std::max(n2, 1e-24));
    Tensor e = cache.raw;
    for (auto& v : e.data) v /= cache.norm;
    return e;
}

void ObjectEncoder::backward(ParamSet& ps, const Cache& cache, const Tensor& d_embedding) const {
    // d raw = (d_e - e (e . d_e)) / |raw|
    const std::size_t n = cache.raw.data.size();
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += cache.raw.data[i] / cache.norm * d_embedding.data[i];
    }
    Tensor d_raw(cache.raw.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double e_i = cache.raw.data[i] / cache.norm;
        d_raw.data[i] = (d_embedding.data[i] - e_i * dot) / cache.norm;
    }
    trunk.backward(ps, cache.trunk, d_raw);
}

double pinball_loss(std::span<const double> s, std::span<const double> shat,
                    std::span<const double> sigma, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("pinball_loss: tau outside (0,1)");
    if (s.size() != shat.size() || s.size() != sigma.size())
        throw std::invalid_argument("pinball_loss: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double q = tau <= 0.5 ? shat[i] - sigma[i] : shat[i] + sigma[i];
        const double p = s[i] - q;
        acc += std::max(tau * p, -(1.0 - tau) * p);
    }
    return acc / static_cast<double>(s.size());
}

void pinball_loss_grad(std::span<const double> s, std::span<const double> shat,
                       std::span<const double> sigma, double tau, double weight,
                       std::span<double> d_shat, std::span<double> d_sigma) {
    const double inv_n = 1.0 / static_cast<double>(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double q = tau <= 0.5 ? shat[i] - sigma[i] : shat[i] + sigma[i];
        const double p = s[i] - q;
        double dl_dp = 0.0;
        if (p > 0.0) dl_dp = tau;
        else if (p < 0.0) dl_dp = -(1.0 - tau);
        const double dq = -dl_dp * weight * inv_n;  // d loss / d q
        d_shat[i] += dq;
        d_sigma[i] += tau <= 0.5 ? -dq : dq;
    }
}

double state_loss(const Vec12& s, const Prediction& pred) {
    double l1 = 0.0;
    for (int i = 0; i < 12; ++i) {
        l1 += std::abs(s[static_cast<std::size_t>(i)] - pred.mean[static_cast<std::size_t>(i)]);
    }
    l1 /= 12.0;
    return l1 + pinball_loss(s, pred.mean, pred.sigma, 0.1) +
           pinball_loss(s, pred.mean, pred.sigma, 0.9);
}

void state_loss_grad(const Vec12& s, const Prediction& pred, double weight, Vec12& d_mean,
                     Vec12& d_sigma) {
    for (int i = 0; i < 12; ++i) {
        const auto si = static_cast<std::size_t>(i);
        const double r = s[si] - pred.mean[si];
        if (r > 0.0) d_mean[si] -= weight / 12.0;
        else if (r < 0.0) d_mean[si] += weight / 12.0;
    }
    pinball_loss_grad(s, pred.mean, pred.sigma, 0.1, weight, d_mean, d_sigma);
    pinball_loss_grad(s, pred.mean, pred.sigma, 0.9, weight, d_mean, d_sigma);
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

} // namespace

double contrastive_loss(const Tensor& anchor, const Tensor& positive,
                        const std::vector<Tensor>& negatives) {
    if (negatives.empty()) throw std::invalid_argument("contrastive_loss: needs >= 1 negative");
    const double lp = dot(anchor, positive);
    double m = lp;
    std::vector<double> ln(negatives.size());
    for (std::size_t j = 0; j < negatives.size(); ++j) {
        ln[j] = dot(anchor, negatives[j]);
        m = std::max(m, ln[j]);
    }
    double z = std::exp(lp - m);
    for (double l : ln) z += std::exp(l - m);
    return m + std::log(z) - lp;
}

double contrastive_loss_grad(const Tensor& anchor, const Tensor& positive,
                             const std::vector<Tensor>& negatives, ContrastiveGrads& grads) {
    if (negatives.empty()) throw std::invalid_argument("contrastive_loss: needs >= 1 negative");
    const double lp = dot(anchor, positive);
    double m = lp;
    std::vector<double> ln(negatives.size());
    for (std::size_t j = 0; j < negatives.size(); ++j) {
        ln[j] = dot(anchor, negatives[j]);
        m = std::max(m, ln[j]);
    }
    const double ep = std::exp(lp - m);
    double z = ep;
    std::vector<double> en(negatives.size());
    for (std::size_t j = 0; j < negatives.size(); ++j) {
        en[j] = std::exp(ln[j] - m);
        z += en[j];
    }
    const double p_pos = ep / z;

    grads.d_anchor = Tensor::zeros(anchor.shape);
    grads.d_positive = Tensor::zeros(anchor.shape);
    grads.d_negatives.assign(negatives.size(), Tensor::zeros(anchor.shape));
    const std::size_t n = anchor.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        grads.d_anchor.data[i] += (p_pos - 1.0) * positive.data[i];
        grads.d_positive.data[i] += (p_pos - 1.0) * anchor.data[i];
    }
    for (std::size_t j = 0; j < negatives.size(); ++j) {
        const double pj = en[j] / z;
        for (std::size_t i = 0; i < n; ++i) {
            grads.d_anchor.data[i] += pj * negatives[j].data[i];
            grads.d_negatives[j].data[i] += pj * anchor.data[i];
        }
    }
    return m + std::log(z) - lp;
}

DynamicsModel DynamicsModel::create(const ModelConfig& cfg, const data::NormStats& norm,
                                    std::uint64_t seed) {
    cfg.validate();
    DynamicsModel mdl;
    mdl.cfg = cfg;
    mdl.norm = norm;
    Rng rng(mix_seed(seed, 0x6d6f64));
    if (cfg.use_touch()) {
        mdl.tac_.init(mdl.params, "tac", cfg.m, cfg.g_dim, cfg.resolution, rng);
    }
    if (cfg.use_embedding()) {
        mdl.obj_enc_.init(mdl.params, cfg.resolution, cfg.e_dim, rng);
    }
    mdl.h1_.init(mdl.params, "head.l1", cfg.input_dim(), cfg.hidden, rng);
    mdl.h2_.init(mdl.params, "head.l2", cfg.hidden, cfg.hidden, rng);
    // Small final layer keeps the initial prediction near the identity map.
    mdl.h3_.init(mdl.params, "head.l3", cfg.hidden, 24, rng, 0.1);
    // Start sigma around softplus(-2) ~ 0.13 normalized units.
    auto& b3 = mdl.params.at("head.l3.b").value;
    for (int i = 12; i < 24; ++i) b3.data[static_cast<std::size_t>(i)] = -2.0;

    Tensor nm({12}), ns({12});
    for (int i = 0; i < 12; ++i) {
        nm.data[static_cast<std::size_t>(i)] = norm.mean[static_cast<std::size_t>(i)];
        ns.data[static_cast<std::size_t>(i)] = norm.stdev[static_cast<std::size_t>(i)];
    }
    mdl.params.add("norm.mean", std::move(nm));
    mdl.params.add("norm.std", std::move(ns));
    return mdl;
}

void DynamicsModel::save(const std::string& path) const {
    save_checkpoint(path, params, cfg.to_json());
}

DynamicsModel DynamicsModel::load(const std::string& path) {
    auto loaded = load_checkpoint(path);
    DynamicsModel mdl;
    mdl.cfg = ModelConfig::from_json(loaded.trailer_json);
    mdl.params = std::move(loaded.params);
    if (mdl.cfg.use_touch()) {
        mdl.tac_.bind("tac", mdl.cfg.m, mdl.cfg.g_dim, mdl.cfg.resolution);
    }
    if (mdl.cfg.use_embedding()) {
        mdl.obj_enc_.bind(mdl.cfg.resolution, mdl.cfg.e_dim);
    }
    mdl.h1_ = LinearLayer{"head.l1.w", "head.l1.b"};
    mdl.h2_ = LinearLayer{"head.l2.w", "head.l2.b"};
    mdl.h3_ = LinearLayer{"head.l3.w", "head.l3.b"};
    const auto& nm = mdl.params.at("norm.mean").value;
    const auto& ns = mdl.params.at("norm.std").value;
    for (int i = 0; i < 12; ++i) {
        mdl.norm.mean[static_cast<std::size_t>(i)] = nm.data[static_cast<std::size_t>(i)];
        mdl.norm.stdev[static_cast<std::size_t>(i)] = ns.data[static_cast<std::size_t>(i)];
    }
    return mdl;
}

Prediction DynamicsModel::predict(const Vec12& s_raw, const Tensor* stack,
                                  const Tensor* embedding, StepCache* cache) const {
    StepCache local;
    StepCache& c = cache ? *cache : local;

    for (double v : s_raw) {
        if (!std::isfinite(v)) throw std::runtime_error("predict: non-finite state input");
    }
    c.s_n = norm.apply(s_raw);

    Tensor g;
    if (cfg.use_touch()) {
        if (!stack) throw std::invalid_argument("predict: tactile stack required");
        g = tac_.forward(params, *stack, c.tac);
    }
    if (cfg.use_embedding() && !embedding) {
        throw std::invalid_argument("predict: object embedding required");
    }

    c.x = Tensor({cfg.input_dim()});
    std::int64_t off = 0;
    for (int i = 0; i < 12; ++i) c.x[off++] = c.s_n[static_cast<std::size_t>(i)];
    if (cfg.use_touch()) {
        for (double v : g.data) c.x[off++] = v;
    }
    if (cfg.use_embedding()) {
        if (embedding->numel() != cfg.e_dim)
            throw std::invalid_argument("predict: embedding dim mismatch");
        for (double v : embedding->data) c.x[off++] = v;
    }

    c.a1 = h1_.forward(params, c.x, c.x1);
    Tensor r1 = relu_forward(c.a1);
    c.a2 = h2_.forward(params, r1, c.x2);
    Tensor r2 = relu_forward(c.a2);
    c.raw_out = h3_.forward(params, r2, c.x3);
    c.raw_out.check_finite("dynamics head output");

    // Residual base: constant-velocity step q' = q + v*dt, v' = v. The head
    // learns acceleration-driven corrections on top, which keeps long
    // autoregressive rollouts near the data manifold.
    Vec12 base = s_raw;
    for (int ent = 0; ent < 2; ++ent) {
        for (int ax = 0; ax < 3; ++ax) {
            const auto q = static_cast<std::size_t>(6 * ent + ax);
            base[q] += cfg.dt * s_raw[q + 3];
        }
    }
    const Vec12 base_n = norm.apply(base);

    Prediction pred;
    Vec12 mean_n{}, sigma_n{};
    for (int i = 0; i < 12; ++i) {
        const auto si = static_cast<std::size_t>(i);
        mean_n[si] = base_n[si] + kDeltaCap * std::tanh(c.raw_out[i] / kDeltaCap);
        sigma_n[si] = softplus_scalar(c.raw_out[12 + i]);
    }
    pred.mean = norm.invert(mean_n);
    for (int i = 0; i < 12; ++i) {
        const auto si = static_cast<std::size_t>(i);
        pred.sigma[si] = sigma_n[si] * norm.stdev[si];
    }
    return pred;
}

void DynamicsModel::backward(const StepCache& c, const Vec12& d_mean, const Vec12& d_sigma,
                             Tensor* d_embedding) {
    Tensor d_out({24});
    for (int i = 0; i < 12; ++i) {
        const auto si = static_cast<std::size_t>(i);
        // mean_raw = norm.mean + norm.std * (base_n + cap*tanh(out_i/cap))
        const double th = std::tanh(c.raw_out[i] / kDeltaCap);
        d_out[i] = d_mean[si] * norm.stdev[si] * (1.0 - th * th);
        // sigma_raw = norm.std * softplus(out_{12+i})
        const double v = c.raw_out[12 + i];
        const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        d_out[12 + i] = d_sigma[si] * norm.stdev[si] * sig;
    }
    Tensor d_r2 = h3_.backward(params, c.x3, d_out);
    Tensor d_a2 = relu_backward(c.a2, d_r2);
    Tensor d_r1 = h2_.backward(params, c.x2, d_a2);
    Tensor d_a1 = relu_backward(c.a1, d_r1);
    Tensor d_x = h1_.backward(params, c.x1, d_a1);

    std::int64_t off = 12;  // state slice has no trainable upstream
    if (cfg.use_touch()) {
        Tensor d_g({cfg.g_dim});
        for (int i = 0; i < cfg.g_dim; ++i) d_g[i] = d_x[off + i];
        off += cfg.g_dim;
        tac_.backward(params, c.tac, d_g);
    }
    if (cfg.use_embedding() && d_embedding) {
        for (int i = 0; i < cfg.e_dim; ++i) d_embedding->data[static_cast<std::size_t>(i)] += d_x[off + i];
    }
}

Tensor DynamicsModel::object_embedding(int object_id) const {
    const std::string name = "emb." + std::to_string(object_id);
    if (!params.contains(name)) {
        throw std::out_of_range("model has no cached embedding for object " +
                                std::to_string(object_id));
    }
    return params.at(name).value;
}

void DynamicsModel::set_object_embedding(int object_id, const Tensor& e) {
    const std::string name = "emb." + std::to_string(object_id);
    if (params.contains(name)) {
        params.at(name).value = e;
    } else {
        params.add(name, e);
    }
}

bool DynamicsModel::has_object_embedding(int object_id) const {
    return params.contains("emb." + std::to_string(object_id));
}

} // namespace tdyn::model
