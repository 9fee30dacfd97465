#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdyn/dataset.hpp"
#include "tdyn/nn.hpp"

namespace tdyn::model {

enum class Mode { SingleObject, MultiObject };
enum class Variant { Full, NoTouch, NoEmbed };

Mode mode_from_name(const std::string& s);
Variant variant_from_name(const std::string& s);
std::string mode_name(Mode m);
std::string variant_name(Variant v);

struct ModelConfig {
    int m = 5;            // tactile window length
    int resolution = 32;  // tactile input resolution (downsampled from 32)
    int g_dim = 64;       // tactile embedding
    int e_dim = 32;       // object embedding
    int hidden = 256;
    double dt = 1.0 / 15.0;  // step length of the residual integrator base
    Mode mode = Mode::SingleObject;
    Variant variant = Variant::Full;

    bool use_touch() const { return variant != Variant::NoTouch; }
    bool use_embedding() const { return mode == Mode::MultiObject && variant != Variant::NoEmbed; }
    int input_dim() const {
        return 12 + (use_touch() ? g_dim : 0) + (use_embedding() ? e_dim : 0);
    }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& s);
};

/// Three stride-2 conv+ReLU stages (channels 32/64/128) followed by a linear
/// projection of the flattened map.
struct ConvTrunk {
    Conv2dLayer c1, c2, c3;
    LinearLayer fc;
    int in_channels = 0, out_dim = 0, resolution = 0;

    void init(ParamSet& ps, const std::string& prefix, int in_ch, int out, int res, Rng& rng);
    /// Re-binds layer names after loading a checkpoint (no new params).
    void bind(const std::string& prefix, int in_ch, int out, int res);

    struct Cache {
        Tensor x1, x2, x3;  // conv inputs
        Tensor a1, a2, a3;  // pre-ReLU activations
        Tensor flat;        // fc input
    };

    Tensor forward(const ParamSet& ps, const Tensor& stack, Cache& cache) const;
    void backward(ParamSet& ps, const Cache& cache, const Tensor& d_out) const;
};

/// Object encoder: ConvTrunk over a 20-frame segment, output L2-normalized.
struct ObjectEncoder {
    ConvTrunk trunk;

    struct Cache {
        ConvTrunk::Cache trunk;
        Tensor raw;      // pre-normalization embedding
        double norm = 1.0;
    };

    void init(ParamSet& ps, int resolution, int e_dim, Rng& rng);
    void bind(int resolution, int e_dim);
    Tensor encode(const ParamSet& ps, const Tensor& segment, Cache& cache) const;
    void backward(ParamSet& ps, const Cache& cache, const Tensor& d_embedding) const;
};

using Vec12 = std::array<double, 12>;

struct Prediction {
    Vec12 mean{};   // raw units
    Vec12 sigma{};  // raw units, >= 0; mean +- sigma are the 90%/10% quantiles
};

// ---- losses (raw physical units) ----

/// Quantile (pinball) loss of Eq-style form: the residual is taken against
/// shat-sigma for tau <= 0.5 and shat+sigma otherwise; mean over dims.
double pinball_loss(std::span<const double> s, std::span<const double> shat,
                    std::span<const double> sigma, double tau);

/// Accumulates d(loss)/d(shat) and d(loss)/d(sigma), scaled by `weight`.
void pinball_loss_grad(std::span<const double> s, std::span<const double> shat,
                       std::span<const double> sigma, double tau, double weight,
                       std::span<double> d_shat, std::span<double> d_sigma);

/// L1 (mean over dims) + pinball at tau = 0.1 and 0.9.
double state_loss(const Vec12& s, const Prediction& pred);
void state_loss_grad(const Vec12& s, const Prediction& pred, double weight, Vec12& d_mean,
                     Vec12& d_sigma);

/// InfoNCE over dot-product logits: -log( exp(e.e+) / (exp(e.e+) + sum exp(e.e-)) ).
double contrastive_loss(const Tensor& anchor, const Tensor& positive,
                        const std::vector<Tensor>& negatives);
struct ContrastiveGrads {
    Tensor d_anchor;
    Tensor d_positive;
    std::vector<Tensor> d_negatives;
};
double contrastive_loss_grad(const Tensor& anchor, const Tensor& positive,
                             const std::vector<Tensor>& negatives, ContrastiveGrads& grads);

// ---- assembled dynamics model ----

/// Parameter layout inside one ParamSet / checkpoint:
///   tac.*   tactile encoder        head.*  dynamics MLP
///   obj.*   object encoder         emb.<id> cached object embeddings
///   norm.mean / norm.std           (z-score statistics, 12 each)
class DynamicsModel {
public:
    ModelConfig cfg;
    ParamSet params;
    data::NormStats norm;

    static DynamicsModel create(const ModelConfig& cfg, const data::NormStats& norm,
                                std::uint64_t seed);

    void save(const std::string& path) const;
    static DynamicsModel load(const std::string& path);

    struct StepCache {
        ConvTrunk::Cache tac;
        Tensor x;                      // head input
        Tensor x1, a1, x2, a2, x3;     // head layer caches (inputs / pre-ReLU)
        Tensor raw_out;                // 24 values before residual/softplus
        Vec12 s_n{};
    };

    /// One-step prediction. `stack` may be null for NoTouch, `embedding`
    /// null when the variant has no object input. Raw-unit output.
    Prediction predict(const Vec12& s_raw, const Tensor* stack, const Tensor* embedding,
                       StepCache* cache = nullptr) const;

    /// Backward from raw-unit gradients; accumulates parameter grads.
    /// When `d_embedding` is non-null the embedding-input gradient is added
    /// to it (joint training); otherwise that path is treated as frozen.
    void backward(const StepCache& cache, const Vec12& d_mean, const Vec12& d_sigma,
                  Tensor* d_embedding);

    /// Cached per-object embedding (name "emb.<id>"); throws if missing.
    Tensor object_embedding(int object_id) const;
    void set_object_embedding(int object_id, const Tensor& e);
    bool has_object_embedding(int object_id) const;

    ObjectEncoder& object_encoder() { return obj_enc_; }
    const ObjectEncoder& object_encoder() const { return obj_enc_; }
    const ConvTrunk& tactile_trunk() const { return tac_; }

private:
    ConvTrunk tac_;
    ObjectEncoder obj_enc_;
    LinearLayer h1_, h2_, h3_;
};

} // namespace tdyn::model
