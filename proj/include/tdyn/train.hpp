#pragma once

#include <map>
#include <string>
#include <vector>

#include "tdyn/dataset.hpp"
#include "tdyn/model.hpp"

namespace tdyn::train {

struct TrainConfig {
    int epochs = 50;
    double lr = 0.0005;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double state_noise = 0.04;  // train-time input jitter, in normalized units
    model::Mode mode = model::Mode::SingleObject;
    model::Variant variant = model::Variant::Full;
    int m = 5;
    int resolution = 32;
    int n_sample = 16;             // contrastive denominator size (1 positive + 15 negatives)
    double lambda_obj = 0.1;       // object-loss weight in joint mode
    bool joint = false;            // default: two-stage protocol
    int pretrain_epochs = 0;       // 0 = same as epochs
    int max_windows_per_epoch = 0; // 0 = full pass over the training windows
    int eval_windows_cap = 512;    // per-epoch eval subsample
    int single_object_id = -1;     // -1 = first seen object

    void validate() const;
    model::ModelConfig model_config() const;
};

/// Episodes of a store, loaded once and shared read-only.
class EpisodeCache {
public:
    explicit EpisodeCache(const data::EpisodeStore& store);

    const sim::Episode& at(const data::ManifestEntry& e) const;
    std::vector<const sim::Episode*> split(data::Split s) const;
    /// Train-split episodes of one object.
    std::vector<const sim::Episode*> object_train(int object_id) const;
    const data::EpisodeStore& store() const { return *store_; }

private:
    const data::EpisodeStore* store_;
    std::map<std::string, sim::Episode> episodes_;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double eval_l1_at_1 = 0.0;
};

void write_training_log(const std::vector<EpochLog>& log, const std::string& path);

struct PretrainResult {
    std::string checkpoint_path;
    std::vector<double> epoch_losses;
    double final_loss = 0.0;
};

/// Contrastive pretraining of the object encoder over 20-step segments.
/// The checkpoint holds the encoder weights plus one mean embedding per
/// training object ("emb.<id>"). A training log (epoch,loss) is written
/// next to the checkpoint.
PretrainResult pretrain_object_encoder(const EpisodeCache& cache, const TrainConfig& cfg,
                                       const std::string& out_path);

struct TrainResult {
    std::string checkpoint_path;
    std::vector<EpochLog> log;
};

/// Dynamics training per the two-stage protocol: embeddings are taken from
/// `pretrained_path` and stay frozen unless cfg.joint is set, in which case
/// one contrastive batch is interleaved per dynamics batch with weight
/// lambda_obj. Aborts on NaN gradients and on sustained divergence
/// (loss > 10x initial for 3 epochs).
TrainResult train_dynamics(const EpisodeCache& cache, const TrainConfig& cfg,
                           const std::string& out_path, const std::string& pretrained_path = "");

/// One-step L1 (raw units, mean over the 12 dims) of a model over windows.
/// `object_id >= 0` restricts the split to one object (single-object mode).
double eval_l1_one_step(const model::DynamicsModel& mdl, const EpisodeCache& cache,
                        data::Split split, int cap, std::uint64_t seed, int object_id = -1);

/// Mean embedding of an object over `segments` sampled train segments.
Tensor mean_object_embedding(const model::DynamicsModel& mdl, const EpisodeCache& cache,
                             int object_id, int segments, Rng& rng);

/// Runs jobs on up to `jobs` threads; each job must be independent.
void run_parallel(std::vector<std::function<void()>> tasks, int jobs);

} // namespace tdyn::train
