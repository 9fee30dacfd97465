#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tdyn/model.hpp"
#include "tdyn/train.hpp"

namespace tdyn::eval {

/// Autoregressive rollout record. `predicted[j]` estimates the state at
/// t0 + j + 1; `truth[j]` is the recorded state there.
struct Rollout {
    std::int64_t t0 = 0;
    int horizon = 0;
    std::vector<model::Prediction> predicted;
    std::vector<model::Vec12> truth;
};

/// One prediction step: current (fed-back) state plus the episode and the
/// time index of the newest observable tactile frame.
using StepFn = std::function<model::Prediction(const model::Vec12& s, const sim::Episode& ep,
                                               std::int64_t t)>;

/// Runs K steps from t0: states are fed back from the predicted mean while
/// tactile input always comes from the recorded stream.
Rollout rollout(const StepFn& step, const sim::Episode& ep, std::int64_t t0, int k);

/// Embedding of the episode's first 20 frames (test-time protocol).
Tensor episode_prefix_embedding(const model::DynamicsModel& mdl, const sim::Episode& ep);

/// Model-backed rollout; the object embedding is computed once from the
/// episode prefix and held fixed over the horizon.
Rollout rollout_model(const model::DynamicsModel& mdl, const sim::Episode& ep, std::int64_t t0,
                      int k);

/// Rollout start points: t0 = M-1, then every `spacing` steps while t0 + K
/// stays inside the episode.
std::vector<std::int64_t> rollout_starts(const sim::Episode& ep, int m, int k, int spacing = 10);

/// Mean absolute error over the 12 dims, averaged over steps 1..k and over
/// all rollouts (raw units).
double l1_at_k(const std::vector<Rollout>& rollouts, int k);

/// Hausdorff distance between two point sets (max of the two directed
/// max-min Euclidean distances).
double hausdorff(const std::vector<sim::Vec3>& a, const std::vector<sim::Vec3>& b);

/// Hausdorff between predicted and true position tracks, computed for the
/// hand and the object separately and averaged.
double hausdorff_rollout(const Rollout& r);
double mean_hausdorff(const std::vector<Rollout>& rollouts);

/// Fraction of (step, dim) pairs with the truth inside [mean-sigma, mean+sigma].
double coverage_rate(const std::vector<Rollout>& rollouts);

/// All rollouts of a model over a set of episodes.
std::vector<Rollout> run_rollouts(const model::DynamicsModel& mdl,
                                  const std::vector<const sim::Episode*>& episodes, int k,
                                  int spacing = 10);

/// Ground-truth rollout windows (no model), used by the random baseline.
std::vector<Rollout> truth_windows(const std::vector<const sim::Episode*>& episodes, int m, int k,
                                   int spacing = 10);

enum class Metric { L1, Hausdorff };

/// Random baseline: each evaluation window is scored against the ground
/// truth of a uniformly sampled *different* window drawn from `pool`
/// (typically the whole dataset).
double random_baseline(const std::vector<const sim::Episode*>& eval_episodes,
                       const std::vector<const sim::Episode*>& pool, int m, int k, Metric metric,
                       std::uint64_t seed, int spacing = 10);
double random_baseline(const std::vector<const sim::Episode*>& episodes, int m, int k,
                       Metric metric, std::uint64_t seed, int spacing = 10);

struct MetricRow {
    std::string variant;
    std::string split;
    std::string metric;
    int horizon = 0;
    std::uint64_t seed = 0;
    double value = 0.0;
};

/// CSV with header variant,split,metric,horizon,seed,value.
void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);

struct AblationCell {
    int resolution = 0;
    int horizon = 0;
    std::vector<double> per_seed;  // one L1 value per seed; empty on failure
    bool failed = false;

    double mean() const;
    double lo() const;
    double hi() const;
};

struct AblationTable {
    std::vector<AblationCell> cells;  // resolutions x horizons

    const AblationCell* find(int resolution, int horizon) const;
};

/// Trains one model per (resolution, seed) on the store and evaluates
/// L1@20 / L1@50 on the eval split. Failed sub-runs are marked, not fatal.
AblationTable resolution_ablation(const train::EpisodeCache& cache,
                                  const train::TrainConfig& base_cfg,
                                  const std::vector<int>& resolutions,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::string& work_dir, int jobs = 1);

/// Plot-data file: x,y,y_lo,y_hi rows for one horizon.
void write_ablation_plot(const AblationTable& table, int horizon, const std::string& path);
void write_ablation_csv(const AblationTable& table, const std::string& path);

} // namespace tdyn::eval
