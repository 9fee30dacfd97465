#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tdyn/checkpoint.hpp"
#include "tdyn/sim.hpp"
#include "tdyn/tensor.hpp"

namespace tdyn::data {

inline constexpr std::uint32_t kEpisodeVersion = 1;
inline constexpr int kContrastLen = 20;

/// Episode file layout (little-endian):
///   magic "TDYN", version u32,
///   header {object_id u32, activity u8, T u32, H u16, W u16, dt f32},
///   states T*12 f32, frames T*H*W f32, labels T*u8.
void save_episode(const sim::Episode& ep, const std::string& path);
sim::Episode load_episode(const std::string& path);

enum class Split { Train, EvalSeen, EvalUnseen };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestEntry {
    std::string path;  // relative to the store directory
    int object_id = 0;
    sim::Activity activity = sim::Activity::Wave;
    Split split = Split::Train;
};

/// A directory of episode files plus a tab-separated manifest
/// (path, object_id, activity, split per line).
struct EpisodeStore {
    std::string dir;
    std::vector<ManifestEntry> entries;
    std::vector<sim::ObjectSpec> specs;  // loaded from objects.json when present

    std::vector<const ManifestEntry*> by_split(Split s) const;
    std::vector<int> object_ids(Split s) const;
};

void save_manifest(const EpisodeStore& store);
EpisodeStore load_store(const std::string& dir);

/// Generates the full per-activity dataset: object specs, episodes, splits,
/// manifest. Seen objects split 80/20 by episode; unseen objects are
/// evaluation-only.
EpisodeStore make_dataset(sim::Activity activity, int n_seen, int n_unseen,
                          int episodes_per_object, std::uint64_t seed, const std::string& out_dir,
                          double episode_duration_s = 6.0);

/// One supervised sample: M consecutive frames ending at t, the state at t,
/// and the state at t+1. Holds a reference into the episode.
struct TrainWindow {
    const sim::Episode* episode = nullptr;
    std::int64_t t = 0;  // last frame index of the stack
    int m = 0;

    std::array<double, 12> s_t() const;
    std::array<double, 12> s_next() const;
    int object_id() const { return episode->object_id; }
    /// Stack as a [M,H,W] tensor, oldest frame first.
    Tensor stack(int resolution = sim::kSensorDim) const;
};

/// All M-frame windows of one episode (T-M of them); empty when T <= M.
std::vector<TrainWindow> windows(const sim::Episode& ep, int m);

/// 20 consecutive frames from one episode, used for object embeddings.
struct ContrastSegment {
    const sim::Episode* episode = nullptr;
    std::int64_t t0 = 0;

    int object_id() const { return episode->object_id; }
    Tensor stack(int resolution = sim::kSensorDim) const;
};

struct ContrastBatch {
    ContrastSegment anchor;
    ContrastSegment positive;
    std::vector<ContrastSegment> negatives;
};

/// Draws anchor/positive from one object and `n_sample - 1` negatives from
/// the others. Throws when fewer than two objects are available.
ContrastBatch sample_contrast_batch(const std::vector<const sim::Episode*>& episodes,
                                    int n_sample, Rng& rng);

/// Area-weighted average pooling to r x r, r in {32,24,16,12,8,6}.
/// Summed pressure is preserved after rescaling by (32/r)^2.
sim::TactileFrame downsample(const sim::TactileFrame& frame, int r);
bool resolution_supported(int r);

/// Per-dimension z-score statistics of the 12-dim state over a split.
struct NormStats {
    std::array<double, 12> mean{};
    std::array<double, 12> stdev{};

    std::array<double, 12> apply(const std::array<double, 12>& raw) const;
    std::array<double, 12> invert(const std::array<double, 12>& normed) const;
};

NormStats compute_norm_stats(const std::vector<const sim::Episode*>& train_episodes);
void save_norm_stats(const NormStats& st, const std::string& path);
NormStats load_norm_stats(const std::string& path);

} // namespace tdyn::data
