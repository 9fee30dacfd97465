#include "tdyn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tdyn::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f32(std::ofstream& os, double v) { put<float>(os, static_cast<float>(v)); }

void need(std::ifstream& is, void* p, std::size_t n, const std::string& what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw LoadError(LoadErrorKind::Truncated, "episode truncated while reading " + what);
    }
}

template <typename T>
T get(std::ifstream& is, const std::string& what) {
    T v{};
    need(is, &v, sizeof v, what);
    return v;
}

} // namespace

void save_episode(const sim::Episode& ep, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open episode for writing: " + path);
    const auto t = ep.size();
    os.write("TDYN", 4);
    put<std::uint32_t>(os, kEpisodeVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ep.object_id));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(ep.activity));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t));
    put<std::uint16_t>(os, static_cast<std::uint16_t>(ep.frames.empty() ? 0 : ep.frames[0].h));
    put<std::uint16_t>(os, static_cast<std::uint16_t>(ep.frames.empty() ? 0 : ep.frames[0].w));
    put_f32(os, ep.dt);
    for (const auto& st : ep.states) {
        for (double v : st.flatten()) put_f32(os, v);
    }
    for (const auto& fr : ep.frames) {
        for (double v : fr.v) put_f32(os, v);
    }
    os.write(reinterpret_cast<const char*>(ep.labels.data()),
             static_cast<std::streamsize>(ep.labels.size()));
    if (!os) throw std::runtime_error("write failure on episode: " + path);
}

sim::Episode load_episode(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError(LoadErrorKind::Truncated, "cannot open episode: " + path);
    char magic[4];
    need(is, magic, 4, "magic");
    if (std::memcmp(magic, "TDYN", 4) != 0) {
        throw LoadError(LoadErrorKind::BadMagic, "not an episode file: " + path);
    }
    const auto version = get<std::uint32_t>(is, "version");
    if (version != kEpisodeVersion) {
        throw LoadError(LoadErrorKind::VersionMismatch,
                        "episode version " + std::to_string(version) + " unsupported");
    }
    sim::Episode ep;
    ep.object_id = static_cast<int>(get<std::uint32_t>(is, "object_id"));
    ep.activity = static_cast<sim::Activity>(get<std::uint8_t>(is, "activity"));
    const auto t = get<std::uint32_t>(is, "T");
    const auto h = get<std::uint16_t>(is, "H");
    const auto w = get<std::uint16_t>(is, "W");
    ep.dt = static_cast<double>(get<float>(is, "dt"));

    std::vector<float> buf(static_cast<std::size_t>(t) * 12);
    need(is, buf.data(), buf.size() * sizeof(float), "states");
    ep.states.resize(t);
    for (std::uint32_t i = 0; i < t; ++i) {
        std::array<double, 12> v{};
        for (int j = 0; j < 12; ++j) v[static_cast<std::size_t>(j)] = buf[i * 12 + j];
        ep.states[i] = sim::SystemState::unflatten(v);
    }
    const std::size_t cells = static_cast<std::size_t>(h) * w;
    std::vector<float> fbuf(cells);
    ep.frames.reserve(t);
    for (std::uint32_t i = 0; i < t; ++i) {
        need(is, fbuf.data(), fbuf.size() * sizeof(float), "frame");
        sim::TactileFrame fr(h, w);
        for (std::size_t j = 0; j < cells; ++j) fr.v[j] = fbuf[j];
        ep.frames.push_back(std::move(fr));
    }
    ep.labels.resize(t);
    need(is, ep.labels.data(), t, "labels");
    // Trailing bytes mean the file does not match its own header.
    char extra;
    is.read(&extra, 1);
    if (is.gcount() != 0) {
        throw LoadError(LoadErrorKind::Corrupt, "episode has trailing bytes: " + path);
    }
    return ep;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::EvalSeen: return "eval_seen";
        case Split::EvalUnseen: return "eval_unseen";
    }
    throw std::invalid_argument("bad split");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "eval_seen") return Split::EvalSeen;
    if (name == "eval_unseen") return Split::EvalUnseen;
    throw std::invalid_argument("unknown split: " + name);
}

std::vector<const ManifestEntry*> EpisodeStore::by_split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == s) out.push_back(&e);
    }
    return out;
}

std::vector<int> EpisodeStore::object_ids(Split s) const {
    std::vector<int> ids;
    for (const auto& e : entries) {
        if (e.split == s && std::find(ids.begin(), ids.end(), e.object_id) == ids.end()) {
            ids.push_back(e.object_id);
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

void save_manifest(const EpisodeStore& store) {
    std::ofstream os(fs::path(store.dir) / "manifest.tsv", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest in " + store.dir);
    for (const auto& e : store.entries) {
        os << e.path << '\t' << e.object_id << '\t' << sim::activity_name(e.activity) << '\t'
           << split_name(e.split) << '\n';
    }
}

namespace {

json spec_to_json(const sim::ObjectSpec& s) {
    json cells = json::array();
    for (int r = 0; r < sim::kSensorDim; ++r) {
        for (int c = 0; c < sim::kSensorDim; ++c) {
            const double w = s.footprint.at3(0, r, c, sim::kSensorDim, sim::kSensorDim);
            if (w > 0.0) cells.push_back({r, c, w});
        }
    }
    return json{{"id", s.id},
                {"mass", s.mass},
                {"restitution", s.restitution},
                {"grip_offset", {s.grip_offset.x, s.grip_offset.y, s.grip_offset.z}},
                {"footprint", cells}};
}

sim::ObjectSpec spec_from_json(const json& j) {
    sim::ObjectSpec s;
    s.id = j.at("id").get<int>();
    s.mass = j.at("mass").get<double>();
    s.restitution = j.at("restitution").get<double>();
    const auto& go = j.at("grip_offset");
    s.grip_offset = {go.at(0).get<double>(), go.at(1).get<double>(), go.at(2).get<double>()};
    s.footprint = Tensor({sim::kSensorDim, sim::kSensorDim});
    for (const auto& cell : j.at("footprint")) {
        s.footprint.at3(0, cell.at(0).get<int>(), cell.at(1).get<int>(), sim::kSensorDim,
                        sim::kSensorDim) = cell.at(2).get<double>();
    }
    return s;
}

} // namespace

EpisodeStore load_store(const std::string& dir) {
    EpisodeStore store;
    store.dir = dir;
    std::ifstream is(fs::path(dir) / "manifest.tsv");
    if (!is) throw std::runtime_error("no manifest.tsv in " + dir);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string activity, split;
        if (!std::getline(ls, e.path, '\t')) continue;
        std::string obj;
        std::getline(ls, obj, '\t');
        std::getline(ls, activity, '\t');
        std::getline(ls, split, '\t');
        e.object_id = std::stoi(obj);
        e.activity = sim::activity_from_name(activity);
        e.split = split_from_name(split);
        store.entries.push_back(std::move(e));
    }
    const auto specs_path = fs::path(dir) / "objects.json";
    if (fs::exists(specs_path)) {
        std::ifstream js(specs_path);
        json j;
        js >> j;
        for (const auto& it : j) store.specs.push_back(spec_from_json(it));
    }
    return store;
}

EpisodeStore make_dataset(sim::Activity activity, int n_seen, int n_unseen,
                          int episodes_per_object, std::uint64_t seed, const std::string& out_dir,
                          double episode_duration_s) {
    if (n_seen < 2) throw std::invalid_argument("make_dataset: need at least 2 seen objects");
    if (episodes_per_object < 1) throw std::invalid_argument("make_dataset: episodes_per_object");
    fs::create_directories(out_dir);

    EpisodeStore store;
    store.dir = out_dir;
    store.specs = sim::sample_object_specs(n_seen + n_unseen, activity, seed);

    Rng rng(mix_seed(seed, 0x64617461));
    for (int oi = 0; oi < n_seen + n_unseen; ++oi) {
        const bool seen = oi < n_seen;
        const int n_train = static_cast<int>(std::lround(0.8 * episodes_per_object));
        for (int k = 0; k < episodes_per_object; ++k) {
            // Per-episode in-hand variation: grip point and footprint shift together.
            const int dr = static_cast<int>(rng.index(7)) - 3;
            const int dc = static_cast<int>(rng.index(7)) - 3;
            const auto spec_ep = sim::shift_grip(store.specs[static_cast<std::size_t>(oi)], dr, dc);
            const auto ep_seed = mix_seed(seed, 0x100000ULL + static_cast<std::uint64_t>(oi) * 1000 +
                                                    static_cast<std::uint64_t>(k));
            sim::Episode ep = sim::generate(activity, spec_ep, episode_duration_s, ep_seed);

            ManifestEntry e;
            e.object_id = oi;
            e.activity = activity;
            e.split = !seen ? Split::EvalUnseen : (k < n_train ? Split::Train : Split::EvalSeen);
            e.path = "ep_" + std::to_string(oi) + "_" + std::to_string(k) + ".tdyn";
            save_episode(ep, (fs::path(out_dir) / e.path).string());
            store.entries.push_back(std::move(e));
        }
    }
    save_manifest(store);
    {
        json j = json::array();
        for (const auto& s : store.specs) j.push_back(spec_to_json(s));
        std::ofstream os(fs::path(out_dir) / "objects.json", std::ios::trunc);
        os << j.dump(1) << '\n';
    }
    return store;
}

std::array<double, 12> TrainWindow::s_t() const {
    return episode->states[static_cast<std::size_t>(t)].flatten();
}

std::array<double, 12> TrainWindow::s_next() const {
    return episode->states[static_cast<std::size_t>(t + 1)].flatten();
}

namespace {

Tensor stack_frames(const sim::Episode& ep, std::int64_t first, std::int64_t count,
                    int resolution) {
    Tensor out({count, resolution, resolution});
    for (std::int64_t i = 0; i < count; ++i) {
        const auto& fr = ep.frames[static_cast<std::size_t>(first + i)];
        if (resolution == fr.h && resolution == fr.w) {
            std::copy(fr.v.begin(), fr.v.end(),
                      out.data.begin() + i * resolution * resolution);
        } else {
            const auto ds = downsample(fr, resolution);
            std::copy(ds.v.begin(), ds.v.end(),
                      out.data.begin() + i * resolution * resolution);
        }
    }
    return out;
}

} // namespace

Tensor TrainWindow::stack(int resolution) const {
    return stack_frames(*episode, t - m + 1, m, resolution);
}

std::vector<TrainWindow> windows(const sim::Episode& ep, int m) {
    std::vector<TrainWindow> out;
    if (m < 1) throw std::invalid_argument("windows: M must be >= 1");
    const auto t_len = ep.size();
    if (t_len <= m) return out;  // too short: no window has both a stack and a successor
    out.reserve(static_cast<std::size_t>(t_len - m));
    for (std::int64_t t = m - 1; t + 1 < t_len; ++t) {
        out.push_back(TrainWindow{&ep, t, m});
    }
    return out;
}

Tensor ContrastSegment::stack(int resolution) const {
    return stack_frames(*episode, t0, kContrastLen, resolution);
}

ContrastBatch sample_contrast_batch(const std::vector<const sim::Episode*>& episodes,
                                    int n_sample, Rng& rng) {
    if (n_sample < 2) throw std::invalid_argument("sample_contrast_batch: n_sample must be >= 2");
    std::vector<int> ids;
    for (const auto* ep : episodes) {
        if (std::find(ids.begin(), ids.end(), ep->object_id) == ids.end())
            ids.push_back(ep->object_id);
    }
    if (ids.size() < 2) {
        throw std::runtime_error("sample_contrast_batch: contrastive loss needs >= 2 objects");
    }
    std::sort(ids.begin(), ids.end());

    auto pick_segment = [&](int object_id) {
        std::vector<const sim::Episode*> own;
        for (const auto* ep : episodes) {
            if (ep->object_id == object_id && ep->size() >= kContrastLen) own.push_back(ep);
        }
        if (own.empty()) throw std::runtime_error("no episode long enough for object " +
                                                  std::to_string(object_id));
        const auto* ep = own[static_cast<std::size_t>(rng.index(
            static_cast<std::int64_t>(own.size())))];
        const auto t0 = rng.index(ep->size() - kContrastLen + 1);
        return ContrastSegment{ep, t0};
    };

    ContrastBatch batch;
    const int anchor_obj = ids[static_cast<std::size_t>(rng.index(
        static_cast<std::int64_t>(ids.size())))];
    batch.anchor = pick_segment(anchor_obj);
    batch.positive = pick_segment(anchor_obj);
    for (int j = 0; j < n_sample - 1; ++j) {
        int other = anchor_obj;
        while (other == anchor_obj) {
            other = ids[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(ids.size())))];
        }
        batch.negatives.push_back(pick_segment(other));
    }
    return batch;
}

bool resolution_supported(int r) {
    return r == 32 || r == 24 || r == 16 || r == 12 || r == 8 || r == 6;
}

sim::TactileFrame downsample(const sim::TactileFrame& frame, int r) {
    if (!resolution_supported(r)) {
        throw std::invalid_argument("downsample: unsupported resolution " + std::to_string(r));
    }
    if (frame.h != sim::kSensorDim || frame.w != sim::kSensorDim) {
        if (frame.h == r && frame.w == r) return frame;  // idempotent at the same resolution
        throw std::invalid_argument("downsample: frame must be 32x32");
    }
    if (r == sim::kSensorDim) return frame;
    sim::TactileFrame out(r, r);
    const double ratio = static_cast<double>(sim::kSensorDim) / r;
    for (int tr = 0; tr < r; ++tr) {
        const double y0 = tr * ratio, y1 = (tr + 1) * ratio;
        for (int tc = 0; tc < r; ++tc) {
            const double x0 = tc * ratio, x1 = (tc + 1) * ratio;
            double acc = 0.0;
            for (int sr = static_cast<int>(y0); sr < static_cast<int>(std::ceil(y1)); ++sr) {
                const double oy = std::min<double>(sr + 1, y1) - std::max<double>(sr, y0);
                for (int sc = static_cast<int>(x0); sc < static_cast<int>(std::ceil(x1)); ++sc) {
                    const double ox = std::min<double>(sc + 1, x1) - std::max<double>(sc, x0);
                    acc += oy * ox * frame.at(sr, sc);
                }
            }
            out.at(tr, tc) = acc / (ratio * ratio);
        }
    }
    return out;
}

std::array<double, 12> NormStats::apply(const std::array<double, 12>& raw) const {
    std::array<double, 12> out{};
    for (int i = 0; i < 12; ++i) {
        out[static_cast<std::size_t>(i)] =
            (raw[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]) /
            stdev[static_cast<std::size_t>(i)];
    }
    return out;
}

std::array<double, 12> NormStats::invert(const std::array<double, 12>& normed) const {
    std::array<double, 12> out{};
    for (int i = 0; i < 12; ++i) {
        out[static_cast<std::size_t>(i)] =
            normed[static_cast<std::size_t>(i)] * stdev[static_cast<std::size_t>(i)] +
            mean[static_cast<std::size_t>(i)];
    }
    return out;
}

NormStats compute_norm_stats(const std::vector<const sim::Episode*>& train_episodes) {
    if (train_episodes.empty()) {
        throw std::invalid_argument("compute_norm_stats: empty training split");
    }
    NormStats st;
    std::array<double, 12> sum{}, sq{};
    std::int64_t n = 0;
    for (const auto* ep : train_episodes) {
        for (const auto& s : ep->states) {
            const auto v = s.flatten();
            for (int i = 0; i < 12; ++i) {
                sum[static_cast<std::size_t>(i)] += v[static_cast<std::size_t>(i)];
                sq[static_cast<std::size_t>(i)] +=
                    v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
            }
            ++n;
        }
    }
    for (int i = 0; i < 12; ++i) {
        const auto si = static_cast<std::size_t>(i);
        st.mean[si] = sum[si] / static_cast<double>(n);
        const double var = std::max(sq[si] / static_cast<double>(n) - st.mean[si] * st.mean[si], 0.0);
        st.stdev[si] = std::max(std::sqrt(var), 1e-6);
    }
    return st;
}

void save_norm_stats(const NormStats& st, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write norm stats: " + path);
    os.write("TDNS", 4);
    for (double v : st.mean) put_f32(os, v);
    for (double v : st.stdev) put_f32(os, v);
}

NormStats load_norm_stats(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError(LoadErrorKind::Truncated, "cannot open norm stats: " + path);
    char magic[4];
    need(is, magic, 4, "magic");
    if (std::memcmp(magic, "TDNS", 4) != 0) {
        throw LoadError(LoadErrorKind::BadMagic, "not a norm-stats file: " + path);
    }
    NormStats st;
    for (auto& v : st.mean) v = static_cast<double>(get<float>(is, "mean"));
    for (auto& v : st.stdev) v = static_cast<double>(get<float>(is, "stdev"));
    return st;
}

} // namespace tdyn::data
