#include "tdyn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace tdyn::eval {

namespace fs = std::filesystem;

Rollout rollout(const StepFn& step, const sim::Episode& ep, std::int64_t t0, int k) {
    if (k < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
    if (t0 < 0 || t0 + k >= ep.size()) {
        throw std::invalid_argument("rollout: horizon exceeds episode length");
    }
    Rollout r;
    r.t0 = t0;
    r.horizon = k;
    model::Vec12 s = ep.states[static_cast<std::size_t>(t0)].flatten();
    for (int j = 0; j < k; ++j) {
        const std::int64_t t = t0 + j;
        const model::Prediction pred = step(s, ep, t);
        r.predicted.push_back(pred);
        r.truth.push_back(ep.states[static_cast<std::size_t>(t + 1)].flatten());
        s = pred.mean;
    }
    return r;
}

Tensor episode_prefix_embedding(const model::DynamicsModel& mdl, const sim::Episode& ep) {
    if (ep.size() < data::kContrastLen) {
        throw std::invalid_argument("episode too short for a 20-step embedding segment");
    }
    model::ObjectEncoder::Cache cache;
    return mdl.object_encoder().encode(
        mdl.params, data::ContrastSegment{&ep, 0}.stack(mdl.cfg.resolution), cache);
}

Rollout rollout_model(const model::DynamicsModel& mdl, const sim::Episode& ep, std::int64_t t0,
                      int k) {
    if (t0 < mdl.cfg.m - 1) throw std::invalid_argument("rollout: t0 leaves no full window");
    Tensor emb;
    const Tensor* emb_p = nullptr;
    if (mdl.cfg.use_embedding()) {
        emb = episode_prefix_embedding(mdl, ep);
        emb_p = &emb;
    }
    auto step = [&](const model::Vec12& s, const sim::Episode& e, std::int64_t t) {
        Tensor stack;
        const Tensor* stack_p = nullptr;
        if (mdl.cfg.use_touch()) {
            stack = data::TrainWindow{&e, t, mdl.cfg.m}.stack(mdl.cfg.resolution);
            stack_p = &stack;
        }
        return mdl.predict(s, stack_p, emb_p);
    };
    return rollout(step, ep, t0, k);
}

std::vector<std::int64_t> rollout_starts(const sim::Episode& ep, int m, int k, int spacing) {
    std::vector<std::int64_t> starts;
    for (std::int64_t t0 = m - 1; t0 + k < ep.size(); t0 += spacing) {
        starts.push_back(t0);
    }
    return starts;
}

double l1_at_k(const std::vector<Rollout>& rollouts, int k) {
    if (rollouts.empty()) throw std::invalid_argument("l1_at_k: empty rollout set");
    double acc = 0.0;
    std::int64_t n = 0;
    for (const auto& r : rollouts) {
        if (k > r.horizon) throw std::invalid_argument("l1_at_k: k exceeds rollout horizon");
        for (int j = 0; j < k; ++j) {
            const auto& p = r.predicted[static_cast<std::size_t>(j)].mean;
            const auto& t = r.truth[static_cast<std::size_t>(j)];
            double l1 = 0.0;
            for (int d = 0; d < 12; ++d) {
                l1 += std::abs(p[static_cast<std::size_t>(d)] - t[static_cast<std::size_t>(d)]);
            }
            acc += l1 / 12.0;
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

double hausdorff(const std::vector<sim::Vec3>& a, const std::vector<sim::Vec3>& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("hausdorff: empty point set");
    auto directed = [](const std::vector<sim::Vec3>& from, const std::vector<sim::Vec3>& to) {
        double worst = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                best = std::min(best, (p - q).norm());
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

namespace {

std::vector<sim::Vec3> track(const std::vector<model::Vec12>& states, int offset) {
    std::vector<sim::Vec3> out;
    out.reserve(states.size());
    for (const auto& s : states) {
        out.push_back({s[static_cast<std::size_t>(offset)],
                       s[static_cast<std::size_t>(offset + 1)],
                       s[static_cast<std::size_t>(offset + 2)]});
    }
    return out;
}

std::vector<sim::Vec3> predicted_track(const Rollout& r, int offset) {
    std::vector<sim::Vec3> out;
    out.reserve(r.predicted.size());
    for (const auto& p : r.predicted) {
        out.push_back({p.mean[static_cast<std::size_t>(offset)],
                       p.mean[static_cast<std::size_t>(offset + 1)],
                       p.mean[static_cast<std::size_t>(offset + 2)]});
    }
    return out;
}

} // namespace

double hausdorff_rollout(const Rollout& r) {
    const double hand = hausdorff(predicted_track(r, 0), track(r.truth, 0));
    const double obj = hausdorff(predicted_track(r, 6), track(r.truth, 6));
    return 0.5 * (hand + obj);
}

double mean_hausdorff(const std::vector<Rollout>& rollouts) {
    if (rollouts.empty()) throw std::invalid_argument("mean_hausdorff: empty rollout set");
    double acc = 0.0;
    for (const auto& r : rollouts) acc += hausdorff_rollout(r);
    return acc / static_cast<double>(rollouts.size());
}

double coverage_rate(const std::vector<Rollout>& rollouts) {
    std::int64_t inside = 0, total = 0;
    for (const auto& r : rollouts) {
        for (int j = 0; j < r.horizon; ++j) {
            const auto& p = r.predicted[static_cast<std::size_t>(j)];
            const auto& t = r.truth[static_cast<std::size_t>(j)];
            for (int d = 0; d < 12; ++d) {
                const auto sd = static_cast<std::size_t>(d);
                if (t[sd] >= p.mean[sd] - p.sigma[sd] && t[sd] <= p.mean[sd] + p.sigma[sd]) {
                    ++inside;
                }
                ++total;
            }
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(total);
}

std::vector<Rollout> run_rollouts(const model::DynamicsModel& mdl,
                                  const std::vector<const sim::Episode*>& episodes, int k,
                                  int spacing) {
    std::vector<Rollout> out;
    for (const auto* ep : episodes) {
        for (const auto t0 : rollout_starts(*ep, mdl.cfg.m, k, spacing)) {
            out.push_back(rollout_model(mdl, *ep, t0, k));
        }
    }
    return out;
}

std::vector<Rollout> truth_windows(const std::vector<const sim::Episode*>& episodes, int m, int k,
                                   int spacing) {
    std::vector<Rollout> out;
    for (const auto* ep : episodes) {
        for (const auto t0 : rollout_starts(*ep, m, k, spacing)) {
            Rollout r;
            r.t0 = t0;
            r.horizon = k;
            for (int j = 1; j <= k; ++j) {
                const auto s = ep->states[static_cast<std::size_t>(t0 + j)].flatten();
                model::Prediction p;
                p.mean = s;
                r.predicted.push_back(p);
                r.truth.push_back(s);
            }
            out.push_back(std::move(r));
        }
    }
    return out;
}

double random_baseline(const std::vector<const sim::Episode*>& eval_episodes,
                       const std::vector<const sim::Episode*>& pool, int m, int k, Metric metric,
                       std::uint64_t seed, int spacing) {
    struct Key {
        const sim::Episode* ep;
        std::int64_t t0;
    };
    auto eval_wins = truth_windows(eval_episodes, m, k, spacing);
    auto pool_wins = truth_windows(pool, m, k, spacing);
    std::vector<Key> eval_keys, pool_keys;
    for (const auto* ep : eval_episodes) {
        for (const auto t0 : rollout_starts(*ep, m, k, spacing)) eval_keys.push_back({ep, t0});
    }
    for (const auto* ep : pool) {
        for (const auto t0 : rollout_starts(*ep, m, k, spacing)) pool_keys.push_back({ep, t0});
    }
    if (eval_wins.empty() || pool_wins.size() < 2) {
        throw std::invalid_argument("random_baseline: needs >= 2 windows");
    }
    Rng rng(mix_seed(seed, 0x726e64));
    double acc = 0.0;
    for (std::size_t i = 0; i < eval_wins.size(); ++i) {
        std::size_t j;
        do {
            j = static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(pool_wins.size())));
        } while (pool_keys[j].ep == eval_keys[i].ep && pool_keys[j].t0 == eval_keys[i].t0);
        // Score window i's truth against window j's truth.
        Rollout pair;
        pair.horizon = k;
        pair.predicted = pool_wins[j].predicted;
        pair.truth = eval_wins[i].truth;
        if (metric == Metric::L1) {
            acc += l1_at_k({pair}, k);
        } else {
            acc += hausdorff_rollout(pair);
        }
    }
    return acc / static_cast<double>(eval_wins.size());
}

double random_baseline(const std::vector<const sim::Episode*>& episodes, int m, int k,
                       Metric metric, std::uint64_t seed, int spacing) {
    return random_baseline(episodes, episodes, m, k, metric, seed, spacing);
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write metrics csv: " + path);
    os << "variant,split,metric,horizon,seed,value\n";
    os << std::setprecision(17);
    for (const auto& r : rows) {
        os << r.variant << ',' << r.split << ',' << r.metric << ',' << r.horizon << ',' << r.seed
           << ',' << r.value << '\n';
    }
}

double AblationCell::mean() const {
    if (per_seed.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double v : per_seed) s += v;
    return s / static_cast<double>(per_seed.size());
}

double AblationCell::lo() const {
    return per_seed.empty() ? std::numeric_limits<double>::quiet_NaN()
                            : *std::min_element(per_seed.begin(), per_seed.end());
}

double AblationCell::hi() const {
    return per_seed.empty() ? std::numeric_limits<double>::quiet_NaN()
                            : *std::max_element(per_seed.begin(), per_seed.end());
}

const AblationCell* AblationTable::find(int resolution, int horizon) const {
    for (const auto& c : cells) {
        if (c.resolution == resolution && c.horizon == horizon) return &c;
    }
    return nullptr;
}

AblationTable resolution_ablation(const train::EpisodeCache& cache,
                                  const train::TrainConfig& base_cfg,
                                  const std::vector<int>& resolutions,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::string& work_dir, int jobs) {
    fs::create_directories(work_dir);
    const std::vector<int> horizons{20, 50};

    struct RunOut {
        std::vector<double> l1;  // indexed by horizon
        bool failed = false;
    };
    std::vector<RunOut> results(resolutions.size() * seeds.size());

    std::vector<std::function<void()>> tasks;
    for (std::size_t ri = 0; ri < resolutions.size(); ++ri) {
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            tasks.push_back([&, ri, si] {
                auto& out = results[ri * seeds.size() + si];
                try {
                    train::TrainConfig cfg = base_cfg;
                    cfg.resolution = resolutions[ri];
                    cfg.seed = seeds[si];
                    const auto ckpt = (fs::path(work_dir) /
                                       ("ablate_r" + std::to_string(resolutions[ri]) + "_s" +
                                        std::to_string(seeds[si]) + ".tdck"))
                                          .string();
                    train::train_dynamics(cache, cfg, ckpt);
                    const auto mdl = model::DynamicsModel::load(ckpt);
                    std::vector<const sim::Episode*> eval_eps;
                    for (const auto& e : cache.store().entries) {
                        if (e.split != data::Split::EvalSeen) continue;
                        if (cfg.mode == model::Mode::SingleObject) {
                            // match the training object
                            if (e.object_id != (cfg.single_object_id >= 0
                                                    ? cfg.single_object_id
                                                    : cache.store().object_ids(
                                                          data::Split::Train).front()))
                                continue;
                        }
                        eval_eps.push_back(&cache.at(e));
                    }
                    const auto rolls = run_rollouts(mdl, eval_eps, 50);
                    for (int h : horizons) out.l1.push_back(l1_at_k(rolls, h));
                } catch (const std::exception&) {
                    out.failed = true;
                }
            });
        }
    }
    train::run_parallel(std::move(tasks), jobs);

    AblationTable table;
    for (std::size_t ri = 0; ri < resolutions.size(); ++ri) {
        for (std::size_t hi = 0; hi < horizons.size(); ++hi) {
            AblationCell cell;
            cell.resolution = resolutions[ri];
            cell.horizon = horizons[hi];
            for (std::size_t si = 0; si < seeds.size(); ++si) {
                const auto& out = results[ri * seeds.size() + si];
                if (out.failed) {
                    cell.failed = true;
                } else {
                    cell.per_seed.push_back(out.l1[hi]);
                }
            }
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

void write_ablation_plot(const AblationTable& table, int horizon, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write plot data: " + path);
    os << "x,y,y_lo,y_hi\n";
    os << std::setprecision(17);
    for (const auto& c : table.cells) {
        if (c.horizon != horizon) continue;
        os << c.resolution << ',' << c.mean() << ',' << c.lo() << ',' << c.hi() << '\n';
    }
}

void write_ablation_csv(const AblationTable& table, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write ablation csv: " + path);
    os << "resolution,horizon,mean_l1,lo,hi,seeds,status\n";
    os << std::setprecision(17);
    for (const auto& c : table.cells) {
        os << c.resolution << ',' << c.horizon << ',' << c.mean() << ',' << c.lo() << ',' << c.hi()
           << ',' << c.per_seed.size() << ',' << (c.failed ? "partial" : "ok") << '\n';
    }
}

} // namespace tdyn::eval
