#include "tdyn/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace tdyn::train {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (n_sample < 2) throw std::invalid_argument("TrainConfig: n_sample must be >= 2");
    model_config().validate();  // rejects invalid mode/variant combinations
}

model::ModelConfig TrainConfig::model_config() const {
    model::ModelConfig mc;
    mc.m = m;
    mc.resolution = resolution;
    mc.mode = mode;
    mc.variant = variant;
    return mc;
}

EpisodeCache::EpisodeCache(const data::EpisodeStore& store) : store_(&store) {
    for (const auto& e : store.entries) {
        episodes_.emplace(e.path, data::load_episode((fs::path(store.dir) / e.path).string()));
    }
}

const sim::Episode& EpisodeCache::at(const data::ManifestEntry& e) const {
    return episodes_.at(e.path);
}

std::vector<const sim::Episode*> EpisodeCache::split(data::Split s) const {
    std::vector<const sim::Episode*> out;
    for (const auto& e : store_->entries) {
        if (e.split == s) out.push_back(&episodes_.at(e.path));
    }
    return out;
}

std::vector<const sim::Episode*> EpisodeCache::object_train(int object_id) const {
    std::vector<const sim::Episode*> out;
    for (const auto& e : store_->entries) {
        if (e.split == data::Split::Train && e.object_id == object_id) {
            out.push_back(&episodes_.at(e.path));
        }
    }
    return out;
}

void write_training_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write training log: " + path);
    os << "epoch,train_loss,eval_l1_at_1\n";
    os << std::setprecision(17);
    for (const auto& row : log) {
        os << row.epoch << ',' << row.train_loss << ',' << row.eval_l1_at_1 << '\n';
    }
}

namespace {

struct EncoderRig {
    ParamSet params;
    model::ObjectEncoder enc;
    AdamConfig adam;
};

Tensor encode_segment(const ParamSet& ps, const model::ObjectEncoder& enc,
                      const data::ContrastSegment& seg, int resolution,
                      model::ObjectEncoder::Cache& cache) {
    return enc.encode(ps, seg.stack(resolution), cache);
}

double contrastive_batch_step(ParamSet& ps, const model::ObjectEncoder& enc,
                              const data::ContrastBatch& batch, int resolution, double weight,
                              bool with_grad) {
    model::ObjectEncoder::Cache c_anchor, c_pos;
    std::vector<model::ObjectEncoder::Cache> c_negs(batch.negatives.size());
    const Tensor e = encode_segment(ps, enc, batch.anchor, resolution, c_anchor);
    const Tensor ep = encode_segment(ps, enc, batch.positive, resolution, c_pos);
    std::vector<Tensor> ens;
    ens.reserve(batch.negatives.size());
    for (std::size_t j = 0; j < batch.negatives.size(); ++j) {
        ens.push_back(encode_segment(ps, enc, batch.negatives[j], resolution, c_negs[j]));
    }
    if (!with_grad) return model::contrastive_loss(e, ep, ens);

    model::ContrastiveGrads grads;
    const double loss = model::contrastive_loss_grad(e, ep, ens, grads);
    if (weight != 1.0) {
        for (auto& v : grads.d_anchor.data) v *= weight;
        for (auto& v : grads.d_positive.data) v *= weight;
        for (auto& g : grads.d_negatives) {
            for (auto& v : g.data) v *= weight;
        }
    }
    enc.backward(ps, c_anchor, grads.d_anchor);
    enc.backward(ps, c_pos, grads.d_positive);
    for (std::size_t j = 0; j < batch.negatives.size(); ++j) {
        enc.backward(ps, c_negs[j], grads.d_negatives[j]);
    }
    return loss;
}

Tensor mean_embedding_impl(const ParamSet& ps, const model::ObjectEncoder& enc,
                           const std::vector<const sim::Episode*>& episodes, int resolution,
                           int e_dim, int segments, Rng& rng) {
    Tensor acc({e_dim});
    int used = 0;
    for (int k = 0; k < segments; ++k) {
        std::vector<const sim::Episode*> eligible;
        for (const auto* ep : episodes) {
            if (ep->size() >= data::kContrastLen) eligible.push_back(ep);
        }
        if (eligible.empty()) break;
        const auto* ep = eligible[static_cast<std::size_t>(
            rng.index(static_cast<std::int64_t>(eligible.size())))];
        const auto t0 = rng.index(ep->size() - data::kContrastLen + 1);
        model::ObjectEncoder::Cache cache;
        const Tensor e = enc.encode(ps, data::ContrastSegment{ep, t0}.stack(resolution), cache);
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += e.data[i];
        ++used;
    }
    if (used == 0) throw std::runtime_error("mean embedding: no segment long enough");
    double n2 = 0.0;
    for (double v : acc.data) n2 += v * v;
    const double n = std::sqrt(std::max(n2, 1e-24));
    for (auto& v : acc.data) v /= n;
    return acc;
}

std::vector<int> train_object_ids(const EpisodeCache& cache) {
    return cache.store().object_ids(data::Split::Train);
}

} // namespace

PretrainResult pretrain_object_encoder(const EpisodeCache& cache, const TrainConfig& cfg,
                                       const std::string& out_path) {
    cfg.validate();
    const auto ids = train_object_ids(cache);
    if (ids.size() < 2) {
        throw std::runtime_error("pretrain_object_encoder: need >= 2 training objects");
    }
    const auto train_eps = cache.split(data::Split::Train);
    const auto eval_eps = cache.split(data::Split::EvalSeen);
    const model::ModelConfig mc = cfg.model_config();

    EncoderRig rig;
    Rng rng(mix_seed(cfg.seed, 0x707265));
    rig.enc.init(rig.params, cfg.resolution, mc.e_dim, rng);
    rig.adam.lr = cfg.lr;

    const int epochs = cfg.pretrain_epochs > 0 ? cfg.pretrain_epochs : cfg.epochs;
    const int batches_per_epoch = 2 * static_cast<int>(ids.size());

    PretrainResult res;
    res.checkpoint_path = out_path;
    ParamSet last_good = rig.params;
    try {
        for (int epoch = 0; epoch < epochs; ++epoch) {
            double sum = 0.0;
            for (int b = 0; b < batches_per_epoch; ++b) {
                const auto batch = data::sample_contrast_batch(train_eps, cfg.n_sample, rng);
                rig.params.zero_grad();
                sum += contrastive_batch_step(rig.params, rig.enc, batch, cfg.resolution, 1.0,
                                              /*with_grad=*/true);
                adam_step(rig.params, rig.adam);
            }
            res.epoch_losses.push_back(sum / batches_per_epoch);
            last_good = rig.params;
        }
    } catch (const std::exception&) {
        save_checkpoint(out_path, last_good, R"({"kind":"pretrain"})");
        throw;
    }

    // Held-out loss, when an eval split exists; falls back to the train split.
    {
        Rng eval_rng(mix_seed(cfg.seed, 0x657661));
        const auto& eps = eval_eps.empty() ? train_eps : eval_eps;
        double sum = 0.0;
        const int n = 36;
        for (int b = 0; b < n; ++b) {
            const auto batch = data::sample_contrast_batch(eps, cfg.n_sample, eval_rng);
            sum += contrastive_batch_step(rig.params, rig.enc, batch, cfg.resolution, 1.0, false);
        }
        res.final_loss = sum / n;
    }

    // Cache one mean embedding per training object.
    Rng emb_rng(mix_seed(cfg.seed, 0x656d62));
    for (int id : ids) {
        const Tensor e = mean_embedding_impl(rig.params, rig.enc, cache.object_train(id),
                                             cfg.resolution, mc.e_dim, 8, emb_rng);
        rig.params.add("emb." + std::to_string(id), e);
    }

    nlohmann::json trailer{{"kind", "pretrain"},
                           {"resolution", cfg.resolution},
                           {"e_dim", mc.e_dim},
                           {"final_loss", res.final_loss}};
    save_checkpoint(out_path, rig.params, trailer.dump());

    std::vector<EpochLog> log;
    for (std::size_t i = 0; i < res.epoch_losses.size(); ++i) {
        log.push_back({static_cast<int>(i), res.epoch_losses[i], 0.0});
    }
    write_training_log(log, out_path + ".log.csv");
    return res;
}

namespace {

struct SampleSet {
    std::vector<data::TrainWindow> windows;
};

SampleSet collect_windows(const std::vector<const sim::Episode*>& episodes, int m) {
    SampleSet set;
    for (const auto* ep : episodes) {
        auto w = data::windows(*ep, m);
        set.windows.insert(set.windows.end(), w.begin(), w.end());
    }
    return set;
}

std::vector<const sim::Episode*> episodes_for_mode(const EpisodeCache& cache, data::Split split,
                                                   const TrainConfig& cfg, int object_id) {
    std::vector<const sim::Episode*> out;
    for (const auto& e : cache.store().entries) {
        if (e.split != split) continue;
        if (cfg.mode == model::Mode::SingleObject && e.object_id != object_id) continue;
        out.push_back(&cache.at(e));
    }
    return out;
}

int resolve_single_object(const EpisodeCache& cache, const TrainConfig& cfg) {
    if (cfg.single_object_id >= 0) return cfg.single_object_id;
    const auto ids = cache.store().object_ids(data::Split::Train);
    if (ids.empty()) throw std::runtime_error("train: no training objects in store");
    return ids.front();
}

} // namespace

Tensor mean_object_embedding(const model::DynamicsModel& mdl, const EpisodeCache& cache,
                             int object_id, int segments, Rng& rng) {
    return mean_embedding_impl(mdl.params, mdl.object_encoder(), cache.object_train(object_id),
                               mdl.cfg.resolution, mdl.cfg.e_dim, segments, rng);
}

double eval_l1_one_step(const model::DynamicsModel& mdl, const EpisodeCache& cache,
                        data::Split split, int cap, std::uint64_t seed, int object_id) {
    std::vector<const sim::Episode*> eps;
    for (const auto& e : cache.store().entries) {
        if (e.split != split) continue;
        if (object_id >= 0 && e.object_id != object_id) continue;
        eps.push_back(&cache.at(e));
    }
    if (eps.empty()) throw std::runtime_error("eval_l1_one_step: empty split");
    auto set = collect_windows(eps, mdl.cfg.m);
    Rng rng(mix_seed(seed, 0x6c3131));
    std::vector<std::size_t> idx(set.windows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (cap > 0 && static_cast<int>(idx.size()) > cap) {
        rng.shuffle(idx);
        idx.resize(static_cast<std::size_t>(cap));
        std::sort(idx.begin(), idx.end());
    }
    double acc = 0.0;
    std::map<const sim::Episode*, Tensor> prefix_emb;
    for (std::size_t i : idx) {
        const auto& w = set.windows[i];
        Tensor stack;
        const Tensor* stack_p = nullptr;
        if (mdl.cfg.use_touch()) {
            stack = w.stack(mdl.cfg.resolution);
            stack_p = &stack;
        }
        Tensor emb;
        const Tensor* emb_p = nullptr;
        if (mdl.cfg.use_embedding()) {
            auto it = prefix_emb.find(w.episode);
            if (it == prefix_emb.end()) {
                model::ObjectEncoder::Cache cache_e;
                Tensor e = mdl.object_encoder().encode(
                    mdl.params, data::ContrastSegment{w.episode, 0}.stack(mdl.cfg.resolution),
                    cache_e);
                it = prefix_emb.emplace(w.episode, std::move(e)).first;
            }
            emb = it->second;
            emb_p = &emb;
        }
        const auto pred = mdl.predict(w.s_t(), stack_p, emb_p);
        const auto truth = w.s_next();
        double l1 = 0.0;
        for (int d = 0; d < 12; ++d) {
            l1 += std::abs(truth[static_cast<std::size_t>(d)] -
                           pred.mean[static_cast<std::size_t>(d)]);
        }
        acc += l1 / 12.0;
    }
    return acc / static_cast<double>(idx.size());
}

TrainResult train_dynamics(const EpisodeCache& cache, const TrainConfig& cfg,
                           const std::string& out_path, const std::string& pretrained_path) {
    cfg.validate();
    const int object_id =
        cfg.mode == model::Mode::SingleObject ? resolve_single_object(cache, cfg) : -1;
    const auto train_eps = episodes_for_mode(cache, data::Split::Train, cfg, object_id);
    if (train_eps.empty()) throw std::runtime_error("train_dynamics: empty training split");
    auto eval_split = data::Split::EvalSeen;
    auto eval_eps = episodes_for_mode(cache, eval_split, cfg, object_id);
    if (eval_eps.empty()) eval_eps = train_eps;

    const auto norm = data::compute_norm_stats(train_eps);
    auto mdl = model::DynamicsModel::create(cfg.model_config(), norm, cfg.seed);

    std::string pretrain_file = pretrained_path;
    if (mdl.cfg.use_embedding() && pretrain_file.empty() && !cfg.joint) {
        pretrain_file = out_path + ".pretrain.tdck";
        pretrain_object_encoder(cache, cfg, pretrain_file);
    }
    if (mdl.cfg.use_embedding() && !pretrain_file.empty()) {
        const auto loaded = load_checkpoint(pretrain_file);
        for (const auto& p : loaded.params.entries()) {
            if (p.name.rfind("obj.", 0) == 0) {
                auto& dst = mdl.params.at(p.name);
                if (!dst.value.same_shape(p.value)) {
                    throw std::runtime_error("pretrained encoder shape mismatch at " + p.name);
                }
                dst.value = p.value;
            } else if (p.name.rfind("emb.", 0) == 0) {
                mdl.params.add(p.name, p.value);
            }
        }
    }
    if (mdl.cfg.use_embedding() && cfg.joint && pretrain_file.empty()) {
        // Joint mode from scratch: seed per-object embeddings from the
        // randomly initialized encoder; refreshed every epoch.
        Rng emb_rng(mix_seed(cfg.seed, 0x656d62));
        for (int id : cache.store().object_ids(data::Split::Train)) {
            mdl.set_object_embedding(id, mean_object_embedding(mdl, cache, id, 8, emb_rng));
        }
    }

    auto set = collect_windows(train_eps, cfg.m);
    if (set.windows.empty()) throw std::runtime_error("train_dynamics: no training windows");

    AdamConfig adam;
    adam.lr = cfg.lr;
    Rng rng(mix_seed(cfg.seed, 0x74726e));
    const auto train_all = cache.split(data::Split::Train);

    TrainResult res;
    res.checkpoint_path = out_path;
    ParamSet last_good = mdl.params;
    double initial_loss = 0.0;
    int divergent_epochs = 0;

    std::vector<std::size_t> order(set.windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(order);
            std::size_t take = order.size();
            if (cfg.max_windows_per_epoch > 0) {
                take = std::min(take, static_cast<std::size_t>(cfg.max_windows_per_epoch));
            }
            double loss_sum = 0.0;
            std::size_t done = 0;
            while (done < take) {
                const std::size_t bn = std::min<std::size_t>(
                    static_cast<std::size_t>(cfg.batch_size), take - done);
                mdl.params.zero_grad();
                for (std::size_t i = 0; i < bn; ++i) {
                    const auto& w = set.windows[order[done + i]];
                    Tensor stack;
                    const Tensor* stack_p = nullptr;
                    if (mdl.cfg.use_touch()) {
                        stack = w.stack(cfg.resolution);
                        stack_p = &stack;
                    }
                    Tensor emb;
                    const Tensor* emb_p = nullptr;
                    if (mdl.cfg.use_embedding()) {
                        emb = mdl.object_embedding(w.object_id());
                        emb_p = &emb;
                    }
                    // Input jitter hardens rollouts against their own drift.
                    // A heavy-tailed scale mix also teaches contraction back
                    // to the manifold from far-off states.
                    auto s_in = w.s_t();
                    if (cfg.state_noise > 0.0) {
                        double scale = cfg.state_noise;
                        const double u = rng.uniform();
                        if (u > 0.85) scale *= 8.0;
                        else if (u > 0.6) scale *= 3.0;
                        for (int d = 0; d < 12; ++d) {
                            const auto sd = static_cast<std::size_t>(d);
                            s_in[sd] += scale * mdl.norm.stdev[sd] * rng.normal();
                        }
                    }
                    model::DynamicsModel::StepCache sc;
                    const auto pred = mdl.predict(s_in, stack_p, emb_p, &sc);
                    const auto truth = w.s_next();
                    loss_sum += model::state_loss(truth, pred);
                    model::Vec12 d_mean{}, d_sigma{};
                    model::state_loss_grad(truth, pred, 1.0 / static_cast<double>(bn), d_mean,
                                           d_sigma);
                    mdl.backward(sc, d_mean, d_sigma, nullptr);
                }
                if (cfg.joint && mdl.cfg.use_embedding()) {
                    const auto batch = data::sample_contrast_batch(train_all, cfg.n_sample, rng);
                    contrastive_batch_step(mdl.params, mdl.object_encoder(), batch,
                                           cfg.resolution, cfg.lambda_obj, true);
                }
                adam_step(mdl.params, adam);
                done += bn;
            }
            if (cfg.joint && mdl.cfg.use_embedding()) {
                Rng emb_rng(mix_seed(cfg.seed, 0x656d62 + static_cast<std::uint64_t>(epoch)));
                for (int id : cache.store().object_ids(data::Split::Train)) {
                    mdl.set_object_embedding(id,
                                             mean_object_embedding(mdl, cache, id, 8, emb_rng));
                }
            }

            EpochLog row;
            row.epoch = epoch;
            row.train_loss = loss_sum / static_cast<double>(take);
            row.eval_l1_at_1 = eval_l1_one_step(mdl, cache,
                                                eval_eps == train_eps ? data::Split::Train
                                                                      : eval_split,
                                                cfg.eval_windows_cap, cfg.seed, object_id);
            res.log.push_back(row);

            if (epoch == 0) initial_loss = row.train_loss;
            if (row.train_loss > 10.0 * initial_loss) {
                if (++divergent_epochs >= 3) {
                    throw std::runtime_error("train_dynamics: loss diverged (over 10x initial "
                                             "for 3 epochs)");
                }
            } else {
                divergent_epochs = 0;
            }
            last_good = mdl.params;
        }
    } catch (const std::exception&) {
        save_checkpoint(out_path, last_good, mdl.cfg.to_json());
        write_training_log(res.log, out_path + ".log.csv");
        throw;
    }

    mdl.save(out_path);
    write_training_log(res.log, out_path + ".log.csv");
    return res;
}

void run_parallel(std::vector<std::function<void()>> tasks, int jobs) {
    if (jobs < 1) jobs = 1;
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(tasks.size());
    const int n = std::min<int>(jobs, static_cast<int>(tasks.size()));
    for (int t = 0; t < n; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= tasks.size()) return;
                try {
                    tasks[i]();
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace tdyn::train
