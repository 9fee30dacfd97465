// tdyn: synthetic tactile-dynamics pipeline driver.
// Subcommands: gen, pretrain, train, eval, ablate, gradcheck.
// Exit codes: 0 ok, 1 runtime failure, 2 config/validation error,
//             3 missing/unreadable input file, 4 NaN abort, 5 gradcheck failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tdyn/eval.hpp"
#include "tdyn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tdyn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitNan = 4;
constexpr int kExitGradcheck = 5;

const std::vector<std::string> kKnownKeys{
    "seed",      "out",      "store",       "activity",   "epochs",
    "lr",        "batch_size", "mode",      "variant",    "m",
    "resolution", "horizon", "episodes_per_object", "seen", "unseen",
    "duration",  "jobs",     "seeds",       "resolutions", "lambda_obj",
    "joint",     "pretrained", "object",    "split",      "max_windows_per_epoch",
    "spacing",   "force",    "pretrain_epochs"};

json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file: " + path);
    json j;
    is >> j;
    for (const auto& [key, _] : j.items()) {
        if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) == kKnownKeys.end()) {
            throw std::invalid_argument("unknown config key: " + key);
        }
    }
    return j;
}

// Pre-scan for --config so its values become CLI defaults (flags then win).
json scan_config(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") return load_config(argv[i + 1]);
    }
    return json::object();
}

std::uint64_t default_seed(const json& cfg) {
    if (cfg.contains("seed")) return cfg["seed"].get<std::uint64_t>();
    if (const char* env = std::getenv("TDYN_SEED")) {
        return static_cast<std::uint64_t>(std::stoull(env));
    }
    return 0;
}

template <typename T>
T cfg_or(const json& cfg, const std::string& key, T fallback) {
    return cfg.contains(key) ? cfg[key].get<T>() : fallback;
}

void require_writable(const std::string& path, bool force) {
    if (fs::exists(path) && !force) {
        throw std::invalid_argument("output already exists (use --force): " + path);
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoull(tok));
    }
    if (out.empty()) throw std::invalid_argument("empty seed list");
    return out;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

int run_gradcheck();

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tdyn: tactile hand-object dynamics pipeline"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");

    json cfg;
    try {
        cfg = scan_config(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "generate an episode store");
    std::string gen_activity = cfg_or<std::string>(cfg, "activity", "throw");
    std::string gen_out = cfg_or<std::string>(cfg, "out", "data");
    int gen_seen = cfg_or(cfg, "seen", 12);
    int gen_unseen = cfg_or(cfg, "unseen", 3);
    int gen_epo = cfg_or(cfg, "episodes_per_object", 5);
    double gen_duration = cfg_or(cfg, "duration", 6.0);
    std::uint64_t gen_seed = default_seed(cfg);
    bool gen_force = cfg_or(cfg, "force", false);
    gen->add_option("--activity", gen_activity, "wave|throw|pingpong|balance|all");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--seen", gen_seen, "seen objects");
    gen->add_option("--unseen", gen_unseen, "unseen objects");
    gen->add_option("--episodes-per-object", gen_epo);
    gen->add_option("--duration", gen_duration, "episode length, s");
    gen->add_option("--seed", gen_seed);
    gen->add_flag("--force", gen_force, "overwrite existing outputs");

    // ---- shared train/pretrain options ----
    auto add_train_opts = [&](CLI::App* cmd, train::TrainConfig& tc, std::string& store,
                              std::string& out) {
        store = cfg_or<std::string>(cfg, "store", "data");
        out = cfg_or<std::string>(cfg, "out", "model.tdck");
        tc.epochs = cfg_or(cfg, "epochs", 50);
        tc.lr = cfg_or(cfg, "lr", 0.0005);
        tc.batch_size = cfg_or(cfg, "batch_size", 64);
        tc.seed = default_seed(cfg);
        tc.m = cfg_or(cfg, "m", 5);
        tc.resolution = cfg_or(cfg, "resolution", 32);
        tc.lambda_obj = cfg_or(cfg, "lambda_obj", 0.1);
        tc.joint = cfg_or(cfg, "joint", false);
        tc.max_windows_per_epoch = cfg_or(cfg, "max_windows_per_epoch", 0);
        tc.single_object_id = cfg_or(cfg, "object", -1);
        tc.pretrain_epochs = cfg_or(cfg, "pretrain_epochs", 0);
        cmd->add_option("--store", store, "episode store directory");
        cmd->add_option("--out", out, "output checkpoint path");
        cmd->add_option("--epochs", tc.epochs);
        cmd->add_option("--lr", tc.lr);
        cmd->add_option("--batch-size", tc.batch_size);
        cmd->add_option("--seed", tc.seed);
        cmd->add_option("--m", tc.m, "tactile window length");
        cmd->add_option("--resolution", tc.resolution);
        cmd->add_option("--lambda-obj", tc.lambda_obj);
        cmd->add_flag("--joint", tc.joint, "joint Eq-style training instead of two-stage");
        cmd->add_option("--max-windows-per-epoch", tc.max_windows_per_epoch);
        cmd->add_option("--object", tc.single_object_id, "single-object mode: object id");
        cmd->add_option("--pretrain-epochs", tc.pretrain_epochs);
    };

    auto* pre = app.add_subcommand("pretrain", "contrastive object-encoder pretraining");
    train::TrainConfig pre_cfg;
    pre_cfg.mode = model::Mode::MultiObject;
    std::string pre_store, pre_out;
    add_train_opts(pre, pre_cfg, pre_store, pre_out);
    bool pre_force = cfg_or(cfg, "force", false);
    pre->add_flag("--force", pre_force);

    auto* trn = app.add_subcommand("train", "dynamics training");
    train::TrainConfig trn_cfg;
    std::string trn_store, trn_out;
    add_train_opts(trn, trn_cfg, trn_store, trn_out);
    std::string trn_mode = cfg_or<std::string>(cfg, "mode", "single_object");
    std::string trn_variant = cfg_or<std::string>(cfg, "variant", "full");
    std::string trn_pretrained = cfg_or<std::string>(cfg, "pretrained", "");
    bool trn_force = cfg_or(cfg, "force", false);
    trn->add_option("--mode", trn_mode, "single_object|multi_object");
    trn->add_option("--variant", trn_variant, "full|no_touch|no_embed");
    trn->add_option("--pretrained", trn_pretrained, "pretrained encoder checkpoint");
    trn->add_flag("--force", trn_force);

    auto* evl = app.add_subcommand("eval", "rollout metrics for a checkpoint");
    std::string evl_store = cfg_or<std::string>(cfg, "store", "data");
    std::string evl_ckpt = cfg_or<std::string>(cfg, "out", "model.tdck");
    std::string evl_split = cfg_or<std::string>(cfg, "split", "eval_seen");
    std::string evl_csv = "metrics.csv";
    int evl_horizon = cfg_or(cfg, "horizon", 50);
    int evl_spacing = cfg_or(cfg, "spacing", 10);
    int evl_object = cfg_or(cfg, "object", -1);
    std::uint64_t evl_seed = default_seed(cfg);
    bool evl_force = cfg_or(cfg, "force", false);
    evl->add_option("--store", evl_store);
    evl->add_option("--ckpt", evl_ckpt, "model checkpoint")->required();
    evl->add_option("--split", evl_split, "train|eval_seen|eval_unseen");
    evl->add_option("--horizon", evl_horizon);
    evl->add_option("--spacing", evl_spacing, "rollout start spacing");
    evl->add_option("--object", evl_object, "restrict to one object id");
    evl->add_option("--out-csv", evl_csv, "metrics CSV path");
    evl->add_option("--seed", evl_seed);
    evl->add_flag("--force", evl_force);

    auto* abl = app.add_subcommand("ablate", "tactile-resolution ablation");
    train::TrainConfig abl_cfg;
    std::string abl_store, abl_outdir;
    add_train_opts(abl, abl_cfg, abl_store, abl_outdir);
    std::string abl_res = cfg_or<std::string>(cfg, "resolutions", "32,24,16,12,8,6");
    std::string abl_seeds = cfg_or<std::string>(cfg, "seeds", "1,2,3");
    int abl_jobs = cfg_or(cfg, "jobs", 1);
    bool abl_force = cfg_or(cfg, "force", false);
    abl->add_option("--resolutions", abl_res, "comma-separated list");
    abl->add_option("--seeds", abl_seeds, "comma-separated list");
    abl->add_option("--jobs", abl_jobs, "parallel sub-runs");
    abl->add_flag("--force", abl_force);

    auto* gck = app.add_subcommand("gradcheck", "finite-difference gradient checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            std::vector<sim::Activity> acts;
            if (gen_activity == "all") {
                acts = {sim::Activity::Wave, sim::Activity::Throw, sim::Activity::PingPong,
                        sim::Activity::Balance};
            } else {
                acts = {sim::activity_from_name(gen_activity)};
            }
            for (const auto a : acts) {
                const std::string dir =
                    acts.size() == 1 ? gen_out
                                     : (fs::path(gen_out) / sim::activity_name(a)).string();
                if (fs::exists(fs::path(dir) / "manifest.tsv") && !gen_force) {
                    throw std::invalid_argument("store already exists (use --force): " + dir);
                }
                const auto store = data::make_dataset(a, gen_seen, gen_unseen, gen_epo, gen_seed,
                                                      dir, gen_duration);
                int per_split[3] = {0, 0, 0};
                for (const auto& e : store.entries) per_split[static_cast<int>(e.split)]++;
                std::cout << sim::activity_name(a) << ": " << store.entries.size()
                          << " episodes (train " << per_split[0] << ", eval_seen " << per_split[1]
                          << ", eval_unseen " << per_split[2] << ") -> " << dir << "\n";
            }
        } else if (pre->parsed()) {
            require_writable(pre_out, pre_force);
            pre_cfg.mode = model::Mode::MultiObject;
            const auto store = data::load_store(pre_store);
            train::EpisodeCache cache(store);
            const auto res = train::pretrain_object_encoder(cache, pre_cfg, pre_out);
            std::cout << "pretrain: final contrastive loss " << res.final_loss << " -> "
                      << res.checkpoint_path << "\n";
        } else if (trn->parsed()) {
            require_writable(trn_out, trn_force);
            trn_cfg.mode = model::mode_from_name(trn_mode);
            trn_cfg.variant = model::variant_from_name(trn_variant);
            const auto store = data::load_store(trn_store);
            train::EpisodeCache cache(store);
            const auto res = train::train_dynamics(cache, trn_cfg, trn_out, trn_pretrained);
            std::cout << "train: " << res.log.size() << " epochs, final eval L1@1 "
                      << (res.log.empty() ? 0.0 : res.log.back().eval_l1_at_1) << " -> "
                      << res.checkpoint_path << "\n";
        } else if (evl->parsed()) {
            require_writable(evl_csv, evl_force);
            const auto store = data::load_store(evl_store);
            train::EpisodeCache cache(store);
            const auto mdl = model::DynamicsModel::load(evl_ckpt);
            const auto split = data::split_from_name(evl_split);
            std::vector<const sim::Episode*> eps;
            for (const auto& e : store.entries) {
                if (e.split != split) continue;
                if (evl_object >= 0 && e.object_id != evl_object) continue;
                eps.push_back(&cache.at(e));
            }
            if (eps.empty()) throw std::invalid_argument("no episodes in requested split");
            const auto rolls = eval::run_rollouts(mdl, eps, evl_horizon, evl_spacing);
            std::vector<eval::MetricRow> rows;
            const std::string variant = model::variant_name(mdl.cfg.variant);
            for (int k : {20, 50}) {
                if (k <= evl_horizon) {
                    rows.push_back({variant, evl_split, "l1", k, evl_seed,
                                    eval::l1_at_k(rolls, k)});
                }
            }
            rows.push_back({variant, evl_split, "hausdorff", evl_horizon, evl_seed,
                            eval::mean_hausdorff(rolls)});
            rows.push_back({variant, evl_split, "coverage", evl_horizon, evl_seed,
                            eval::coverage_rate(rolls)});
            eval::write_metrics_csv(rows, evl_csv);
            for (const auto& r : rows) {
                std::cout << r.metric << "@" << r.horizon << " [" << r.split << "] = " << r.value
                          << "\n";
            }
        } else if (abl->parsed()) {
            fs::create_directories(abl_outdir);
            const auto csv = (fs::path(abl_outdir) / "ablation.csv").string();
            require_writable(csv, abl_force);
            const auto store = data::load_store(abl_store);
            train::EpisodeCache cache(store);
            const auto table =
                eval::resolution_ablation(cache, abl_cfg, parse_int_list(abl_res),
                                          parse_seed_list(abl_seeds), abl_outdir, abl_jobs);
            eval::write_ablation_csv(table, csv);
            eval::write_ablation_plot(table, 20,
                                      (fs::path(abl_outdir) / "ablation_l1at20.csv").string());
            eval::write_ablation_plot(table, 50,
                                      (fs::path(abl_outdir) / "ablation_l1at50.csv").string());
            std::cout << "ablation table -> " << csv << "\n";
        } else if (gck->parsed()) {
            return run_gradcheck();
        }
    } catch (const NumericError& e) {
        std::cerr << "NaN abort: " << e.what() << "\n";
        return kExitNan;
    } catch (const LoadError& e) {
        std::cerr << "load error: " << e.what() << "\n";
        return kExitMissingFile;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

namespace {

int run_gradcheck() {
    // Small randomized instances of every layer and loss; tolerance 1e-4.
    bool ok = true;
    auto report = [&](const std::string& name, const GradCheckResult& r) {
        const bool pass = r.ok(1e-4);
        ok = ok && pass;
        std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << " max rel err " << r.max_rel_err;
        if (!pass) std::cout << " at " << r.worst_param << "[" << r.worst_index << "]";
        std::cout << "\n";
    };

    Rng rng(20240901);
    {
        ParamSet ps;
        LinearLayer lin;
        lin.init(ps, "lin", 7, 5, rng);
        Tensor x({7});
        for (auto& v : x.data) v = rng.normal();
        Tensor target({5});
        for (auto& v : target.data) v = rng.normal();
        auto loss = [&](ParamSet& p) {
            Tensor xc;
            const Tensor y = lin.forward(p, x, xc);
            Tensor dy({5});
            double l = 0.0;
            for (int i = 0; i < 5; ++i) {
                const double d = y[i] - target[i];
                l += d * d;
                dy[i] = 2.0 * d;
            }
            lin.backward(p, xc, dy, false);
            return l;
        };
        report("linear", grad_check(loss, ps));
    }
    {
        ParamSet ps;
        Conv2dLayer conv;
        conv.init(ps, "conv", 2, 3, 3, 2, 1, rng);
        Tensor x({2, 8, 8});
        for (auto& v : x.data) v = rng.normal();
        auto loss = [&](ParamSet& p) {
            const Tensor y = conv2d_forward(x, p.at("conv.w").value, p.at("conv.b").value,
                                            conv.spec);
            double l = 0.0;
            Tensor dy(y.shape);
            for (std::size_t i = 0; i < y.data.size(); ++i) {
                l += std::sin(static_cast<double>(i)) * y.data[i];
                dy.data[i] = std::sin(static_cast<double>(i));
            }
            conv2d_backward(x, p.at("conv.w").value, conv.spec, dy, nullptr,
                            p.at("conv.w").grad, p.at("conv.b").grad);
            return l;
        };
        report("conv2d", grad_check(loss, ps));
    }
    {
        ParamSet ps;
        ps.add("z", Tensor({6}, {-1.5, -0.2, 0.3, 1.0, 2.5, -3.0}));
        auto loss = [&](ParamSet& p) {
            const Tensor& z = p.at("z").value;
            const Tensor y = softplus_forward(z);
            double l = 0.0;
            Tensor dy(y.shape);
            for (std::size_t i = 0; i < y.data.size(); ++i) {
                l += y.data[i] * y.data[i];
                dy.data[i] = 2.0 * y.data[i];
            }
            const Tensor dz = softplus_backward(z, dy);
            for (std::size_t i = 0; i < dz.data.size(); ++i) p.at("z").grad.data[i] += dz.data[i];
            return l;
        };
        report("softplus", grad_check(loss, ps));
    }
    {
        // Pinball + state loss through a tiny predictor, away from kinks.
        ParamSet ps;
        ps.add("mean", Tensor({12}));
        ps.add("sig", Tensor({12}));
        for (int i = 0; i < 12; ++i) {
            ps.at("mean").value[i] = 0.3 * std::sin(i + 1.0);
            ps.at("sig").value[i] = 0.2 + 0.05 * i;
        }
        model::Vec12 target{};
        for (int i = 0; i < 12; ++i) target[static_cast<std::size_t>(i)] = 0.8 * std::cos(i * 0.7);
        auto loss = [&](ParamSet& p) {
            model::Prediction pred;
            for (int i = 0; i < 12; ++i) {
                pred.mean[static_cast<std::size_t>(i)] = p.at("mean").value[i];
                pred.sigma[static_cast<std::size_t>(i)] = softplus_scalar(p.at("sig").value[i]);
            }
            const double l = model::state_loss(target, pred);
            model::Vec12 dm{}, dsg{};
            model::state_loss_grad(target, pred, 1.0, dm, dsg);
            for (int i = 0; i < 12; ++i) {
                p.at("mean").grad[i] += dm[static_cast<std::size_t>(i)];
                const double z = p.at("sig").value[i];
                const double sig_d = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                            : std::exp(z) / (1.0 + std::exp(z));
                p.at("sig").grad[i] += dsg[static_cast<std::size_t>(i)] * sig_d;
            }
            return l;
        };
        report("state+pinball loss", grad_check(loss, ps));
    }
    {
        // Contrastive loss over free embedding vectors.
        ParamSet ps;
        Rng r2(7);
        ps.add("e", Tensor({8}));
        ps.add("ep", Tensor({8}));
        ps.add("en0", Tensor({8}));
        ps.add("en1", Tensor({8}));
        for (auto& p : ps.entries()) {
            for (auto& v : p.value.data) v = 0.5 * r2.normal();
        }
        auto loss = [&](ParamSet& p) {
            std::vector<Tensor> negs{p.at("en0").value, p.at("en1").value};
            model::ContrastiveGrads g;
            const double l =
                model::contrastive_loss_grad(p.at("e").value, p.at("ep").value, negs, g);
            for (std::size_t i = 0; i < 8; ++i) {
                p.at("e").grad.data[i] += g.d_anchor.data[i];
                p.at("ep").grad.data[i] += g.d_positive.data[i];
                p.at("en0").grad.data[i] += g.d_negatives[0].data[i];
                p.at("en1").grad.data[i] += g.d_negatives[1].data[i];
            }
            return l;
        };
        report("contrastive loss", grad_check(loss, ps));
    }
    if (!ok) {
        std::cerr << "gradient check failed\n";
        return kExitGradcheck;
    }
    return kExitOk;
}

} // namespace
