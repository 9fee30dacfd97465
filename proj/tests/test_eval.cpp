#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tdyn/eval.hpp"

using namespace tdyn;
using namespace tdyn::eval;
namespace fs = std::filesystem;

namespace {

sim::ObjectSpec demo_spec() {
    sim::ObjectSpec s;
    s.id = 0;
    s.mass = 0.5;
    s.restitution = 0.93;
    s.grip_offset = {0.0, 0.0, 0.05};
    s.footprint = Tensor({sim::kSensorDim, sim::kSensorDim});
    for (int r = 12; r < 20; ++r) {
        for (int c = 12; c < 20; ++c) {
            s.footprint.at3(0, r, c, sim::kSensorDim, sim::kSensorDim) = 0.7;
        }
    }
    return s;
}

// Naive double-loop directed-max-min oracle.
double hausdorff_oracle(const std::vector<sim::Vec3>& a, const std::vector<sim::Vec3>& b) {
    double h = 0.0;
    for (int dir = 0; dir < 2; ++dir) {
        const auto& from = dir == 0 ? a : b;
        const auto& to = dir == 0 ? b : a;
        for (const auto& p : from) {
            double best = 1e300;
            for (const auto& q : to) {
                const double d = std::sqrt((p.x - q.x) * (p.x - q.x) +
                                           (p.y - q.y) * (p.y - q.y) +
                                           (p.z - q.z) * (p.z - q.z));
                best = std::min(best, d);
            }
            h = std::max(h, best);
        }
    }
    return h;
}

std::vector<sim::Vec3> random_track(Rng& rng, int max_len) {
    std::vector<sim::Vec3> pts(static_cast<std::size_t>(1 + rng.index(max_len)));
    for (auto& p : pts) p = {rng.normal(), rng.normal(), rng.normal()};
    return pts;
}

model::DynamicsModel fresh_model(int m = 5, int res = 16) {
    model::ModelConfig cfg;
    cfg.m = m;
    cfg.resolution = res;
    data::NormStats norm;
    for (int i = 0; i < 12; ++i) {
        norm.mean[static_cast<std::size_t>(i)] = 0.0;
        norm.stdev[static_cast<std::size_t>(i)] = 1.0;
    }
    return model::DynamicsModel::create(cfg, norm, 77);
}

} // namespace

TEST_CASE("hausdorff: hand-computed values") {
    CHECK(hausdorff({{1, 2, 3}}, {{1, 2, 3}}) == 0.0);
    CHECK(hausdorff({{0, 0, 0}}, {{3, 4, 0}}) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(hausdorff({{0, 0, 0}, {1, 0, 0}}, {{0, 0, 0}}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(hausdorff({}, {{0, 0, 0}}), std::invalid_argument);
}

TEST_CASE("hausdorff: exact agreement with the brute-force oracle, metric axioms") {
    Rng rng(41);
    for (int trial = 0; trial < 60; ++trial) {
        const auto a = random_track(rng, 50);
        const auto b = random_track(rng, 50);
        const auto c = random_track(rng, 50);
        const double hab = hausdorff(a, b);
        CHECK(hab == hausdorff_oracle(a, b));          // exact, same arithmetic
        CHECK(hab == hausdorff(b, a));                 // symmetry
        CHECK(hausdorff(a, a) == 0.0);                 // identity
        const double hac = hausdorff(a, c);
        const double hcb = hausdorff(c, b);
        CHECK(hab <= hac + hcb + 1e-12);               // triangle inequality
    }
}

TEST_CASE("l1_at_k: zero on identical trajectories, offset arithmetic") {
    Rng rng(13);
    Rollout r;
    r.horizon = 10;
    const double delta = 0.3;
    for (int j = 0; j < 10; ++j) {
        model::Vec12 truth{};
        for (auto& v : truth) v = rng.normal();
        model::Prediction p;
        p.mean = truth;
        r.truth.push_back(truth);
        r.predicted.push_back(p);
    }
    CHECK(l1_at_k({r}, 10) == 0.0);

    // Constant offset on the six position dims, zero velocity error -> delta/2.
    Rollout shifted = r;
    for (auto& p : shifted.predicted) {
        for (int d : {0, 1, 2, 6, 7, 8}) p.mean[static_cast<std::size_t>(d)] += delta;
    }
    CHECK(l1_at_k({shifted}, 10) == doctest::Approx(delta / 2.0).epsilon(1e-12));
    CHECK(l1_at_k({shifted}, 5) == doctest::Approx(delta / 2.0).epsilon(1e-12));

    CHECK_THROWS_AS(l1_at_k({}, 10), std::invalid_argument);
    CHECK_THROWS_AS(l1_at_k({r}, 11), std::invalid_argument);

    // Invariant to rollout order.
    CHECK(l1_at_k({r, shifted}, 10) == l1_at_k({shifted, r}, 10));
}

TEST_CASE("coverage: zero sigma covers nothing, huge sigma covers all") {
    Rng rng(15);
    Rollout r;
    r.horizon = 20;
    for (int j = 0; j < 20; ++j) {
        model::Vec12 truth{};
        for (auto& v : truth) v = rng.normal();
        model::Prediction p;
        for (auto& v : p.mean) v = rng.normal();
        p.sigma = {};
        r.truth.push_back(truth);
        r.predicted.push_back(p);
    }
    CHECK(coverage_rate({r}) < 0.01);
    for (auto& p : r.predicted) {
        for (auto& v : p.sigma) v = 1e9;
    }
    CHECK(coverage_rate({r}) == 1.0);
}

TEST_CASE("rollout: oracle step function reproduces the truth exactly") {
    const auto ep = sim::gen_throw(demo_spec(), 5.0, 3);
    StepFn oracle = [&](const model::Vec12&, const sim::Episode& e, std::int64_t t) {
        model::Prediction p;
        p.mean = e.states[static_cast<std::size_t>(t + 1)].flatten();
        return p;
    };
    const auto r = rollout(oracle, ep, 4, 50);
    CHECK(r.horizon == 50);
    CHECK(l1_at_k({r}, 50) == 0.0);
    CHECK(hausdorff_rollout(r) == 0.0);
}

TEST_CASE("rollout: K=1 equals a single-step prediction; bounds enforced") {
    const auto ep = sim::gen_wave(demo_spec(), 4.0, 5);
    auto mdl = fresh_model();
    const auto r1 = rollout_model(mdl, ep, 4, 1);
    const auto stack = data::TrainWindow{&ep, 4, mdl.cfg.m}.stack(mdl.cfg.resolution);
    const auto direct = mdl.predict(ep.states[4].flatten(), &stack, nullptr);
    CHECK(r1.predicted[0].mean == direct.mean);
    CHECK(r1.predicted[0].sigma == direct.sigma);

    CHECK_THROWS_AS(rollout_model(mdl, ep, 4, static_cast<int>(ep.size())),
                    std::invalid_argument);
    CHECK_THROWS_AS(rollout_model(mdl, ep, 2, 5), std::invalid_argument);  // t0 < M-1

    // Deterministic given the checkpoint.
    const auto r2 = rollout_model(mdl, ep, 4, 1);
    CHECK(r1.predicted[0].mean == r2.predicted[0].mean);
}

TEST_CASE("rollout starts: spacing and horizon bound") {
    const auto ep = sim::gen_wave(demo_spec(), 6.0, 6);  // 90 steps
    const auto starts = rollout_starts(ep, 5, 50, 10);
    CHECK(starts == std::vector<std::int64_t>{4, 14, 24, 34});
    for (const auto t0 : starts) CHECK(t0 + 50 < ep.size());
}

TEST_CASE("random baseline: deterministic, positive, never self-paired") {
    const auto e1 = sim::gen_wave(demo_spec(), 5.0, 21);
    const auto e2 = sim::gen_wave(demo_spec(), 5.0, 22);
    std::vector<const sim::Episode*> eps{&e1, &e2};
    const double a = random_baseline(eps, 5, 20, Metric::L1, 33);
    const double b = random_baseline(eps, 5, 20, Metric::L1, 33);
    CHECK(a == b);
    CHECK(a > 0.0);  // distinct windows of a moving hand never coincide
    const double h = random_baseline(eps, 5, 20, Metric::Hausdorff, 33);
    CHECK(h > 0.0);

    // A single window cannot be paired.
    sim::Episode tiny = e1;
    tiny.states.resize(60);
    tiny.frames.resize(60);
    tiny.labels.resize(60);
    std::vector<const sim::Episode*> one{&tiny};
    CHECK_THROWS_AS(random_baseline(one, 5, 50, Metric::L1, 1), std::invalid_argument);
}

TEST_CASE("metrics csv and ablation outputs have the documented shapes") {
    const auto dir = fs::temp_directory_path() / "tdyn_eval_out";
    fs::create_directories(dir);
    std::vector<MetricRow> rows{{"full", "eval_seen", "l1", 20, 7, 0.25},
                                {"full", "eval_seen", "hausdorff", 50, 7, 0.5}};
    const auto csv = (dir / "metrics.csv").string();
    write_metrics_csv(rows, csv);
    std::ifstream is(csv);
    std::string header;
    std::getline(is, header);
    CHECK(header == "variant,split,metric,horizon,seed,value");

    AblationTable table;
    for (int r : {32, 6}) {
        for (int h : {20, 50}) {
            AblationCell c;
            c.resolution = r;
            c.horizon = h;
            c.per_seed = {0.1 * r, 0.2 * r};
            table.cells.push_back(c);
        }
    }
    const auto plot = (dir / "plot.csv").string();
    write_ablation_plot(table, 50, plot);
    std::ifstream ps(plot);
    std::getline(ps, header);
    CHECK(header == "x,y,y_lo,y_hi");
    int lines = 0;
    std::string line;
    while (std::getline(ps, line)) ++lines;
    CHECK(lines == 2);
    CHECK(table.find(32, 20) != nullptr);
    CHECK(table.find(32, 20)->mean() == doctest::Approx(0.1 * 32 * 1.5));
    fs::remove_all(dir);
}
