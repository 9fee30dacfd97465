#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tdyn/train.hpp"

using namespace tdyn;
using namespace tdyn::train;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string file(const std::string& n) const { return (path / n).string(); }
};

std::string read_all(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

const data::EpisodeStore& wave_store() {
    static TempDir dir("tdyn_train_store");
    static data::EpisodeStore store =
        data::make_dataset(sim::Activity::Wave, 2, 1, 4, 900, dir.str(), 4.0);
    return store;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.resolution = 16;
    cfg.max_windows_per_epoch = 48;
    cfg.eval_windows_cap = 32;
    cfg.seed = 5;
    cfg.pretrain_epochs = 2;
    return cfg;
}

} // namespace

TEST_CASE("variant wiring: input dims follow the ablation matrix") {
    auto dims = [](model::Mode mode, model::Variant variant) {
        model::ModelConfig mc;
        mc.mode = mode;
        mc.variant = variant;
        return mc.input_dim();
    };
    CHECK(dims(model::Mode::MultiObject, model::Variant::Full) == 108);
    CHECK(dims(model::Mode::SingleObject, model::Variant::Full) == 76);
    CHECK(dims(model::Mode::SingleObject, model::Variant::NoTouch) == 12);
    CHECK(dims(model::Mode::MultiObject, model::Variant::NoTouch) == 44);
    CHECK(dims(model::Mode::MultiObject, model::Variant::NoEmbed) == 76);

    model::ModelConfig bad;
    bad.mode = model::Mode::SingleObject;
    bad.variant = model::Variant::NoEmbed;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("dynamics training is deterministic per seed") {
    EpisodeCache cache(wave_store());
    TempDir out("tdyn_train_det");
    auto cfg = tiny_config();

    train_dynamics(cache, cfg, out.file("a.tdck"));
    train_dynamics(cache, cfg, out.file("b.tdck"));
    CHECK(read_all(out.file("a.tdck")) == read_all(out.file("b.tdck")));
    CHECK(read_all(out.file("a.tdck.log.csv")) == read_all(out.file("b.tdck.log.csv")));

    cfg.seed = 6;
    train_dynamics(cache, cfg, out.file("c.tdck"));
    CHECK(read_all(out.file("a.tdck")) != read_all(out.file("c.tdck")));
}

TEST_CASE("training log has the documented columns") {
    EpisodeCache cache(wave_store());
    TempDir out("tdyn_train_log");
    auto cfg = tiny_config();
    const auto res = train_dynamics(cache, cfg, out.file("m.tdck"));
    CHECK(res.log.size() == 2);
    std::ifstream is(out.file("m.tdck.log.csv"));
    std::string header;
    std::getline(is, header);
    CHECK(header == "epoch,train_loss,eval_l1_at_1");
}

TEST_CASE("no_touch variant trains without a tactile branch") {
    EpisodeCache cache(wave_store());
    TempDir out("tdyn_train_nt");
    auto cfg = tiny_config();
    cfg.variant = model::Variant::NoTouch;
    const auto res = train_dynamics(cache, cfg, out.file("nt.tdck"));
    const auto mdl = model::DynamicsModel::load(res.checkpoint_path);
    CHECK_FALSE(mdl.params.contains("tac.c1.w"));
    CHECK(mdl.cfg.input_dim() == 12);
}

TEST_CASE("pretraining caches unit-norm embeddings and its loss trends down") {
    EpisodeCache cache(wave_store());
    TempDir out("tdyn_pre");
    auto cfg = tiny_config();
    cfg.mode = model::Mode::MultiObject;
    cfg.pretrain_epochs = 6;
    const auto res = pretrain_object_encoder(cache, cfg, out.file("enc.tdck"));
    CHECK(res.epoch_losses.size() == 6);
    CHECK(res.epoch_losses.back() < res.epoch_losses.front());

    const auto loaded = load_checkpoint(res.checkpoint_path);
    for (int id : {0, 1}) {
        const auto& e = loaded.params.at("emb." + std::to_string(id)).value;
        double n2 = 0.0;
        for (double v : e.data) n2 += v * v;
        CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-5));
    }
    // Unseen object (id 2) has no cached embedding.
    CHECK_FALSE(loaded.params.contains("emb.2"));

    // Determinism.
    const auto res2 = pretrain_object_encoder(cache, cfg, out.file("enc2.tdck"));
    CHECK(read_all(out.file("enc.tdck")) == read_all(out.file("enc2.tdck")));
}

TEST_CASE("frozen encoder: object-encoder weights identical after dynamics training") {
    EpisodeCache cache(wave_store());
    TempDir out("tdyn_frozen");
    auto cfg = tiny_config();
    cfg.mode = model::Mode::MultiObject;
    const auto pre = pretrain_object_encoder(cache, cfg, out.file("enc.tdck"));
    const auto dyn = train_dynamics(cache, cfg, out.file("dyn.tdck"), pre.checkpoint_path);

    const auto enc = load_checkpoint(pre.checkpoint_path);
    const auto fin = load_checkpoint(dyn.checkpoint_path);
    for (const auto& p : enc.params.entries()) {
        if (p.name.rfind("obj.", 0) != 0) continue;
        CHECK(fin.params.at(p.name).value.data == p.value.data);
    }
}

TEST_CASE("single-object mode trains on one object only") {
    EpisodeCache cache(wave_store());
    TempDir out("tdyn_single");
    auto cfg = tiny_config();
    cfg.mode = model::Mode::SingleObject;
    cfg.single_object_id = 1;
    const auto res = train_dynamics(cache, cfg, out.file("s1.tdck"));
    const auto mdl = model::DynamicsModel::load(res.checkpoint_path);
    CHECK(mdl.cfg.input_dim() == 76);
    const double l1 = eval_l1_one_step(mdl, cache, data::Split::EvalSeen, 16, 3, 1);
    CHECK(l1 >= 0.0);
    CHECK(std::isfinite(l1));
}

TEST_CASE("invalid configurations are rejected") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.mode = model::Mode::SingleObject;
    cfg.variant = model::Variant::NoEmbed;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("run_parallel executes every task and propagates failures") {
    std::vector<int> done(8, 0);
    std::vector<std::function<void()>> tasks;
    for (int i = 0; i < 8; ++i) {
        tasks.push_back([&done, i] { done[static_cast<std::size_t>(i)] = i + 1; });
    }
    run_parallel(std::move(tasks), 2);
    for (int i = 0; i < 8; ++i) CHECK(done[static_cast<std::size_t>(i)] == i + 1);

    std::vector<std::function<void()>> bad;
    bad.push_back([] { throw std::runtime_error("boom"); });
    CHECK_THROWS_AS(run_parallel(std::move(bad), 2), std::runtime_error);
}
