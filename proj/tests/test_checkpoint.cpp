#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tdyn/checkpoint.hpp"

using namespace tdyn;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("tdyn_ckpt_" + name)).string();
}

std::vector<char> read_all(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

ParamSet demo_params() {
    Rng rng(5);
    ParamSet ps;
    Tensor a({3, 4});
    for (auto& v : a.data) v = rng.normal();
    Tensor b({7});
    for (auto& v : b.data) v = rng.normal();
    ps.add("enc.w", std::move(a));
    ps.add("enc.b", std::move(b));
    return ps;
}

} // namespace

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
    const auto p1 = tmp_path("a.tdck");
    const auto p2 = tmp_path("b.tdck");
    const auto ps = demo_params();
    save_checkpoint(p1, ps, R"({"m":5})");
    const auto loaded = load_checkpoint(p1);
    CHECK(loaded.trailer_json == R"({"m":5})");
    CHECK(loaded.params.size() == 2);
    CHECK(loaded.params.at("enc.w").value.shape == std::vector<std::int64_t>{3, 4});
    save_checkpoint(p2, loaded.params, loaded.trailer_json);
    CHECK(read_all(p1) == read_all(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("checkpoint load errors are distinct") {
    const auto p = tmp_path("broken.tdck");
    {
        std::ofstream os(p, std::ios::binary);
        os << "NOPE1234";
    }
    CHECK_THROWS_AS(load_checkpoint(p), LoadError);
    try {
        load_checkpoint(p);
    } catch (const LoadError& e) {
        CHECK(e.kind == LoadErrorKind::BadMagic);
    }

    save_checkpoint(p, demo_params(), "{}");
    {
        // Truncate mid-file.
        const auto bytes = read_all(p);
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    try {
        load_checkpoint(p);
        FAIL("expected truncation error");
    } catch (const LoadError& e) {
        CHECK(e.kind == LoadErrorKind::Truncated);
    }

    {
        // Bump the version field (bytes 4..7).
        save_checkpoint(p, demo_params(), "{}");
        auto bytes = read_all(p);
        bytes[4] = 99;
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        load_checkpoint(p);
        FAIL("expected version error");
    } catch (const LoadError& e) {
        CHECK(e.kind == LoadErrorKind::VersionMismatch);
    }
    fs::remove(p);
}

TEST_CASE("checkpoint load of a missing file reports truncation kind") {
    CHECK_THROWS_AS(load_checkpoint(tmp_path("does_not_exist.tdck")), LoadError);
}
