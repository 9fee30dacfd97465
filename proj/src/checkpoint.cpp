#include "tdyn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace tdyn {

namespace {

void put_bytes(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put(std::ofstream& os, T v) {
    put_bytes(os, &v, sizeof v);
}

void need(std::ifstream& is, void* p, std::size_t n, const std::string& what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw LoadError(LoadErrorKind::Truncated, "checkpoint truncated while reading " + what);
    }
}

template <typename T>
T get(std::ifstream& is, const std::string& what) {
    T v{};
    need(is, &v, sizeof v, what);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& trailer_json) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write("TDCK", 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params.entries()) {
        if (p.name.size() > 0xffff) throw std::runtime_error("parameter name too long: " + p.name);
        put<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
        put_bytes(os, p.name.data(), p.name.size());
        put<std::uint8_t>(os, static_cast<std::uint8_t>(p.value.shape.size()));
        for (auto d : p.value.shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        std::vector<float> f(p.value.data.size());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(p.value.data[i]);
        put_bytes(os, f.data(), f.size() * sizeof(float));
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(trailer_json.size()));
    put_bytes(os, trailer_json.data(), trailer_json.size());
    if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError(LoadErrorKind::Truncated, "cannot open checkpoint: " + path);
    char magic[4];
    need(is, magic, 4, "magic");
    if (std::memcmp(magic, "TDCK", 4) != 0) {
        throw LoadError(LoadErrorKind::BadMagic, "not a checkpoint file: " + path);
    }
    const auto version = get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion) {
        throw LoadError(LoadErrorKind::VersionMismatch,
                        "checkpoint version " + std::to_string(version) + " unsupported");
    }
    const auto count = get<std::uint32_t>(is, "count");
    LoadedCheckpoint out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint16_t>(is, "name length");
        std::string name(name_len, '\0');
        need(is, name.data(), name_len, "name");
        const auto rank = get<std::uint8_t>(is, "rank");
        std::vector<std::int64_t> shape(rank);
        for (auto& d : shape) d = get<std::uint32_t>(is, "dim");
        const std::int64_t n = shape_numel(shape);
        std::vector<float> f(static_cast<std::size_t>(n));
        need(is, f.data(), f.size() * sizeof(float), "data of " + name);
        Tensor t(shape);
        for (std::size_t j = 0; j < f.size(); ++j) t.data[j] = static_cast<double>(f[j]);
        out.params.add(name, std::move(t));
    }
    const auto trailer_len = get<std::uint32_t>(is, "trailer length");
    out.trailer_json.resize(trailer_len);
    need(is, out.trailer_json.data(), trailer_len, "trailer");
    return out;
}

} // namespace tdyn
