#pragma once

#include <stdexcept>
#include <string>

#include "tdyn/nn.hpp"

namespace tdyn {

/// Load failure categories for binary formats.
enum class LoadErrorKind { BadMagic, Truncated, VersionMismatch, Corrupt };

class LoadError : public std::runtime_error {
public:
    LoadError(LoadErrorKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
    LoadErrorKind kind;
};

/// Checkpoint file layout (little-endian):
///   magic "TDCK", version u32, count u32,
///   per parameter: name_len u16, name bytes, rank u8, dims u32..., f32 data,
///   trailer: json_len u32, json bytes (may be "{}").
/// Values are stored as f32; loading widens back to f64 exactly, so
/// save -> load -> save reproduces identical bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& trailer_json = "{}");

struct LoadedCheckpoint {
    ParamSet params;
    std::string trailer_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace tdyn
