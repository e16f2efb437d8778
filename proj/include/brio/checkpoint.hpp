#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "brio/model.hpp"

namespace brio::model {

/// Complete training state: parameters, Adam moments (empty before the
/// first update) and the optimizer step counter.
struct Checkpoint {
    ModelConfig config;
    Parameters params;
    std::uint64_t step_count = 0;
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;

    static Checkpoint fresh(const ModelConfig& cfg, std::uint64_t seed);
    bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::string_view kCheckpointMagic = "BRIOCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///   magic[8] | u32 version | u64 x 8 config extents | f64 dropout | u64 step_count
///   | u64 tensor count | per tensor: u64 name length, name bytes, u64 rank,
///   u64 extents..., f64 values...
/// Adam moments follow the parameters as "adam.m/<name>" and "adam.v/<name>".
std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace brio::model
