#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "piba/models/network.hpp"

namespace piba::models {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string config_json = "{}";
};

struct LoadedCheckpoint {
  std::unique_ptr<Network> net;
  CheckpointMeta meta;
};

std::vector<std::uint8_t> encode_checkpoint(const Network& net, const CheckpointMeta& meta);
LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                   std::optional<ModelKind> expected = std::nullopt);

void save_checkpoint(const Network& net, const CheckpointMeta& meta, const std::filesystem::path& path);
// Throws ErrorKind::validation when the stored kind differs from `expected`
// and ErrorKind::format when a parameter entry is missing or misshapen.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected = std::nullopt);

}  // namespace piba::models
