#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "piba/attribution.hpp"

namespace piba::cli {

inline constexpr std::uint16_t kMapVersion = 1;

// "PIBM", u16 version, u32 rank, u32 dims, f32 values, u32-length provenance JSON.
std::vector<std::uint8_t> encode_map(const AttributionMap& map);
// Throws validation when a value is non-finite or outside [0,1].
AttributionMap decode_map(std::span<const std::uint8_t> bytes);

void write_map(const AttributionMap& map, const std::filesystem::path& path);
AttributionMap read_map(const std::filesystem::path& path);

// Binary PGM (P5) of a 2-D map, pixel = round(255 * score), each cell drawn as a scale x scale block.
std::vector<std::uint8_t> render_heatmap(const Tensor& map, std::size_t scale = 1);
void write_heatmap(const Tensor& map, const std::filesystem::path& path, std::size_t scale = 1);

}  // namespace piba::cli
