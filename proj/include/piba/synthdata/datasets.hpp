#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "piba/numcore/tensor.hpp"

namespace piba::synth {

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kPatchSide = 4;
inline constexpr std::size_t kNumTextures = 3;
inline constexpr std::size_t kSeqLen = 32;
inline constexpr std::uint32_t kVocab = 64;
inline constexpr std::uint32_t kUnknownToken = 0;

enum class Split : std::uint32_t { train = 0, val = 1, test = 2 };
inline constexpr std::array<Split, 3> kSplits = {Split::train, Split::val, Split::test};
const char* split_name(Split s);

enum class Texture { cross = 0, solid = 1, stripes = 2 };

struct BBox {
  std::size_t top = 0, left = 0, height = 0, width = 0;

  bool contains(std::size_t r, std::size_t c) const {
    return r >= top && r < top + height && c >= left && c < left + width;
  }
  std::size_t area() const { return height * width; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct SplitSizes {
  std::size_t train = 300, val = 100, test = 100;
  std::size_t of(Split s) const { return s == Split::train ? train : s == Split::val ? val : test; }
};

struct PatchSplit {
  Tensor images;  // [N,1,16,16]
  std::vector<int> labels;
  std::vector<BBox> bboxes;

  std::size_t size() const { return labels.size(); }
  Tensor image(std::size_t i) const { return images.slice(i); }  // [1,16,16]
  friend bool operator==(const PatchSplit&, const PatchSplit&) = default;
};

struct PatchImageSet {
  std::uint64_t seed = 0;
  std::array<PatchSplit, 3> splits;

  const PatchSplit& split(Split s) const { return splits[static_cast<std::size_t>(s)]; }
  PatchSplit& split(Split s) { return splits[static_cast<std::size_t>(s)]; }
  friend bool operator==(const PatchImageSet&, const PatchImageSet&) = default;
};

struct TokenSplit {
  std::vector<std::vector<std::uint32_t>> sequences;  // each of length kSeqLen
  std::vector<int> labels;
  std::vector<std::vector<std::uint32_t>> key_positions;

  std::size_t size() const { return labels.size(); }
  friend bool operator==(const TokenSplit&, const TokenSplit&) = default;
};

struct TokenSeqSet {
  std::uint64_t seed = 0;
  std::array<TokenSplit, 3> splits;

  const TokenSplit& split(Split s) const { return splits[static_cast<std::size_t>(s)]; }
  TokenSplit& split(Split s) { return splits[static_cast<std::size_t>(s)]; }
  friend bool operator==(const TokenSeqSet&, const TokenSeqSet&) = default;
};

using Dataset = std::variant<PatchImageSet, TokenSeqSet>;

bool is_pos_token(std::uint32_t id);
bool is_neg_token(std::uint32_t id);
// 0 when POS tokens outnumber NEG tokens, else 1.
int majority_label(const std::vector<std::uint32_t>& seq);

// Paints the 4x4 texture patch with its top-left corner at (top, left) onto a 16x16 plane.
void paint_patch(std::span<double> plane, Texture texture, std::size_t top, std::size_t left);

PatchImageSet gen_patch_dataset(std::uint64_t seed, SplitSizes sizes = {});
TokenSeqSet gen_token_dataset(std::uint64_t seed, SplitSizes sizes = {});

void save_dataset(const Dataset& set, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& set);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

// Separable Gaussian blur over the last two axes with reflect-101 borders.
// Throws invalid_argument for an even kernel size or negative sigma.
Tensor blur_image(const Tensor& img, std::size_t kernel_size, double sigma);
// Normalized 1-D Gaussian taps; sigma == 0 yields a delta.
std::vector<double> gaussian_taps(std::size_t kernel_size, double sigma);

// Survival function of the chi-square distribution with even degrees of freedom.
double chi_square_sf_even(double x, unsigned dof);

}  // namespace piba::synth
