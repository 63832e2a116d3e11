#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "piba/error.hpp"
#include "piba/io/binary.hpp"
#include "piba/synthdata/datasets.hpp"

using namespace piba;
using namespace piba::synth;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "piba_test_synthdata";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ErrorKind load_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_dataset(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("decode unexpectedly succeeded");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("patch dataset construction") {
  const auto set = gen_patch_dataset(7, {300, 100, 100});
  const auto& train = set.split(Split::train);
  REQUIRE(train.size() == 300);
  CHECK(train.images.shape() == Shape{300, 1, 16, 16});

  SUBCASE("class balance within one") {
    int counts[3] = {0, 0, 0};
    for (int l : train.labels) counts[l]++;
    for (int c : counts) CHECK(std::abs(c - 100) <= 1);
  }
  SUBCASE("bbox is brighter than background and small") {
    for (Split s : kSplits) {
      const auto& sp = set.split(s);
      for (std::size_t i = 0; i < sp.size(); ++i) {
        const auto& b = sp.bboxes[i];
        CHECK(static_cast<double>(b.area()) / 256.0 < 0.33);
        CHECK(b.top + b.height <= 16);
        CHECK(b.left + b.width <= 16);
        double in = 0, out = 0;
        for (std::size_t r = 0; r < 16; ++r) {
          for (std::size_t c = 0; c < 16; ++c) {
            (b.contains(r, c) ? in : out) += sp.images[i * 256 + r * 16 + c];
          }
        }
        CHECK(in / 16.0 > out / 240.0);
      }
    }
  }
  SUBCASE("texture fixes the label") {
    for (std::size_t i = 0; i < 30; ++i) {
      const auto& b = train.bboxes[i];
      int lit = 0;
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 4; ++c) lit += train.images[i * 256 + (b.top + r) * 16 + b.left + c] == 1.0;
      }
      const int expected[] = {12, 16, 8};
      CHECK(lit == expected[train.labels[i]]);
    }
  }
  SUBCASE("values are in range and exactly representable as f32") {
    for (double v : train.images.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
  }
  SUBCASE("deterministic") {
    CHECK(encode_dataset(set) == encode_dataset(gen_patch_dataset(7, {300, 100, 100})));
    CHECK_FALSE(encode_dataset(set) == encode_dataset(gen_patch_dataset(8, {300, 100, 100})));
  }
}

TEST_CASE("patch location is independent of label") {
  const auto set = gen_patch_dataset(11, {1000, 1, 1});
  const auto& sp = set.split(Split::train);
  double table[4][3] = {};
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const auto& b = sp.bboxes[i];
    const int q = (b.top * 2 + 3 >= 16 ? 2 : 0) + (b.left * 2 + 3 >= 16 ? 1 : 0);
    table[q][sp.labels[i]] += 1.0;
  }
  double rows[4] = {}, cols[3] = {}, n = 0;
  for (int q = 0; q < 4; ++q) {
    for (int l = 0; l < 3; ++l) {
      rows[q] += table[q][l];
      cols[l] += table[q][l];
      n += table[q][l];
    }
  }
  double chi2 = 0;
  for (int q = 0; q < 4; ++q) {
    for (int l = 0; l < 3; ++l) {
      const double e = rows[q] * cols[l] / n;
      chi2 += (table[q][l] - e) * (table[q][l] - e) / e;
    }
  }
  CHECK(chi_square_sf_even(chi2, 6) > 0.01);
}

TEST_CASE("chi-square survival matches reference values") {
  // closed form for 2 dof is exp(-x/2)
  CHECK(chi_square_sf_even(3.0, 2) == doctest::Approx(std::exp(-1.5)).epsilon(1e-14));
  // 6 dof, x = 16.8119 is the 1% critical value
  CHECK(chi_square_sf_even(16.8119, 6) == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("token dataset construction") {
  const auto set = gen_token_dataset(3, {400, 100, 100});
  for (Split s : kSplits) {
    const auto& sp = set.split(s);
    for (std::size_t i = 0; i < sp.size(); ++i) {
      const auto& seq = sp.sequences[i];
      REQUIRE(seq.size() == kSeqLen);
      int pos = 0, neg = 0;
      for (auto t : seq) {
        CHECK(t != kUnknownToken);
        CHECK(t < kVocab);
        pos += is_pos_token(t);
        neg += is_neg_token(t);
      }
      CHECK(pos != neg);
      CHECK(pos + neg >= 1);
      CHECK(pos + neg <= 4);
      CHECK(sp.labels[i] == (pos > neg ? 0 : 1));
      CHECK(sp.key_positions[i].size() == static_cast<std::size_t>(pos + neg));
      for (auto p : sp.key_positions[i]) CHECK((is_pos_token(seq[p]) || is_neg_token(seq[p])));
    }
  }
  CHECK(set == gen_token_dataset(3, {400, 100, 100}));
}

TEST_CASE("majority rule") {
  std::vector<std::uint32_t> seq(kSeqLen, 20);
  seq[0] = 1;
  seq[5] = 2;
  seq[9] = 5;
  seq[30] = 7;
  CHECK(majority_label(seq) == 0);
  seq[0] = 8;
  seq[5] = 9;
  CHECK(majority_label(seq) == 1);
}

TEST_CASE("dataset files") {
  const auto patch = gen_patch_dataset(5, {20, 5, 5});
  const auto token = gen_token_dataset(5, {20, 5, 5});

  SUBCASE("round trip is exact") {
    const auto pp = temp_path("patch.piba");
    save_dataset(patch, pp);
    const auto back = load_dataset(pp);
    REQUIRE(std::holds_alternative<PatchImageSet>(back));
    CHECK(std::get<PatchImageSet>(back) == patch);
    CHECK(io::read_file(pp) == encode_dataset(back));

    const auto tp = temp_path("token.piba");
    save_dataset(token, tp);
    CHECK(std::get<TokenSeqSet>(load_dataset(tp)) == token);
  }
  SUBCASE("distinct corruption errors") {
    auto bytes = encode_dataset(patch);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(load_error(bad_magic) == ErrorKind::bad_magic);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK(load_error(bad_version) == ErrorKind::bad_version);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 7);
    CHECK(load_error(truncated) == ErrorKind::truncated);
    truncated.resize(3);
    CHECK(load_error(truncated) == ErrorKind::truncated);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset(temp_path("nope.piba")), Error);
  }
}

TEST_CASE("blur") {
  SUBCASE("constant image unchanged") {
    const Tensor img({1, 16, 16}, 0.37);
    const Tensor out = blur_image(img, 5, 2.0);
    for (double v : out.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
  }
  SUBCASE("tiny sigma is identity") {
    const auto set = gen_patch_dataset(1, {3, 1, 1});
    const Tensor img = set.split(Split::train).image(0);
    const Tensor out = blur_image(img, 5, 1e-3);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(out[i] - img[i]) < 1e-6);
    CHECK(blur_image(img, 5, 0.0) == img);
  }
  SUBCASE("impulse response is the normalized 2-D gaussian") {
    Tensor img({9, 9}, 0.0);
    img[4 * 9 + 4] = 1.0;
    const Tensor out = blur_image(img, 5, 2.0);
    double total = 0;
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) total += std::exp(-(dx * dx + dy * dy) / 8.0);
    }
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 9; ++c) {
        const int dy = r - 4, dx = c - 4;
        const double expect = std::abs(dy) <= 2 && std::abs(dx) <= 2 ? std::exp(-(dx * dx + dy * dy) / 8.0) / total : 0.0;
        CHECK(out[static_cast<std::size_t>(r * 9 + c)] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
  SUBCASE("output stays inside the input range") {
    const auto set = gen_patch_dataset(2, {4, 1, 1});
    const Tensor img = set.split(Split::train).image(1);
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    const Tensor out = blur_image(img, 5, 2.0);
    for (double v : out.data()) {
      CHECK(v >= *lo - 1e-12);
      CHECK(v <= *hi + 1e-12);
    }
  }
  SUBCASE("even kernel rejected") {
    CHECK_THROWS_AS(blur_image(Tensor({4, 4}), 4, 1.0), Error);
  }
}
