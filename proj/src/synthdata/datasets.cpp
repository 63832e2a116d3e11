#include "piba/synthdata/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "piba/error.hpp"
#include "piba/io/binary.hpp"
#include "piba/numcore/rng.hpp"

namespace piba::synth {

namespace {

constexpr std::uint16_t kVersion = 1;
constexpr std::uint32_t kKindPatch = 0;
constexpr std::uint32_t kKindToken = 1;
constexpr std::uint32_t kFirstFiller = 11;

bool texture_on(Texture t, std::size_t r, std::size_t c) {
  switch (t) {
    case Texture::cross:
      return r == 1 || r == 2 || c == 1 || c == 2;
    case Texture::solid:
      return true;
    case Texture::stripes:
      return (r + c) % 4 < 2;
  }
  return false;
}

PatchSplit gen_patch_split(RngStream rng, std::size_t n) {
  PatchSplit out;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(i % kNumTextures);
  rng.shuffle(std::span(out.labels));

  const std::size_t plane = kImageSide * kImageSide;
  std::vector<double> pixels(n * plane);
  out.bboxes.resize(n);
  const std::size_t span = kImageSide - kPatchSide + 1;
  for (std::size_t i = 0; i < n; ++i) {
    auto img = std::span(pixels).subspan(i * plane, plane);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 0.3));
    const std::size_t top = rng.below(span);
    const std::size_t left = rng.below(span);
    paint_patch(img, static_cast<Texture>(out.labels[i]), top, left);
    out.bboxes[i] = BBox{top, left, kPatchSide, kPatchSide};
  }
  out.images = Tensor({n, 1, kImageSide, kImageSide}, std::move(pixels));
  return out;
}

TokenSplit gen_token_split(RngStream rng, std::size_t n) {
  TokenSplit out;
  out.sequences.reserve(n);
  out.labels.reserve(n);
  out.key_positions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint32_t> seq(kSeqLen);
    std::vector<std::uint32_t> keys;
    for (;;) {
      const std::size_t k = 1 + rng.below(4);
      std::size_t pos = 0;
      for (std::size_t j = 0; j < k; ++j) pos += rng.below(2);
      if (2 * pos == k) continue;
      for (auto& t : seq) t = kFirstFiller + static_cast<std::uint32_t>(rng.below(kVocab - kFirstFiller));
      auto where = rng.sample_without_replacement(kSeqLen, k);
      keys.assign(where.begin(), where.end());
      for (std::size_t j = 0; j < k; ++j) {
        const auto base = j < pos ? 1u : 6u;
        seq[keys[j]] = base + static_cast<std::uint32_t>(rng.below(5));
      }
      std::sort(keys.begin(), keys.end());
      break;
    }
    out.labels.push_back(majority_label(seq));
    out.sequences.push_back(std::move(seq));
    out.key_positions.push_back(std::move(keys));
  }
  return out;
}

void validate(const PatchSplit& s) {
  if (s.images.rank() != 4 || s.images.dim(1) != 1 || s.images.dim(2) != kImageSide ||
      s.images.dim(3) != kImageSide || s.images.dim(0) != s.labels.size() || s.bboxes.size() != s.labels.size()) {
    throw Error(ErrorKind::format, "patch split sections disagree on sample count or shape");
  }
  for (double v : s.images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::format, "image value outside [0,1]");
  }
  for (int l : s.labels) {
    if (l < 0 || l >= static_cast<int>(kNumTextures)) throw Error(ErrorKind::format, "label out of range");
  }
  for (const auto& b : s.bboxes) {
    if (b.height == 0 || b.width == 0 || b.top + b.height > kImageSide || b.left + b.width > kImageSide) {
      throw Error(ErrorKind::format, "bbox outside image");
    }
  }
}

void validate(const TokenSplit& s) {
  if (s.sequences.size() != s.labels.size() || s.key_positions.size() != s.labels.size()) {
    throw Error(ErrorKind::format, "token split sections disagree on sample count");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.sequences[i].size() != kSeqLen) throw Error(ErrorKind::format, "sequence length mismatch");
    for (auto t : s.sequences[i]) {
      if (t >= kVocab) throw Error(ErrorKind::format, "token id out of vocabulary");
    }
    for (auto p : s.key_positions[i]) {
      if (p >= kSeqLen) throw Error(ErrorKind::format, "key position out of range");
    }
    if (s.labels[i] != 0 && s.labels[i] != 1) throw Error(ErrorKind::format, "label out of range");
  }
}

template <typename Fn>
void section(io::ByteWriter& w, std::string_view tag, Fn&& fill) {
  io::ByteWriter payload;
  fill(payload);
  w.tag(tag);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload.buffer());
}

std::uint32_t u32_of(std::size_t v) { return static_cast<std::uint32_t>(v); }

Split read_split(io::ByteReader& r) {
  const auto s = r.u32();
  if (s > 2) throw Error(ErrorKind::format, "unknown split id " + std::to_string(s));
  return static_cast<Split>(s);
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

bool is_pos_token(std::uint32_t id) { return id >= 1 && id <= 5; }
bool is_neg_token(std::uint32_t id) { return id >= 6 && id <= 10; }

int majority_label(const std::vector<std::uint32_t>& seq) {
  long balance = 0;
  for (auto t : seq) balance += is_pos_token(t) ? 1 : is_neg_token(t) ? -1 : 0;
  return balance > 0 ? 0 : 1;
}

void paint_patch(std::span<double> plane, Texture texture, std::size_t top, std::size_t left) {
  for (std::size_t r = 0; r < kPatchSide; ++r) {
    for (std::size_t c = 0; c < kPatchSide; ++c) {
      if (texture_on(texture, r, c)) plane[(top + r) * kImageSide + left + c] = 1.0;
    }
  }
}

PatchImageSet gen_patch_dataset(std::uint64_t seed, SplitSizes sizes) {
  if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0) {
    throw Error(ErrorKind::invalid_argument, "every split needs at least one sample");
  }
  PatchImageSet set;
  set.seed = seed;
  const RngStream root(seed, 0x5041544348ULL);
  for (Split s : kSplits) set.split(s) = gen_patch_split(root.split(static_cast<std::uint64_t>(s)), sizes.of(s));
  return set;
}

TokenSeqSet gen_token_dataset(std::uint64_t seed, SplitSizes sizes) {
  if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0) {
    throw Error(ErrorKind::invalid_argument, "every split needs at least one sample");
  }
  TokenSeqSet set;
  set.seed = seed;
  const RngStream root(seed, 0x544F4B454EULL);
  for (Split s : kSplits) set.split(s) = gen_token_split(root.split(static_cast<std::uint64_t>(s)), sizes.of(s));
  return set;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& set) {
  io::ByteWriter w;
  w.tag("PIBA");
  w.u16(kVersion);
  const bool patch = std::holds_alternative<PatchImageSet>(set);
  const std::uint64_t seed = patch ? std::get<PatchImageSet>(set).seed : std::get<TokenSeqSet>(set).seed;
  w.u32(patch ? kKindPatch : kKindToken);
  w.u32(static_cast<std::uint32_t>(seed & 0xffffffffu));
  w.u32(static_cast<std::uint32_t>(seed >> 32));
  w.u32(9);  // three sections per split

  for (Split s : kSplits) {
    const auto sid = static_cast<std::uint32_t>(s);
    if (patch) {
      const auto& sp = std::get<PatchImageSet>(set).split(s);
      section(w, "IMGS", [&](io::ByteWriter& p) {
        p.u32(sid);
        p.u32(u32_of(sp.size()));
        p.u32(u32_of(kImageSide));
        p.u32(u32_of(kImageSide));
        for (double v : sp.images.data()) p.f32(static_cast<float>(v));
      });
      section(w, "LABL", [&](io::ByteWriter& p) {
        p.u32(sid);
        p.u32(u32_of(sp.size()));
        for (int l : sp.labels) p.u32(static_cast<std::uint32_t>(l));
      });
      section(w, "BBOX", [&](io::ByteWriter& p) {
        p.u32(sid);
        p.u32(u32_of(sp.size()));
        for (const auto& b : sp.bboxes) {
          p.u32(u32_of(b.top));
          p.u32(u32_of(b.left));
          p.u32(u32_of(b.height));
          p.u32(u32_of(b.width));
        }
      });
    } else {
      const auto& sp = std::get<TokenSeqSet>(set).split(s);
      section(w, "SEQS", [&](io::ByteWriter& p) {
        p.u32(sid);
        p.u32(u32_of(sp.size()));
        p.u32(u32_of(kSeqLen));
        for (const auto& seq : sp.sequences) {
          for (auto t : seq) p.u32(t);
        }
      });
      section(w, "LABL", [&](io::ByteWriter& p) {
        p.u32(sid);
        p.u32(u32_of(sp.size()));
        for (int l : sp.labels) p.u32(static_cast<std::uint32_t>(l));
      });
      section(w, "KEYP", [&](io::ByteWriter& p) {
        p.u32(sid);
        p.u32(u32_of(sp.size()));
        for (const auto& k : sp.key_positions) {
          p.u32(u32_of(k.size()));
          for (auto pos : k) p.u32(pos);
        }
      });
    }
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  io::expect_header(r, "PIBA", kVersion);
  const std::uint32_t kind = r.u32();
  if (kind != kKindPatch && kind != kKindToken) throw Error(ErrorKind::format, "unknown dataset kind");
  const std::uint64_t seed = r.u32() | (static_cast<std::uint64_t>(r.u32()) << 32);
  const std::uint32_t count = r.u32();

  PatchImageSet patch;
  TokenSeqSet token;
  patch.seed = token.seed = seed;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string tag = r.tag();
    const std::uint32_t len = r.u32();
    io::ByteReader p(r.bytes(len));
    const Split s = read_split(p);
    const std::size_t n = p.u32();
    if (tag == "IMGS" && kind == kKindPatch) {
      const std::size_t h = p.u32(), w = p.u32();
      if (h != kImageSide || w != kImageSide) throw Error(ErrorKind::format, "unsupported image size");
      std::vector<double> px(n * h * w);
      for (auto& v : px) v = p.f32();
      patch.split(s).images = n == 0 ? Tensor() : Tensor({n, 1, h, w}, std::move(px));
    } else if (tag == "LABL") {
      std::vector<int> labels(n);
      for (auto& l : labels) l = static_cast<int>(p.u32());
      (kind == kKindPatch ? patch.split(s).labels : token.split(s).labels) = std::move(labels);
    } else if (tag == "BBOX" && kind == kKindPatch) {
      auto& boxes = patch.split(s).bboxes;
      boxes.resize(n);
      for (auto& b : boxes) {
        b.top = p.u32();
        b.left = p.u32();
        b.height = p.u32();
        b.width = p.u32();
      }
    } else if (tag == "SEQS" && kind == kKindToken) {
      const std::size_t len_seq = p.u32();
      auto& seqs = token.split(s).sequences;
      seqs.assign(n, std::vector<std::uint32_t>(len_seq));
      for (auto& seq : seqs) {
        for (auto& t : seq) t = p.u32();
      }
    } else if (tag == "KEYP" && kind == kKindToken) {
      auto& keys = token.split(s).key_positions;
      keys.resize(n);
      for (auto& k : keys) {
        k.resize(p.u32());
        for (auto& pos : k) pos = p.u32();
      }
    } else {
      throw Error(ErrorKind::format, "unexpected section " + tag);
    }
    if (!p.done()) throw Error(ErrorKind::format, "trailing bytes in section " + tag);
  }
  if (!r.done()) throw Error(ErrorKind::format, "trailing bytes after last section");

  if (kind == kKindPatch) {
    for (Split s : kSplits) validate(patch.split(s));
    return patch;
  }
  for (Split s : kSplits) validate(token.split(s));
  return token;
}

void save_dataset(const Dataset& set, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_dataset(set));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

std::vector<double> gaussian_taps(std::size_t kernel_size, double sigma) {
  if (kernel_size % 2 == 0) throw Error(ErrorKind::invalid_argument, "blur kernel size must be odd");
  if (!(sigma >= 0.0)) throw Error(ErrorKind::invalid_argument, "blur sigma must be non-negative");
  const auto radius = static_cast<long>(kernel_size / 2);
  std::vector<double> taps(kernel_size, 0.0);
  if (sigma == 0.0) {
    taps[static_cast<std::size_t>(radius)] = 1.0;
    return taps;
  }
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& t : taps) t /= total;
  return taps;
}

namespace {

std::size_t reflect101(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

}  // namespace

Tensor blur_image(const Tensor& img, std::size_t kernel_size, double sigma) {
  const auto taps = gaussian_taps(kernel_size, sigma);
  if (img.rank() < 2) throw Error(ErrorKind::shape, "blur needs at least two spatial axes");
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  const std::size_t planes = img.size() / (h * w);
  const long radius = static_cast<long>(kernel_size / 2);
  Tensor out(img.shape());
  std::vector<double> tmp(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const auto src = img.data().subspan(p * h * w, h * w);
    auto dst = out.data().subspan(p * h * w, h * w);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += taps[static_cast<std::size_t>(k + radius)] *
                 src[r * w + reflect101(static_cast<long>(c) + k, static_cast<long>(w))];
        }
        tmp[r * w + c] = acc;
      }
    }
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += taps[static_cast<std::size_t>(k + radius)] *
                 tmp[reflect101(static_cast<long>(r) + k, static_cast<long>(h)) * w + c];
        }
        dst[r * w + c] = acc;
      }
    }
  }
  return out;
}

double chi_square_sf_even(double x, unsigned dof) {
  if (dof == 0 || dof % 2 != 0) throw Error(ErrorKind::invalid_argument, "dof must be positive and even");
  if (x <= 0.0) return 1.0;
  const double half = x / 2.0;
  double term = 1.0, total = 1.0;
  for (unsigned k = 1; k < dof / 2; ++k) {
    term *= half / k;
    total += term;
  }
  return std::exp(-half) * total;
}

}  // namespace piba::synth
