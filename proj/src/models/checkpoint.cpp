#include "piba/models/checkpoint.hpp"

#include "piba/error.hpp"
#include "piba/io/binary.hpp"

namespace piba::models {

namespace {

constexpr std::uint16_t kVersion = 1;

struct Entry {
  std::string name;
  Shape dims;
  std::uint64_t offset = 0;
  std::uint64_t count = 0;
};

std::unique_ptr<Network> blank(ModelKind kind, const std::vector<Entry>& entries) {
  if (kind != ModelKind::linear) return make_network(kind, 0);
  for (const auto& e : entries) {
    if (e.name == "fc.w" && e.dims.size() == 2) return std::make_unique<LinearModel>(Shape{e.dims[0]}, e.dims[1]);
  }
  throw Error(ErrorKind::format, "checkpoint is missing entry for layer fc");
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Network& net, const CheckpointMeta& meta) {
  io::ByteWriter w;
  w.tag("PIBC");
  w.u16(kVersion);
  w.str(kind_tag(net.kind()));
  w.u64(meta.seed);
  w.str(meta.config_json);
  w.u32(static_cast<std::uint32_t>(net.params().size()));
  std::uint64_t offset = 0;
  for (const auto& p : net.params()) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u64(offset);
    w.u64(p.value.size());
    offset += p.value.size();
  }
  w.u64(offset);
  for (const auto& p : net.params()) {
    for (double v : p.value.data()) w.f64(v);
  }
  return w.take();
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes, std::optional<ModelKind> expected) {
  io::ByteReader r(bytes);
  io::expect_header(r, "PIBC", kVersion);
  const ModelKind kind = parse_kind_tag(r.str());
  if (expected && *expected != kind) {
    throw Error(ErrorKind::validation, "checkpoint holds a " + std::string(kind_tag(kind)) + ", expected " +
                                           std::string(kind_tag(*expected)));
  }
  LoadedCheckpoint out;
  out.meta.seed = r.u64();
  out.meta.config_json = r.str();

  std::vector<Entry> entries(r.u32());
  for (auto& e : entries) {
    e.name = r.str();
    e.dims.resize(r.u32());
    for (auto& d : e.dims) d = r.u32();
    e.offset = r.u64();
    e.count = r.u64();
  }
  const std::uint64_t total = r.u64();
  if (total > r.remaining() / 8) throw Error(ErrorKind::truncated, "parameter blob is truncated");
  std::vector<double> blob(total);
  for (auto& v : blob) v = r.f64();
  if (!r.done()) throw Error(ErrorKind::format, "trailing bytes after parameter blob");

  out.net = blank(kind, entries);
  for (auto& p : out.net->params()) {
    const Entry* found = nullptr;
    for (const auto& e : entries) {
      if (e.name == p.name) found = &e;
    }
    if (!found) throw Error(ErrorKind::format, "checkpoint is missing entry for " + p.name);
    if (found->dims != p.value.shape() || found->count != p.value.size() || found->offset + found->count > total) {
      throw Error(ErrorKind::format, "checkpoint entry " + p.name + " has the wrong shape or range");
    }
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(found->offset), found->count, p.value.data().begin());
    require_finite(p.value, p.name);
  }
  return out;
}

void save_checkpoint(const Network& net, const CheckpointMeta& meta, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(net, meta));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected) {
  return decode_checkpoint(io::read_file(path), expected);
}

}  // namespace piba::models
