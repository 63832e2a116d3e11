#include "piba/cli/map_file.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "piba/error.hpp"
#include "piba/io/binary.hpp"

namespace piba::cli {

std::vector<std::uint8_t> encode_map(const AttributionMap& map) {
  io::ByteWriter w;
  w.tag("PIBM");
  w.u16(kMapVersion);
  w.u32(static_cast<std::uint32_t>(map.values.rank()));
  for (std::size_t d : map.values.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : map.values.data()) w.f32(static_cast<float>(v));
  w.str(map.provenance);
  return w.take();
}

AttributionMap decode_map(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  io::expect_header(r, "PIBM", kMapVersion);
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 4) throw Error(ErrorKind::format, "map rank " + std::to_string(rank) + " out of range");
  Shape shape;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) throw Error(ErrorKind::format, "map has a zero dimension");
    shape.push_back(d);
    count *= d;
  }
  if (count > r.remaining() / 4) throw Error(ErrorKind::truncated, "map values run past the end of the file");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = r.f32();
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::validation, "map value " + std::to_string(v) + " at " + std::to_string(i) +
                                             " outside [0,1]");
    }
    values[i] = v;
  }
  AttributionMap map{Tensor(std::move(shape), std::move(values)), r.str()};
  if (!r.done()) throw Error(ErrorKind::format, "trailing bytes after map");
  return map;
}

void write_map(const AttributionMap& map, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_map(map));
}

AttributionMap read_map(const std::filesystem::path& path) {
  try {
    return decode_map(io::read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what(), e.stage());
  }
}

std::vector<std::uint8_t> render_heatmap(const Tensor& map, std::size_t scale) {
  if (map.rank() != 2) throw Error(ErrorKind::shape, "heatmaps need a 2-D map, got " + shape_string(map.shape()));
  if (scale == 0) throw Error(ErrorKind::invalid_argument, "heatmap scale must be positive");
  const std::size_t h = map.dim(0), w = map.dim(1);
  const std::string header = "P5\n" + std::to_string(w * scale) + " " + std::to_string(h * scale) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + h * w * scale * scale);
  for (std::size_t y = 0; y < h * scale; ++y) {
    for (std::size_t x = 0; x < w * scale; ++x) {
      const double v = std::clamp(map[(y / scale) * w + x / scale], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
  }
  return out;
}

void write_heatmap(const Tensor& map, const std::filesystem::path& path, std::size_t scale) {
  io::write_file_atomic(path, render_heatmap(map, scale));
}

}  // namespace piba::cli
