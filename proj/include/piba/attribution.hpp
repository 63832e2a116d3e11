#pragma once

#include <string>

#include "piba/numcore/tensor.hpp"

namespace piba {

// Per-input-element importance in [0,1]. Provenance is a JSON object string
// (method, seeds, config hash) carried into map files.
struct AttributionMap {
  Tensor values;
  std::string provenance = "{}";
};

// Min-max normalization to [0,1]; a flat input (range below 1e-12 of its
// magnitude) becomes all 0.5.
Tensor normalize_minmax(const Tensor& t);

// Mean over the leading (channel) axis: [C, ...] -> [...].
Tensor channel_mean(const Tensor& t);
// Mean over the trailing axis: [L, D] -> [L].
Tensor feature_mean(const Tensor& t);

// Bilinear resize of a [H,W] plane with half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& plane, std::size_t out_h, std::size_t out_w);
// Linear resize of a [L] vector with half-pixel centers.
Tensor resize_linear(const Tensor& v, std::size_t out_len);

}  // namespace piba
