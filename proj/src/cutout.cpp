// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/cutout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "orthotune/error.hpp"

namespace orthotune {

SimilarityMap similarity_from_tokens(const Matrix& tokens, const Matrix& text, std::size_t rows,
                                     std::size_t cols) {
  if (tokens.rows() != rows * cols || text.rows() != 1 || text.cols() != tokens.cols()) {
    throw DimensionError("similarity_from_tokens: shapes disagree");
  }
  double tn = 0.0;
  for (double v : text.data()) tn += v * v;
  if (!(tn > 0.0)) throw ContractError("similarity_from_tokens: zero text embedding");
  tn = std::sqrt(tn);
  Matrix grid(rows, cols);
  for (std::size_t p = 0; p < tokens.rows(); ++p) {
    const auto tok = tokens.row(p);
    double dot = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < tok.size(); ++j) {
      dot += tok[j] * text[j];
      norm += tok[j] * tok[j];
    }
    const double cosine = norm > 0.0 ? dot / (std::sqrt(norm) * tn) : 0.0;
    grid[p] = std::clamp(cosine, -1.0, 1.0);
  }
  return SimilarityMap{std::move(grid)};
}

std::vector<SimilarityMap> similarity_maps(const DualEncoder& model, std::span<const Matrix> images,
                                           std::span<const std::size_t> class_ids) {
  if (images.size() != class_ids.size()) {
    throw DimensionError("similarity_maps: one class id per image required");
  }
  if (images.empty()) return {};
  const EncoderConfig& c = model.config;
  Tape tape;
  ParamBinder binder(tape, Trainable::kNothing);
  const Matrix text = encode_text(binder, model, class_ids, false).value();
  const Matrix tokens = encode_image(binder, model, images, false).patch_tokens.value();

  const std::size_t patches = c.patch_count();
  std::vector<SimilarityMap> maps;
  maps.reserve(images.size());
  for (std::size_t s = 0; s < images.size(); ++s) {
    Matrix own(patches, c.embed_dim);
    for (std::size_t p = 0; p < patches; ++p)
      for (std::size_t j = 0; j < c.embed_dim; ++j) own(p, j) = tokens(s * patches + p, j);
    Matrix t(1, c.embed_dim);
    for (std::size_t j = 0; j < c.embed_dim; ++j) t[j] = text(s, j);
    maps.push_back(similarity_from_tokens(own, t, c.grid_rows, c.grid_cols));
  }
  return maps;
}

SimilarityMap similarity_map(const DualEncoder& model, const Matrix& image, std::size_t class_id) {
  return similarity_maps(model, std::span<const Matrix>(&image, 1),
                         std::span<const std::size_t>(&class_id, 1))
      .front();
}

std::vector<std::size_t> top_k_cells(const SimilarityMap& map, std::size_t k) {
  const std::size_t n = map.grid.size();
  if (k > n) {
    throw ContractError("cutout k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " patches");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.grid[a] > map.grid[b]; });
  order.resize(k);
  return order;
}

Matrix apply_cutout(const Matrix& image, const SimilarityMap& map, std::size_t k) {
  if (image.rows() != map.grid.size()) {
    throw DimensionError("apply_cutout: image has " + std::to_string(image.rows()) + " patches, map has " +
                         std::to_string(map.grid.size()));
  }
  Matrix out = image;
  for (std::size_t p : top_k_cells(map, k)) {
    for (double& v : out.row(p)) v = 0.0;
  }
  return out;
}

void CutoutPolicy::validate(std::size_t patch_count) const {
  if (k_min > k_max || k_max > patch_count) {
    throw ContractError("cutout range [" + std::to_string(k_min) + ", " + std::to_string(k_max) +
                        "] invalid for " + std::to_string(patch_count) + " patches");
  }
}

std::size_t sample_k(const CutoutPolicy& policy, std::mt19937_64& rng) {
  if (policy.k_min > policy.k_max) throw ContractError("cutout k_min exceeds k_max");
  std::uniform_int_distribution<std::size_t> dist(policy.k_min, policy.k_max);
  return dist(rng);
}

}  // namespace orthotune
