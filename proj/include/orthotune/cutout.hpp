// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "orthotune/encoder.hpp"
#include "orthotune/tensor.hpp"

namespace orthotune {

// Cosine similarity of each frozen patch token with a class text embedding,
// laid out on the patch grid.
struct SimilarityMap {
  Matrix grid;
};

// Cosines of each row of tokens (patch_count x d) with text (1 x d, any
// nonzero norm), reshaped to rows x cols. Zero-norm tokens score 0.
SimilarityMap similarity_from_tokens(const Matrix& tokens, const Matrix& text, std::size_t rows,
                                     std::size_t cols);

SimilarityMap similarity_map(const DualEncoder& model, const Matrix& image, std::size_t class_id);
// One map per image, sharing the forward passes.
std::vector<SimilarityMap> similarity_maps(const DualEncoder& model, std::span<const Matrix> images,
                                           std::span<const std::size_t> class_ids);

// Flat indices of the k largest cells, ties to the lower index, in rank order.
std::vector<std::size_t> top_k_cells(const SimilarityMap& map, std::size_t k);

// Zeroes the patch rows of the k most similar cells. Throws ContractError if
// k exceeds the patch count, DimensionError if map and image disagree.
Matrix apply_cutout(const Matrix& image, const SimilarityMap& map, std::size_t k);

struct CutoutPolicy {
  std::size_t k_min = 2;
  std::size_t k_max = 5;
  std::uint64_t seed = 0;

  void validate(std::size_t patch_count) const;
};

// Uniform on {k_min, ..., k_max}.
std::size_t sample_k(const CutoutPolicy& policy, std::mt19937_64& rng);

}  // namespace orthotune
