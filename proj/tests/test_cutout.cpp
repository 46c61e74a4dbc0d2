// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "orthotune/cutout.hpp"
#include "orthotune/error.hpp"
#include "test_util.hpp"

using namespace orthotune;
using orthotune::testing::random_images;
using orthotune::testing::random_matrix;
using orthotune::testing::randomize_adapters;
using orthotune::testing::tiny_config;

namespace {

// Brute force: a cell is selected iff fewer than k cells outrank it, where
// "outrank" means larger value, or equal value at a lower flat index.
std::set<std::size_t> rank_oracle(const Matrix& g, std::size_t k) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::size_t above = 0;
    for (std::size_t j = 0; j < g.size(); ++j)
      if (g[j] > g[i] || (g[j] == g[i] && j < i)) ++above;
    if (above < k) out.insert(i);
  }
  return out;
}

}  // namespace

TEST_SUITE("cutout") {

TEST_CASE("top-k agrees with the pairwise rank oracle on random integer maps") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> vals(-3, 3);  // plenty of ties
  for (int trial = 0; trial < 500; ++trial) {
    Matrix g(4, 4);
    for (double& v : g.data()) v = vals(rng);
    for (std::size_t k = 0; k <= 16; ++k) {
      const auto got = top_k_cells(SimilarityMap{g}, k);
      CHECK(got.size() == k);
      CHECK(std::set<std::size_t>(got.begin(), got.end()) == rank_oracle(g, k));
    }
  }
}

TEST_CASE("exhaustive 2x2 maps over three levels") {
  for (int code = 0; code < 81; ++code) {
    Matrix g(2, 2);
    int c = code;
    for (double& v : g.data()) {
      v = c % 3;
      c /= 3;
    }
    for (std::size_t k = 0; k <= 4; ++k) {
      const auto got = top_k_cells(SimilarityMap{g}, k);
      CHECK(std::set<std::size_t>(got.begin(), got.end()) == rank_oracle(g, k));
    }
  }
}

TEST_CASE("ties go to the lowest flat index") {
  const SimilarityMap flat{Matrix(3, 3, 0.5)};
  CHECK(top_k_cells(flat, 3) == std::vector<std::size_t>{0, 1, 2});
  const SimilarityMap m{Matrix{{0.1, 0.9}, {0.9, 0.2}}};
  CHECK(top_k_cells(m, 1) == std::vector<std::size_t>{1});
  CHECK(top_k_cells(m, 3) == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("cutout zeroes exactly the selected rows and copies the rest") {
  std::mt19937_64 rng(5);
  const Matrix image = random_matrix(rng, 16, 6);
  SimilarityMap map{random_matrix(rng, 4, 4)};
  for (std::size_t k = 0; k <= 16; ++k) {
    const Matrix out = apply_cutout(image, map, k);
    const auto chosen = top_k_cells(map, k);
    const std::set<std::size_t> cut(chosen.begin(), chosen.end());
    for (std::size_t p = 0; p < 16; ++p) {
      for (std::size_t j = 0; j < 6; ++j) {
        if (cut.count(p)) {
          CHECK(out(p, j) == 0.0);
        } else {
          CHECK(out(p, j) == image(p, j));
        }
      }
    }
  }
}

TEST_CASE("k beyond the patch count and shape mismatches are rejected") {
  const SimilarityMap map{Matrix(2, 2)};
  CHECK_THROWS_AS(top_k_cells(map, 5), ContractError);
  CHECK_THROWS_AS(apply_cutout(Matrix(5, 3), map, 1), DimensionError);
  CutoutPolicy p;
  CHECK_NOTHROW(p.validate(16));
  CHECK_THROWS_AS(p.validate(4), ContractError);
  p.k_min = 6;
  CHECK_THROWS_AS(p.validate(16), ContractError);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(sample_k(p, rng), ContractError);
}

TEST_CASE("similarity from tokens is the clamped cosine") {
  const Matrix tokens{{1, 0}, {0, 2}, {-3, 0}, {0, 0}};
  const Matrix text{{2, 0}};
  const SimilarityMap m = similarity_from_tokens(tokens, text, 2, 2);
  CHECK(m.grid.rows() == 2);
  CHECK(m.grid(0, 0) == doctest::Approx(1.0));
  CHECK(m.grid(0, 1) == 0.0);
  CHECK(m.grid(1, 0) == doctest::Approx(-1.0));
  CHECK(m.grid(1, 1) == 0.0);  // zero-norm token
  CHECK_THROWS_AS(similarity_from_tokens(tokens, Matrix(1, 2), 2, 2), ContractError);
  CHECK_THROWS_AS(similarity_from_tokens(tokens, text, 3, 2), DimensionError);
  CHECK_THROWS_AS(similarity_from_tokens(tokens, Matrix(1, 3, 1.0), 2, 2), DimensionError);

  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    const SimilarityMap r = similarity_from_tokens(random_matrix(rng, 6, 5), random_matrix(rng, 1, 5), 2, 3);
    for (double v : r.grid.data()) CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("model maps use the frozen weights and match the per-image form") {
  const EncoderConfig c = tiny_config();
  auto model = DualEncoder::init(c, 4);
  std::mt19937_64 rng(6);
  const auto images = random_images(rng, c, 3);
  const std::vector<std::size_t> ids{2, 0, 3};
  const auto before = similarity_maps(model, images, ids);
  REQUIRE(before.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(before[i].grid.rows() == c.grid_rows);
    CHECK(before[i].grid.cols() == c.grid_cols);
    CHECK(similarity_map(model, images[i], ids[i]).grid == before[i].grid);
  }
  model.attach_adapters(AdapterMode::kOrthogonal, {}, rng);
  randomize_adapters(model, rng, 0.5);
  const auto after = similarity_maps(model, images, ids);
  for (std::size_t i = 0; i < 3; ++i) CHECK(after[i].grid == before[i].grid);
  const std::vector<std::size_t> short_ids{0};
  CHECK_THROWS_AS(similarity_maps(model, images, short_ids), DimensionError);
}

TEST_CASE("sampled k is uniform over its range") {
  const CutoutPolicy p;
  std::mt19937_64 rng(p.seed);
  const int draws = 10000;
  std::vector<int> counts(p.k_max + 1, 0);
  for (int i = 0; i < draws; ++i) {
    const std::size_t k = sample_k(p, rng);
    REQUIRE(k >= p.k_min);
    REQUIRE(k <= p.k_max);
    ++counts[k];
  }
  const double bins = static_cast<double>(p.k_max - p.k_min + 1);
  const double expect = draws / bins;
  const double sigma = std::sqrt(draws * (1.0 / bins) * (1.0 - 1.0 / bins));
  for (std::size_t k = p.k_min; k <= p.k_max; ++k) CHECK(std::abs(counts[k] - expect) <= 3.0 * sigma);

  CutoutPolicy fixed{3, 3, 0};
  for (int i = 0; i < 10; ++i) CHECK(sample_k(fixed, rng) == 3);
}

}  // TEST_SUITE
