// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "orthotune/checkpoint.hpp"
#include "orthotune/dataset.hpp"
#include "orthotune/error.hpp"
#include "test_util.hpp"

using namespace orthotune;
using orthotune::testing::tiny_data;

namespace {

bool same_set(const std::vector<LabeledImage>& a, const std::vector<LabeledImage>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].label != b[i].label || !(a[i].image == b[i].image)) return false;
  return true;
}

bool same_split(const FewShotSplit& a, const FewShotSplit& b) {
  if (a.classes != b.classes || a.shots != b.shots || a.base_ids != b.base_ids || a.new_ids != b.new_ids) return false;
  for (std::size_t c = 0; c < a.classes; ++c) {
    if (!(a.prototypes[c].prototype == b.prototypes[c].prototype)) return false;
    if (!(a.pretrain_prototypes[c].prototype == b.pretrain_prototypes[c].prototype)) return false;
  }
  return same_set(a.train, b.train) && same_set(a.base_test, b.base_test) && same_set(a.new_test, b.new_test);
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("split sizes and class ids") {
  const DatasetOptions o = tiny_data(6);
  const FewShotSplit s = generate(o);
  CHECK(s.base_ids == std::vector<std::size_t>{0, 1, 2});
  CHECK(s.new_ids == std::vector<std::size_t>{3, 4, 5});
  CHECK(s.train.size() == 3 * o.shots);
  CHECK(s.base_test.size() == 3 * o.test_per_class);
  CHECK(s.new_test.size() == 3 * o.test_per_class);
  CHECK(s.prototypes.size() == 6);
  CHECK(s.pretrain_prototypes.size() == 6);

  std::map<std::size_t, std::size_t> per_class;
  for (const auto& x : s.train) {
    CHECK(x.label < 3);
    CHECK(x.image.rows() == o.patch_count());
    CHECK(x.image.cols() == o.patch_dim);
    ++per_class[x.label];
  }
  for (const auto& [id, n] : per_class) CHECK(n == o.shots);
  for (const auto& x : s.base_test) CHECK(x.label < 3);
  for (const auto& x : s.new_test) {
    CHECK(x.label >= 3);
    CHECK(x.label < 6);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  CHECK(same_split(generate(tiny_data(4, 9)), generate(tiny_data(4, 9))));
  CHECK_FALSE(same_split(generate(tiny_data(4, 9)), generate(tiny_data(4, 10))));
}

TEST_CASE("zero noise reproduces the downstream prototype exactly") {
  DatasetOptions o = tiny_data();
  o.noise = 0.0;
  const FewShotSplit s = generate(o);
  for (const auto* set : {&s.train, &s.base_test, &s.new_test})
    for (const auto& x : *set) CHECK(x.image == s.prototypes[x.label].prototype);
}

TEST_CASE("zero drift and shift keep pretraining and downstream prototypes equal") {
  DatasetOptions o = tiny_data();
  o.drift = 0.0;
  o.shift = 0.0;
  const FewShotSplit s = generate(o);
  for (std::size_t c = 0; c < s.classes; ++c) CHECK(s.prototypes[c].prototype == s.pretrain_prototypes[c].prototype);
}

TEST_CASE("pretraining prototypes respect the separation floor") {
  const DatasetOptions o = tiny_data(8, 3);
  const FewShotSplit s = generate(o);
  const double floor = 0.5 * std::sqrt(2.0 * static_cast<double>(o.patch_count() * o.patch_dim));
  for (std::size_t a = 0; a < s.classes; ++a)
    for (std::size_t b = a + 1; b < s.classes; ++b)
      CHECK(frobenius_norm(subtract(s.pretrain_prototypes[a].prototype, s.pretrain_prototypes[b].prototype)) >= floor);
}

TEST_CASE("invalid options are contract errors") {
  auto with = [](auto edit) {
    DatasetOptions o = tiny_data();
    edit(o);
    return o;
  };
  CHECK_THROWS_AS(generate(with([](DatasetOptions& o) { o.classes = 3; })), ContractError);
  CHECK_THROWS_AS(generate(with([](DatasetOptions& o) { o.classes = 0; })), ContractError);
  CHECK_THROWS_AS(generate(with([](DatasetOptions& o) { o.shots = 0; })), ContractError);
  CHECK_THROWS_AS(generate(with([](DatasetOptions& o) { o.test_per_class = 0; })), ContractError);
  CHECK_THROWS_AS(generate(with([](DatasetOptions& o) { o.grid_rows = 0; })), ContractError);
  CHECK_THROWS_AS(generate(with([](DatasetOptions& o) { o.noise = -1.0; })), ContractError);
}

TEST_CASE("pretraining corpus covers every class, interleaved") {
  const FewShotSplit s = generate(tiny_data(4));
  const auto corpus = pretraining_corpus(s, 5, 1);
  REQUIRE(corpus.size() == 20);
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(corpus[i].label == i % 4);
  const auto again = pretraining_corpus(s, 5, 1);
  CHECK(same_set(corpus, again));
  CHECK_FALSE(same_set(corpus, pretraining_corpus(s, 5, 2)));
}

TEST_CASE("harmonic mean reproduces the published rows") {
  struct Row {
    double base, novel, hm;
  };
  const Row rows[] = {{78.10, 70.35, 74.02}, {98.17, 94.03, 96.06}, {95.60, 97.70, 96.64},
                      {79.40, 73.87, 76.54}, {97.60, 75.53, 85.16}, {90.50, 91.17, 90.83},
                      {41.93, 36.87, 39.24}, {82.47, 79.33, 80.87}, {82.40, 65.33, 72.88},
                      {93.27, 79.00, 85.54}, {86.33, 78.87, 82.43}};
  double mean_hm = 0.0;
  for (const Row& r : rows) {
    CAPTURE(r.base);
    CHECK(std::abs(harmonic_mean(r.base, r.novel) - r.hm) <= 0.01);
    mean_hm += harmonic_mean(r.base, r.novel) / std::size(rows);
  }
  // The average row is the mean of per-dataset HMs, not the HM of the
  // averaged accuracies (that would be 80.17).
  CHECK(std::abs(mean_hm - 80.02) <= 0.01);
  CHECK(std::abs(harmonic_mean(84.16, 76.55) - 80.02) > 0.1);
  CHECK(harmonic_mean(0.0, 0.0) == 0.0);
  CHECK(harmonic_mean(50.0, 50.0) == 50.0);
  CHECK(harmonic_mean(100.0, 0.0) == 0.0);
}

TEST_CASE("dataset tensors round trip through the container") {
  const FewShotSplit s = generate(tiny_data(4, 2));
  const FewShotSplit back = dataset_from_tensors(decode_tensor_file(encode_tensor_file(dataset_to_tensors(s))));
  CHECK(same_split(s, back));
  CHECK(back.prototypes[0].noise_scale == s.prototypes[0].noise_scale);

  TensorFile wrong = dataset_to_tensors(s);
  wrong.set("kind", "model");
  CHECK_THROWS_AS(dataset_from_tensors(wrong), CompatibilityError);
}

TEST_CASE("images_of and labels_of preserve order") {
  const FewShotSplit s = generate(tiny_data());
  const auto imgs = images_of(s.train);
  const auto labels = labels_of(s.train);
  REQUIRE(imgs.size() == s.train.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    CHECK(imgs[i] == s.train[i].image);
    CHECK(labels[i] == s.train[i].label);
  }
}

}  // TEST_SUITE
