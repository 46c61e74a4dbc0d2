// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "orthotune/checkpoint.hpp"
#include "orthotune/tensor.hpp"

namespace orthotune {

struct LabeledImage {
  Matrix image;       // patch_count x patch_dim
  std::size_t label;  // global class id
};

struct ClassPrototype {
  std::size_t class_id = 0;
  Matrix prototype;
  double noise_scale = 0.0;
};

struct DatasetOptions {
  std::size_t classes = 10;
  std::size_t shots = 16;
  std::size_t test_per_class = 60;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::size_t patch_dim = 8;
  double noise = 2.0;   // per-sample Gaussian perturbation
  double drift = 0.8;   // per-class offset between pretraining and downstream
  double shift = 0.8;   // offset shared by every downstream class
  std::uint64_t seed = 0;

  std::size_t patch_count() const { return grid_rows * grid_cols; }
};

// Downstream prototypes are the pretraining ones moved by a shared shift plus
// a per-class drift, so the pretrained model is good but not perfect on them.
struct FewShotSplit {
  std::size_t classes = 0;
  std::size_t shots = 0;
  std::vector<std::size_t> base_ids;  // first half
  std::vector<std::size_t> new_ids;   // second half
  std::vector<ClassPrototype> pretrain_prototypes;
  std::vector<ClassPrototype> prototypes;
  std::vector<LabeledImage> train;  // shots per base class
  std::vector<LabeledImage> base_test;
  std::vector<LabeledImage> new_test;
};

// Throws ContractError unless classes is even and >= 2 and shots >= 1.
FewShotSplit generate(const DatasetOptions& options);

// Abundant samples around the pretraining prototypes for every class.
std::vector<LabeledImage> pretraining_corpus(const FewShotSplit& split, std::size_t per_class,
                                             std::uint64_t seed);

// 2ab / (a + b); 0 when both are 0.
double harmonic_mean(double base_acc, double new_acc);

// Dataset file: images stacked per split plus a key=value manifest.
TensorFile dataset_to_tensors(const FewShotSplit& split);
FewShotSplit dataset_from_tensors(const TensorFile& file);

std::vector<Matrix> images_of(std::span<const LabeledImage> set);
std::vector<std::size_t> labels_of(std::span<const LabeledImage> set);

}  // namespace orthotune
