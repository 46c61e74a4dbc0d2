// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "orthotune/adapters.hpp"
#include "orthotune/tape.hpp"
#include "orthotune/tensor.hpp"

namespace orthotune {

struct EncoderConfig {
  std::size_t embed_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::size_t patch_dim = 8;  // raw values per patch
  std::size_t context_length = 16;
  std::size_t classes = 10;

  std::size_t patch_count() const { return grid_rows * grid_cols; }
  // SOS, EOS, context tokens, one token per class.
  std::size_t vocab_size() const { return classes + context_length + 2; }
  // [SOS, ctx_1..ctx_M, class, EOS]
  std::size_t text_length() const { return context_length + 3; }
  std::size_t image_length() const { return patch_count() + 1; }

  // Throws ContractError on inconsistent settings.
  void validate() const;
};

struct TransformerBlock {
  Matrix ln1_gain, ln1_bias;
  FrozenLinear query, key, value, out;
  Matrix ln2_gain, ln2_bias;
  FrozenLinear fc1;  // d -> ffn_hidden, adapter slot
  FrozenLinear fc2;  // ffn_hidden -> d, adapter slot
};

struct EncoderBranch {
  Matrix positions;  // sequence length x d
  std::vector<TransformerBlock> blocks;
  Matrix ln_final_gain, ln_final_bias;
  Matrix projection;  // d x d into the joint space
};

// Selects which branches receive adapters.
struct AdapterTargets {
  bool image = true;
  bool text = true;
};

// Miniature image/text dual encoder. Images are patch grids stored as
// patch_count x patch_dim matrices (patches in row-major grid order).
struct DualEncoder {
  EncoderConfig config;
  FrozenLinear patch_projection;  // patch_dim -> d, never adapted
  Matrix class_token;             // 1 x d
  EncoderBranch image;
  Matrix token_table;  // vocab x d
  EncoderBranch text;
  Matrix logit_scale;  // 1x1, log(1/tau)

  static DualEncoder init(const EncoderConfig& config, std::uint64_t seed);

  double temperature() const;

  // Every pretrained tensor under a stable dotted name, in a fixed order.
  void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  // Every FFN fully-connected layer ("image.blocks.0.fc1", ...).
  void for_each_ffn(const std::function<void(const std::string&, FrozenLinear&)>& fn);
  void for_each_ffn(const std::function<void(const std::string&, const FrozenLinear&)>& fn) const;

  // Fills every targeted FFN slot with a fresh adapter (identity orthogonal,
  // zero-update low-rank) and clears the others.
  void attach_adapters(AdapterMode mode, AdapterTargets targets, std::mt19937_64& rng,
                       std::size_t rank = LowRankAdapter::kDefaultRank);
  void clear_adapters();
  std::size_t trainable_parameter_count() const;

  // Replaces each FFN weight by its effective weight and drops the adapters.
  DualEncoder merged() const;
};

struct ImageEncoding {
  Var embeddings;    // batch x d, unit rows (f_v)
  Var patch_tokens;  // (batch * patch_count) x d, final layer, projected
};

ImageEncoding encode_image(ParamBinder& binder, const DualEncoder& model,
                           std::span<const Matrix> images, bool use_adapters);
// One unit-norm embedding per requested class (f_t).
Var encode_text(ParamBinder& binder, const DualEncoder& model,
                std::span<const std::size_t> class_ids, bool use_adapters);

// Tape-free conveniences.
Matrix encode_image(const DualEncoder& model, std::span<const Matrix> images, bool use_adapters);
Matrix encode_text(const DualEncoder& model, std::span<const std::size_t> class_ids,
                   bool use_adapters);

// sim(f_t . f_v) / tau as a batch x classes matrix.
Var similarity_logits(Var text_features, Var image_features, double tau);
Matrix similarity_logits(const Matrix& text_features, const Matrix& image_features, double tau);

// Per-image softmax over classes of cosine similarity / tau.
Matrix class_probabilities(const Matrix& text_features, const Matrix& image_features, double tau);

}  // namespace orthotune
