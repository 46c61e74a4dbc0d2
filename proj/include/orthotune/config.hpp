// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "orthotune/dataset.hpp"
#include "orthotune/encoder.hpp"
#include "orthotune/trainer.hpp"

namespace orthotune {

// Everything a run needs. Text form is "key = value" per line, '#' starts a
// comment. Training keys follow the usual hyperparameter table names:
//
//   batch_size, optimizer (sgd), learning_rate, lr_scheduler (cosine),
//   warmup_epoch, warmup_type (constant), warmup_lr, epochs, lambda1,
//   lambda2, cutout_min, cutout_max, seed, adapter, branches
//
// plus model/data/pretraining keys (embed_dim, layers, heads, ffn_hidden,
// grid_rows, grid_cols, patch_dim, context_length, classes, shots,
// test_per_class, noise, drift, shift, data_seed, pretrain_steps,
// pretrain_batch_size, pretrain_learning_rate, pretrain_per_class,
// pretrain_seed).
struct RunConfig {
  EncoderConfig encoder;
  DatasetOptions dataset;
  PretrainConfig pretrain;
  TrainConfig train;

  RunConfig();
};

// Applies one key. Throws ContractError for unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_config(std::string_view text);
// Throws IoError naming the path when unreadable.
RunConfig load_config(const std::filesystem::path& path);

// Canonical snapshot, parseable by parse_config.
std::string render_config(const RunConfig& config);

std::string branches_name(const AdapterTargets& t);
AdapterTargets parse_branches(const std::string& name);

}  // namespace orthotune
