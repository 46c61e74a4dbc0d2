// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "orthotune/adapters.hpp"
#include "orthotune/cutout.hpp"
#include "orthotune/dataset.hpp"
#include "orthotune/encoder.hpp"
#include "orthotune/objective.hpp"

namespace orthotune {

// Desk defaults; the short large-model schedule is TrainConfig::short_schedule().
inline constexpr std::size_t kDeskEpochs = 50;
inline constexpr double kDeskLearningRate = 0.001;

struct TrainConfig {
  std::size_t epochs = kDeskEpochs;
  std::size_t batch_size = 4;
  double lr = kDeskLearningRate;
  std::size_t warmup_epochs = 1;
  double warmup_lr = kDeskLearningRate / 10;  // constant during warmup
  std::uint64_t seed = 0;
  LossWeights weights;
  AdapterMode adapter_mode = AdapterMode::kOrthogonal;
  CutoutPolicy cutout;
  AdapterTargets targets;

  // 5 epochs, batch 4, lr 1e-5, one constant warmup epoch at 1e-6.
  static TrainConfig short_schedule();
  void validate() const;
};

// Constant warmup_lr for progress < warmup_epochs, then cosine decay from lr
// to 0 over the remaining epochs. Throws ContractError outside [0, epochs].
double lr_at(const TrainConfig& config, double progress);

struct MetricRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double l_ce = 0.0;
  double l_cutout_ce = 0.0;
  double l_kl = 0.0;
  double l_cutout_kl = 0.0;
  double total = 0.0;
  double he_drift = 0.0;       // relative, first adapted layer
  double orth_residual = 0.0;  // max over orthogonal adapters; 0 otherwise
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,lr,l_ce,l_cutout_ce,l_kl,l_cutout_kl,total,he_drift,orth_residual";

std::string metrics_csv(std::span<const MetricRow> rows);
// Mean total loss per epoch, in epoch order.
std::vector<double> epoch_mean_totals(std::span<const MetricRow> rows);

// Largest absolute gradient entries of the distillation terms, split by
// branch. The detach contracts require the first two to be exactly zero.
struct DetachAudit {
  double kl_wrt_image = 0.0;
  double cutout_kl_wrt_text = 0.0;
  double kl_wrt_text = 0.0;
  double cutout_kl_wrt_image = 0.0;
};

struct StepLosses {
  double ce = 0.0, cutout_ce = 0.0, kl = 0.0, cutout_kl = 0.0, total = 0.0;
};

struct FinetuneResult {
  DualEncoder model;
  std::vector<MetricRow> metrics;
  std::string frozen_hash;  // identical before and after the run
};

class Finetuner {
 public:
  // model must carry no adapters; fresh ones are attached per config.
  Finetuner(const DualEncoder& model, const FewShotSplit& split, const TrainConfig& config);

  // One SGD step on train samples `batch` with cutout size k.
  StepLosses step(std::span<const std::size_t> batch, double lr, std::size_t k,
                  DetachAudit* audit = nullptr);
  // Runs the whole schedule; call once.
  FinetuneResult run();

  const DualEncoder& model() const { return model_; }
  MetricRow instrument(std::size_t step, std::size_t epoch, double lr, const StepLosses& l) const;

 private:
  void sgd_update(const ParamBinder& binder, double lr);

  DualEncoder model_;
  const FewShotSplit& split_;
  TrainConfig config_;
  std::mt19937_64 rng_;
  std::mt19937_64 cutout_rng_;
  std::vector<std::size_t> local_labels_;  // train label -> index into base_ids
  std::vector<SimilarityMap> maps_;
  Matrix zero_shot_;  // train samples x base classes, frozen logits
  std::string first_adapted_;
  double first_he0_ = 0.0;
};

FinetuneResult finetune(const DualEncoder& model, const FewShotSplit& split, const TrainConfig& config);

// Top-1 accuracy in [0, 1] over the given class ids; labels are global ids.
// Argmax ties go to the lowest position in class_ids.
double evaluate(const DualEncoder& model, std::span<const LabeledImage> test,
                std::span<const std::size_t> class_ids, bool use_adapters);
std::vector<std::size_t> predict(const DualEncoder& model, std::span<const Matrix> images,
                                 std::span<const std::size_t> class_ids, bool use_adapters);

// Hash over every pretrained tensor (adapters excluded).
std::string frozen_hash(const DualEncoder& model);

struct PretrainConfig {
  std::size_t steps = 400;
  std::size_t batch_size = 20;
  double lr = 3e-3;  // Adam
  std::size_t per_class = 200;
  std::uint64_t seed = 0;
};

inline constexpr double kMinTemperature = 0.01;

struct PretrainResult {
  DualEncoder model;
  std::vector<double> losses;
};

// Contrastive image-to-class training of every encoder tensor and the
// temperature on the abundant all-class corpus.
PretrainResult pretrain(const EncoderConfig& config, const FewShotSplit& split,
                        const PretrainConfig& options);

}  // namespace orthotune
