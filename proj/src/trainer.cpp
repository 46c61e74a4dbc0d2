// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "orthotune/checkpoint.hpp"
#include "orthotune/error.hpp"
#include "orthotune/hash.hpp"

namespace orthotune {

namespace {

constexpr std::size_t kEvalChunk = 32;

double max_abs_of(const Matrix& m) { return m.empty() ? 0.0 : max_abs(m); }

bool is_image_layer(const std::string& name) { return name.rfind("image.", 0) == 0; }

// Largest |gradient| over every adapter tensor of one branch.
double branch_grad(const DualEncoder& model, const ParamBinder& binder, bool image) {
  double g = 0.0;
  model.for_each_ffn([&](const std::string& name, const FrozenLinear& layer) {
    if (is_image_layer(name) != image) return;
    if (const auto* o = std::get_if<OrthogonalAdapter>(&layer.adapter)) {
      g = std::max(g, max_abs_of(binder.grad(o->skew().upper)));
    } else if (const auto* l = std::get_if<LowRankAdapter>(&layer.adapter)) {
      g = std::max(g, max_abs_of(binder.grad(l->down)));
      g = std::max(g, max_abs_of(binder.grad(l->up)));
    }
  });
  return g;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Per-tensor Adam state.
struct AdamSlot {
  Matrix m, v;
};

}  // namespace

TrainConfig TrainConfig::short_schedule() {
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 4;
  c.lr = 1e-5;
  c.warmup_epochs = 1;
  c.warmup_lr = 1e-6;
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ContractError("epochs must be positive");
  if (batch_size == 0) throw ContractError("batch size must be positive");
  if (lr < 0.0 || warmup_lr < 0.0) throw ContractError("learning rates must be nonnegative");
  if (warmup_epochs > epochs) throw ContractError("warmup longer than training");
  if (weights.lambda1 < 0.0 || weights.lambda2 < 0.0) throw ContractError("loss weights must be nonnegative");
  if (cutout.k_min > cutout.k_max) throw ContractError("cutout k_min exceeds k_max");
}

double lr_at(const TrainConfig& c, double progress) {
  const double epochs = static_cast<double>(c.epochs);
  if (!(progress >= 0.0 && progress <= epochs)) {
    throw ContractError("lr_at: progress " + fmt(progress) + " outside [0, " + fmt(epochs) + "]");
  }
  const double warm = static_cast<double>(c.warmup_epochs);
  if (progress < warm) return c.warmup_lr;
  const double span = epochs - warm;
  const double t = span > 0.0 ? (progress - warm) / span : 1.0;
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::string metrics_csv(std::span<const MetricRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const MetricRow& r : rows) {
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + fmt(r.lr) + "," + fmt(r.l_ce) +
           "," + fmt(r.l_cutout_ce) + "," + fmt(r.l_kl) + "," + fmt(r.l_cutout_kl) + "," + fmt(r.total) +
           "," + fmt(r.he_drift) + "," + fmt(r.orth_residual) + "\n";
  }
  return out;
}

std::vector<double> epoch_mean_totals(std::span<const MetricRow> rows) {
  std::vector<double> sums, counts;
  for (const MetricRow& r : rows) {
    if (r.epoch >= sums.size()) {
      sums.resize(r.epoch + 1, 0.0);
      counts.resize(r.epoch + 1, 0.0);
    }
    sums[r.epoch] += r.total;
    counts[r.epoch] += 1.0;
  }
  for (std::size_t e = 0; e < sums.size(); ++e)
    if (counts[e] > 0.0) sums[e] /= counts[e];
  return sums;
}

std::string frozen_hash(const DualEncoder& model) {
  return git_blob_hash(encode_tensor_file(model_to_tensors(model)));
}

Finetuner::Finetuner(const DualEncoder& model, const FewShotSplit& split, const TrainConfig& config)
    : model_(model), split_(split), config_(config), rng_(config.seed), cutout_rng_(config.cutout.seed) {
  config_.validate();
  config_.cutout.validate(model_.config.patch_count());
  if (split_.train.empty()) throw ContractError("finetune: empty train set");
  if (split_.classes != model_.config.classes) {
    throw CompatibilityError("dataset has " + std::to_string(split_.classes) + " classes, model " +
                             std::to_string(model_.config.classes));
  }
  model_.clear_adapters();
  model_.attach_adapters(config_.adapter_mode, config_.targets, rng_);

  for (const LabeledImage& s : split_.train) {
    auto it = std::find(split_.base_ids.begin(), split_.base_ids.end(), s.label);
    if (it == split_.base_ids.end()) {
      throw ContractError("train sample of class " + std::to_string(s.label) + " is not a base class");
    }
    local_labels_.push_back(static_cast<std::size_t>(it - split_.base_ids.begin()));
  }

  // Both depend only on frozen weights, so they are computed once.
  const auto images = images_of(split_.train);
  const auto labels = labels_of(split_.train);
  maps_ = similarity_maps(model_, images, labels);
  zero_shot_ = similarity_logits(encode_text(model_, split_.base_ids, false),
                                 encode_image(model_, images, false), model_.temperature());

  model_.for_each_ffn([&](const std::string& name, const FrozenLinear& layer) {
    if (first_adapted_.empty() && layer.mode() != AdapterMode::kNone) {
      first_adapted_ = name;
      first_he0_ = hyperspherical_energy(layer.w0);
    }
  });
}

void Finetuner::sgd_update(const ParamBinder& binder, double lr) {
  model_.for_each_ffn([&](const std::string&, FrozenLinear& layer) {
    if (auto* o = std::get_if<OrthogonalAdapter>(&layer.adapter)) {
      o->set_upper(subtract(o->skew().upper, scale(binder.grad(o->skew().upper), lr)));
    } else if (auto* l = std::get_if<LowRankAdapter>(&layer.adapter)) {
      const Matrix gd = binder.grad(l->down);
      const Matrix gu = binder.grad(l->up);
      l->down = subtract(l->down, scale(gd, lr));
      l->up = subtract(l->up, scale(gu, lr));
    }
  });
}

StepLosses Finetuner::step(std::span<const std::size_t> batch, double lr, std::size_t k,
                           DetachAudit* audit) {
  if (batch.empty()) throw ContractError("finetune step on an empty batch");
  std::vector<Matrix> images, cut;
  std::vector<std::size_t> labels;
  Matrix zs(batch.size(), split_.base_ids.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t s = batch[i];
    if (s >= split_.train.size()) throw LookupError("train index " + std::to_string(s) + " out of range");
    images.push_back(split_.train[s].image);
    cut.push_back(apply_cutout(split_.train[s].image, maps_[s], k));
    labels.push_back(local_labels_[s]);
    for (std::size_t c = 0; c < zs.cols(); ++c) zs(i, c) = zero_shot_(s, c);
  }

  Tape tape;
  ParamBinder binder(tape, Trainable::kAdapters);
  const LogitBundle bundle = build_logits(binder, model_, images, cut, split_.base_ids, zs);
  const LossTerms terms = total_loss(bundle, labels, config_.weights);

  if (audit != nullptr) {
    tape.backward(terms.kl);
    audit->kl_wrt_image = branch_grad(model_, binder, true);
    audit->kl_wrt_text = branch_grad(model_, binder, false);
    tape.backward(terms.cutout_kl);
    audit->cutout_kl_wrt_text = branch_grad(model_, binder, false);
    audit->cutout_kl_wrt_image = branch_grad(model_, binder, true);
  }
  tape.backward(terms.total);
  sgd_update(binder, lr);

  return StepLosses{terms.ce.value()[0], terms.cutout_ce.value()[0], terms.kl.value()[0],
                    terms.cutout_kl.value()[0], terms.total.value()[0]};
}

MetricRow Finetuner::instrument(std::size_t step, std::size_t epoch, double lr, const StepLosses& l) const {
  MetricRow r{step, epoch, lr, l.ce, l.cutout_ce, l.kl, l.cutout_kl, l.total, 0.0, 0.0};
  model_.for_each_ffn([&](const std::string& name, const FrozenLinear& layer) {
    if (name == first_adapted_) {
      r.he_drift = std::abs(hyperspherical_energy(layer.effective_weight()) - first_he0_) / first_he0_;
    }
    if (const auto* o = std::get_if<OrthogonalAdapter>(&layer.adapter)) {
      r.orth_residual = std::max(r.orth_residual, orthogonality_residual(o->matrix()));
    }
  });
  return r;
}

FinetuneResult Finetuner::run() {
  const std::string before = frozen_hash(model_);
  const std::size_t n = split_.train.size();
  const std::size_t per_epoch = (n + config_.batch_size - 1) / config_.batch_size;
  std::vector<std::size_t> order(n);
  std::vector<MetricRow> metrics;
  metrics.reserve(per_epoch * config_.epochs);

  std::size_t step_no = 0;
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const double progress = static_cast<double>(epoch) + static_cast<double>(b) / per_epoch;
      const double lr = lr_at(config_, progress);
      const std::size_t begin = b * config_.batch_size;
      const std::size_t count = std::min(config_.batch_size, n - begin);
      const std::size_t k = sample_k(config_.cutout, cutout_rng_);
      const StepLosses l = step(std::span(order).subspan(begin, count), lr, k);
      metrics.push_back(instrument(step_no++, epoch, lr, l));
    }
  }
  if (frozen_hash(model_) != before) throw ContractError("finetune modified a frozen tensor");
  return FinetuneResult{model_, std::move(metrics), before};
}

FinetuneResult finetune(const DualEncoder& model, const FewShotSplit& split, const TrainConfig& config) {
  Finetuner t(model, split, config);
  return t.run();
}

std::vector<std::size_t> predict(const DualEncoder& model, std::span<const Matrix> images,
                                 std::span<const std::size_t> class_ids, bool use_adapters) {
  const Matrix text = encode_text(model, class_ids, use_adapters);
  std::vector<std::size_t> out;
  out.reserve(images.size());
  for (std::size_t begin = 0; begin < images.size(); begin += kEvalChunk) {
    const auto chunk = images.subspan(begin, std::min(kEvalChunk, images.size() - begin));
    const Matrix logits = similarity_logits(text, encode_image(model, chunk, use_adapters), model.temperature());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c)
        if (logits(i, c) > logits(i, best)) best = c;
      out.push_back(class_ids[best]);
    }
  }
  return out;
}

double evaluate(const DualEncoder& model, std::span<const LabeledImage> test,
                std::span<const std::size_t> class_ids, bool use_adapters) {
  if (test.empty()) throw ContractError("evaluate: empty test set");
  const auto images = images_of(test);
  const auto predicted = predict(model, images, class_ids, use_adapters);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (predicted[i] == test[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

PretrainResult pretrain(const EncoderConfig& config, const FewShotSplit& split, const PretrainConfig& o) {
  if (split.classes != config.classes) throw ContractError("pretrain: class count mismatch");
  if (o.batch_size == 0 || o.per_class == 0) throw ContractError("pretrain: empty batches");
  PretrainResult result{DualEncoder::init(config, o.seed), {}};
  DualEncoder& model = result.model;
  const auto corpus = pretraining_corpus(split, o.per_class, o.seed + 1);
  std::vector<std::size_t> all(config.classes);
  std::iota(all.begin(), all.end(), 0);

  std::vector<AdamSlot> slots;
  model.for_each_tensor([&](const std::string&, const Matrix& m) {
    slots.push_back(AdamSlot{Matrix(m.rows(), m.cols()), Matrix(m.rows(), m.cols())});
  });
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double max_scale = std::log(1.0 / kMinTemperature);

  std::size_t cursor = 0;
  for (std::size_t step = 0; step < o.steps; ++step) {
    std::vector<Matrix> images;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < o.batch_size; ++i) {
      const LabeledImage& s = corpus[cursor];
      cursor = (cursor + 1) % corpus.size();
      images.push_back(s.image);
      labels.push_back(s.label);
    }
    Tape tape;
    ParamBinder binder(tape, Trainable::kBaseWeights);
    Var text = encode_text(binder, model, all, false);
    Var image = encode_image(binder, model, images, false).embeddings;
    Var sim = matmul(image, transpose(text));
    // exp(logit_scale) broadcast over the batch x classes grid
    Var s = exp(binder.base(model.logit_scale));
    Var grid = matmul(matmul(tape.constant(Matrix(images.size(), 1, 1.0)), s),
                      tape.constant(Matrix(1, all.size(), 1.0)));
    Var loss = cross_entropy(hadamard(sim, grid), labels);
    tape.backward(loss);
    result.losses.push_back(loss.value()[0]);

    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
    std::size_t slot = 0;
    model.for_each_tensor([&](const std::string&, Matrix& m) {
      AdamSlot& a = slots[slot++];
      const Matrix g = binder.grad(m);
      for (std::size_t i = 0; i < m.size(); ++i) {
        a.m[i] = kBeta1 * a.m[i] + (1.0 - kBeta1) * g[i];
        a.v[i] = kBeta2 * a.v[i] + (1.0 - kBeta2) * g[i] * g[i];
        m[i] -= o.lr * (a.m[i] / c1) / (std::sqrt(a.v[i] / c2) + kEps);
      }
    });
    model.logit_scale[0] = std::min(model.logit_scale[0], max_scale);
  }
  return result;
}

}  // namespace orthotune
