// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "orthotune/adapters.hpp"
#include "orthotune/encoder.hpp"
#include "orthotune/tape.hpp"
#include "orthotune/tensor.hpp"

namespace orthotune {

struct LossWeights {
  double lambda1 = 1.5;  // classification terms
  double lambda2 = 1.2;  // distillation terms
};

// Five batch x classes logit matrices, all already divided by tau.
struct LogitBundle {
  Var zs;            // frozen image, frozen text; a constant
  Var tuned;         // adapted image, adapted text
  Var text_live;     // adapted text against detached adapted image
  Var cutout_tuned;  // adapted text against adapted cutout image
  Var image_live;    // detached adapted text against adapted cutout image
};

// Labels index into class_ids. zero_shot, if given, is used as the zs logits
// instead of running the frozen forward (it must equal what that forward
// would produce; the trainer caches it per sample).
LogitBundle build_logits(ParamBinder& binder, const DualEncoder& model,
                         std::span<const Matrix> images, std::span<const Matrix> cutout_images,
                         std::span<const std::size_t> class_ids,
                         const std::optional<Matrix>& zero_shot = std::nullopt);

struct LossTerms {
  Var ce;
  Var cutout_ce;
  Var kl;         // KL(text_live || zs)
  Var cutout_kl;  // KL(image_live || zs)
  Var total;
};

LossTerms total_loss(const LogitBundle& bundle, std::span<const std::size_t> labels,
                     const LossWeights& w);

// lambda1 * (ce + cutout_ce) + lambda2 * (kl + cutout_kl), in the same order
// of operations as the taped total.
double weighted_total(double ce, double cutout_ce, double kl, double cutout_kl, const LossWeights& w);

// Tape-free losses.
double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);
double kl_divergence(const Matrix& live, const Matrix& anchor);

}  // namespace orthotune
