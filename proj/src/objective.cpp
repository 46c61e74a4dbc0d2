// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/objective.hpp"

#include <string>

#include "orthotune/error.hpp"

namespace orthotune {

LogitBundle build_logits(ParamBinder& binder, const DualEncoder& model,
                         std::span<const Matrix> images, std::span<const Matrix> cutout_images,
                         std::span<const std::size_t> class_ids,
                         const std::optional<Matrix>& zero_shot) {
  if (images.size() != cutout_images.size()) {
    throw DimensionError("build_logits: " + std::to_string(images.size()) + " images but " +
                         std::to_string(cutout_images.size()) + " cutout images");
  }
  const double tau = model.temperature();
  Tape& tape = binder.tape();

  LogitBundle b;
  if (zero_shot) {
    if (zero_shot->rows() != images.size() || zero_shot->cols() != class_ids.size()) {
      throw DimensionError("build_logits: cached zero-shot logits have the wrong shape");
    }
    b.zs = tape.constant(*zero_shot);
  } else {
    Var text0 = encode_text(binder, model, class_ids, false);
    Var image0 = encode_image(binder, model, images, false).embeddings;
    b.zs = detach(similarity_logits(text0, image0, tau));
  }

  Var text = encode_text(binder, model, class_ids, true);
  Var image = encode_image(binder, model, images, true).embeddings;
  Var cut = encode_image(binder, model, cutout_images, true).embeddings;

  b.tuned = similarity_logits(text, image, tau);
  b.text_live = similarity_logits(text, detach(image), tau);
  b.cutout_tuned = similarity_logits(text, cut, tau);
  b.image_live = similarity_logits(detach(text), cut, tau);
  return b;
}

LossTerms total_loss(const LogitBundle& bundle, std::span<const std::size_t> labels,
                     const LossWeights& w) {
  if (w.lambda1 < 0.0 || w.lambda2 < 0.0) throw ContractError("loss weights must be nonnegative");
  LossTerms t;
  t.ce = cross_entropy(bundle.tuned, labels);
  t.cutout_ce = cross_entropy(bundle.cutout_tuned, labels);
  Var anchor = detach(bundle.zs);
  t.kl = kl_divergence(bundle.text_live, anchor);
  t.cutout_kl = kl_divergence(bundle.image_live, anchor);
  t.total = add(scale(add(t.ce, t.cutout_ce), w.lambda1), scale(add(t.kl, t.cutout_kl), w.lambda2));
  return t;
}

double weighted_total(double ce, double cutout_ce, double kl, double cutout_kl, const LossWeights& w) {
  return (ce + cutout_ce) * w.lambda1 + (kl + cutout_kl) * w.lambda2;
}

double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  Tape t;
  return cross_entropy(t.constant(logits), labels).value()[0];
}

double kl_divergence(const Matrix& live, const Matrix& anchor) {
  Tape t;
  return kl_divergence(t.constant(live), t.constant(anchor)).value()[0];
}

}  // namespace orthotune
