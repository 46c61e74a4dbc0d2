// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/encoder.hpp"

#include <cmath>

#include "orthotune/error.hpp"

namespace orthotune {

namespace {

constexpr std::size_t kSos = 0;
constexpr std::size_t kEos = 1;
constexpr std::size_t kFirstContext = 2;
constexpr double kInitialTemperature = 0.07;

Matrix gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

FrozenLinear make_linear(std::mt19937_64& rng, std::size_t in, std::size_t out) {
  return FrozenLinear{gaussian(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))), Matrix(1, out),
                      std::monostate{}};
}

TransformerBlock make_block(std::mt19937_64& rng, const EncoderConfig& c) {
  const std::size_t d = c.embed_dim;
  TransformerBlock b;
  b.ln1_gain = Matrix(1, d, 1.0);
  b.ln1_bias = Matrix(1, d);
  b.query = make_linear(rng, d, d);
  b.key = make_linear(rng, d, d);
  b.value = make_linear(rng, d, d);
  b.out = make_linear(rng, d, d);
  b.ln2_gain = Matrix(1, d, 1.0);
  b.ln2_bias = Matrix(1, d);
  b.fc1 = make_linear(rng, d, c.ffn_hidden);
  b.fc2 = make_linear(rng, c.ffn_hidden, d);
  return b;
}

EncoderBranch make_branch(std::mt19937_64& rng, const EncoderConfig& c, std::size_t length) {
  EncoderBranch br;
  br.positions = gaussian(rng, length, c.embed_dim, 0.1);
  for (std::size_t l = 0; l < c.layers; ++l) br.blocks.push_back(make_block(rng, c));
  br.ln_final_gain = Matrix(1, c.embed_dim, 1.0);
  br.ln_final_bias = Matrix(1, c.embed_dim);
  br.projection = gaussian(rng, c.embed_dim, c.embed_dim, 1.0 / std::sqrt(static_cast<double>(c.embed_dim)));
  return br;
}

template <typename Branch, typename Fn>
void visit_branch(const std::string& prefix, Branch& br, Fn&& fn) {
  fn(prefix + ".positions", br.positions);
  for (std::size_t l = 0; l < br.blocks.size(); ++l) {
    auto& b = br.blocks[l];
    const std::string p = prefix + ".blocks." + std::to_string(l) + ".";
    fn(p + "ln1.gain", b.ln1_gain);
    fn(p + "ln1.bias", b.ln1_bias);
    fn(p + "attn.query.weight", b.query.w0);
    fn(p + "attn.query.bias", b.query.bias);
    fn(p + "attn.key.weight", b.key.w0);
    fn(p + "attn.key.bias", b.key.bias);
    fn(p + "attn.value.weight", b.value.w0);
    fn(p + "attn.value.bias", b.value.bias);
    fn(p + "attn.out.weight", b.out.w0);
    fn(p + "attn.out.bias", b.out.bias);
    fn(p + "ln2.gain", b.ln2_gain);
    fn(p + "ln2.bias", b.ln2_bias);
    fn(p + "fc1.weight", b.fc1.w0);
    fn(p + "fc1.bias", b.fc1.bias);
    fn(p + "fc2.weight", b.fc2.w0);
    fn(p + "fc2.bias", b.fc2.bias);
  }
  fn(prefix + ".ln_final.gain", br.ln_final_gain);
  fn(prefix + ".ln_final.bias", br.ln_final_bias);
  fn(prefix + ".projection", br.projection);
}

template <typename Model, typename Fn>
void visit_tensors(Model& m, Fn&& fn) {
  fn("image.patch_projection.weight", m.patch_projection.w0);
  fn("image.patch_projection.bias", m.patch_projection.bias);
  fn("image.class_token", m.class_token);
  visit_branch("image", m.image, fn);
  fn("text.token_table", m.token_table);
  visit_branch("text", m.text, fn);
  fn("logit_scale", m.logit_scale);
}

template <typename Model, typename Fn>
void visit_ffn(Model& m, Fn&& fn) {
  auto branch = [&](const std::string& prefix, auto& br) {
    for (std::size_t l = 0; l < br.blocks.size(); ++l) {
      const std::string p = prefix + ".blocks." + std::to_string(l) + ".";
      fn(p + "fc1", br.blocks[l].fc1);
      fn(p + "fc2", br.blocks[l].fc2);
    }
  };
  branch("image", m.image);
  branch("text", m.text);
}

Var attention(ParamBinder& binder, const TransformerBlock& b, Var x, std::size_t seq_len,
              std::size_t heads, bool use_adapters) {
  Var q = linear_rows(binder, b.query, x, use_adapters);
  Var k = linear_rows(binder, b.key, x, use_adapters);
  Var v = linear_rows(binder, b.value, x, use_adapters);
  const std::size_t d = x.cols();
  const std::size_t head_dim = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t batch = x.rows() / seq_len;
  std::vector<Var> samples;
  samples.reserve(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    Var qs = slice_rows(q, s * seq_len, seq_len);
    Var ks = slice_rows(k, s * seq_len, seq_len);
    Var vs = slice_rows(v, s * seq_len, seq_len);
    std::vector<Var> per_head;
    per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = slice_cols(qs, h * head_dim, head_dim);
      Var kh = slice_cols(ks, h * head_dim, head_dim);
      Var vh = slice_cols(vs, h * head_dim, head_dim);
      Var weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
      per_head.push_back(matmul(weights, vh));
    }
    samples.push_back(concat_cols(per_head));
  }
  return linear_rows(binder, b.out, concat_rows(samples), use_adapters);
}

// Pre-norm blocks over a stack of equal-length sequences, then final norm and
// projection.
Var run_branch(ParamBinder& binder, const EncoderBranch& br, const EncoderConfig& c, Var x,
               std::size_t seq_len, bool use_adapters) {
  for (const TransformerBlock& b : br.blocks) {
    Var h = layer_norm(x, binder.base(b.ln1_gain), binder.base(b.ln1_bias));
    x = add(x, attention(binder, b, h, seq_len, c.heads, use_adapters));
    h = layer_norm(x, binder.base(b.ln2_gain), binder.base(b.ln2_bias));
    h = gelu(linear_rows(binder, b.fc1, h, use_adapters));
    x = add(x, linear_rows(binder, b.fc2, h, use_adapters));
  }
  x = layer_norm(x, binder.base(br.ln_final_gain), binder.base(br.ln_final_bias));
  return matmul(x, binder.base(br.projection));
}

std::vector<std::size_t> tiled_positions(std::size_t batch, std::size_t length) {
  std::vector<std::size_t> idx;
  idx.reserve(batch * length);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t p = 0; p < length; ++p) idx.push_back(p);
  return idx;
}

}  // namespace

void EncoderConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ContractError("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of heads " +
                        std::to_string(heads));
  }
  if (ffn_hidden == 0 || patch_dim == 0 || patch_count() == 0) {
    throw ContractError("ffn_hidden, patch_dim and patch grid must be nonzero");
  }
  if (classes == 0) throw ContractError("encoder needs at least one class");
}

DualEncoder DualEncoder::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  DualEncoder m;
  m.config = config;
  m.patch_projection = make_linear(rng, config.patch_dim, config.embed_dim);
  m.class_token = gaussian(rng, 1, config.embed_dim, 1.0);
  m.image = make_branch(rng, config, config.image_length());
  m.token_table = gaussian(rng, config.vocab_size(), config.embed_dim, 1.0);
  m.text = make_branch(rng, config, config.text_length());
  m.logit_scale = Matrix(1, 1, std::log(1.0 / kInitialTemperature));
  return m;
}

double DualEncoder::temperature() const { return std::exp(-logit_scale[0]); }

void DualEncoder::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit_tensors(*this, fn);
}

void DualEncoder::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit_tensors(*this, fn);
}

void DualEncoder::for_each_ffn(const std::function<void(const std::string&, FrozenLinear&)>& fn) {
  visit_ffn(*this, fn);
}

void DualEncoder::for_each_ffn(
    const std::function<void(const std::string&, const FrozenLinear&)>& fn) const {
  visit_ffn(*this, fn);
}

void DualEncoder::attach_adapters(AdapterMode mode, AdapterTargets targets, std::mt19937_64& rng,
                                  std::size_t rank) {
  for_each_ffn([&](const std::string& name, FrozenLinear& layer) {
    const bool is_image = name.rfind("image.", 0) == 0;
    const bool wanted = is_image ? targets.image : targets.text;
    if (!wanted || mode == AdapterMode::kNone) {
      layer.adapter = std::monostate{};
    } else if (mode == AdapterMode::kOrthogonal) {
      layer.adapter = OrthogonalAdapter(layer.in_dim());
    } else {
      layer.adapter = LowRankAdapter::init(layer.in_dim(), layer.out_dim(), rank, rng);
    }
  });
}

void DualEncoder::clear_adapters() {
  for_each_ffn([](const std::string&, FrozenLinear& layer) { layer.adapter = std::monostate{}; });
}

std::size_t DualEncoder::trainable_parameter_count() const {
  std::size_t n = 0;
  for_each_ffn([&](const std::string&, const FrozenLinear& layer) { n += layer.trainable_count(); });
  return n;
}

DualEncoder DualEncoder::merged() const {
  DualEncoder m = *this;
  m.for_each_ffn([](const std::string&, FrozenLinear& layer) {
    layer.w0 = layer.effective_weight();
    layer.adapter = std::monostate{};
  });
  return m;
}

ImageEncoding encode_image(ParamBinder& binder, const DualEncoder& model,
                           std::span<const Matrix> images, bool use_adapters) {
  const EncoderConfig& c = model.config;
  if (images.empty()) throw ContractError("encode_image: empty batch");
  const std::size_t patches = c.patch_count();
  std::vector<Var> raw;
  raw.reserve(images.size());
  Tape& tape = binder.tape();
  for (const Matrix& img : images) {
    if (img.rows() != patches || img.cols() != c.patch_dim) {
      throw DimensionError("encode_image: image is " + std::to_string(img.rows()) + "x" +
                           std::to_string(img.cols()) + ", expected " + std::to_string(patches) + "x" +
                           std::to_string(c.patch_dim));
    }
    raw.push_back(tape.constant(img));
  }
  Var projected = linear_rows(binder, model.patch_projection, concat_rows(raw), false);
  Var cls = binder.base(model.class_token);
  std::vector<Var> sequences;
  sequences.reserve(2 * images.size());
  for (std::size_t s = 0; s < images.size(); ++s) {
    sequences.push_back(cls);
    sequences.push_back(slice_rows(projected, s * patches, patches));
  }
  const std::size_t len = c.image_length();
  const auto pos_idx = tiled_positions(images.size(), len);
  Var x = add(concat_rows(sequences), gather_rows(binder.base(model.image.positions), pos_idx));
  Var out = run_branch(binder, model.image, c, x, len, use_adapters);

  std::vector<std::size_t> cls_rows, patch_rows;
  for (std::size_t s = 0; s < images.size(); ++s) {
    cls_rows.push_back(s * len);
    for (std::size_t p = 1; p < len; ++p) patch_rows.push_back(s * len + p);
  }
  return ImageEncoding{normalize_rows(gather_rows(out, cls_rows)), gather_rows(out, patch_rows)};
}

Var encode_text(ParamBinder& binder, const DualEncoder& model, std::span<const std::size_t> class_ids,
                bool use_adapters) {
  const EncoderConfig& c = model.config;
  if (class_ids.empty()) throw ContractError("encode_text: no classes requested");
  const std::size_t len = c.text_length();
  std::vector<std::size_t> tokens;
  tokens.reserve(class_ids.size() * len);
  for (std::size_t id : class_ids) {
    if (id >= c.classes) {
      throw LookupError("encode_text: class id " + std::to_string(id) + " outside " +
                        std::to_string(c.classes) + " classes");
    }
    tokens.push_back(kSos);
    for (std::size_t i = 0; i < c.context_length; ++i) tokens.push_back(kFirstContext + i);
    tokens.push_back(kFirstContext + c.context_length + id);
    tokens.push_back(kEos);
  }
  Var x = add(gather_rows(binder.base(model.token_table), tokens),
              gather_rows(binder.base(model.text.positions), tiled_positions(class_ids.size(), len)));
  Var out = run_branch(binder, model.text, c, x, len, use_adapters);
  std::vector<std::size_t> eos_rows;
  for (std::size_t s = 0; s < class_ids.size(); ++s) eos_rows.push_back(s * len + len - 1);
  return normalize_rows(gather_rows(out, eos_rows));
}

Matrix encode_image(const DualEncoder& model, std::span<const Matrix> images, bool use_adapters) {
  Tape t;
  ParamBinder b(t, Trainable::kNothing);
  return encode_image(b, model, images, use_adapters).embeddings.value();
}

Matrix encode_text(const DualEncoder& model, std::span<const std::size_t> class_ids, bool use_adapters) {
  Tape t;
  ParamBinder b(t, Trainable::kNothing);
  return encode_text(b, model, class_ids, use_adapters).value();
}

Var similarity_logits(Var text_features, Var image_features, double tau) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  if (text_features.cols() != image_features.cols()) {
    throw DimensionError("similarity: embedding widths differ");
  }
  return scale(matmul(image_features, transpose(text_features)), 1.0 / tau);
}

Matrix similarity_logits(const Matrix& text_features, const Matrix& image_features, double tau) {
  Tape t;
  return similarity_logits(t.constant(text_features), t.constant(image_features), tau).value();
}

Matrix class_probabilities(const Matrix& text_features, const Matrix& image_features, double tau) {
  Tape t;
  return softmax_rows(t.constant(similarity_logits(text_features, image_features, tau))).value();
}

}  // namespace orthotune
