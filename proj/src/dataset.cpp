// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>

#include "orthotune/error.hpp"

namespace orthotune {

namespace {

// Generator-enforced lower bound on prototype separation, as a fraction of
// the expected distance between two independent N(0,1) templates.
constexpr double kSeparationFloor = 0.5;
constexpr int kMaxRedraws = 1000;

Matrix gaussian_like(std::mt19937_64& rng, std::size_t r, std::size_t c, double stddev) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = stddev * n(rng);
  return m;
}

std::vector<LabeledImage> sample_set(std::mt19937_64& rng, const std::vector<ClassPrototype>& protos,
                                     std::span<const std::size_t> ids, std::size_t per_class) {
  std::vector<LabeledImage> out;
  out.reserve(ids.size() * per_class);
  for (std::size_t id : ids) {
    const ClassPrototype& p = protos[id];
    for (std::size_t i = 0; i < per_class; ++i) {
      Matrix noise = gaussian_like(rng, p.prototype.rows(), p.prototype.cols(), 1.0);
      Matrix img = p.prototype;
      if (p.noise_scale > 0.0) img = add(img, scale(noise, p.noise_scale));
      out.push_back(LabeledImage{std::move(img), id});
    }
  }
  return out;
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(std::span<const std::size_t> ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
  return s;
}

std::vector<std::size_t> split_ids(const std::string& s) {
  std::vector<std::size_t> ids;
  std::istringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      ids.push_back(std::stoull(part));
    } catch (const std::exception&) {
      throw CompatibilityError("dataset manifest has a bad class id: " + part);
    }
  }
  return ids;
}

Matrix stack(std::span<const LabeledImage> set, std::size_t patches, std::size_t patch_dim) {
  Matrix m(set.size() * patches, patch_dim);
  for (std::size_t s = 0; s < set.size(); ++s)
    for (std::size_t p = 0; p < patches; ++p)
      for (std::size_t j = 0; j < patch_dim; ++j) m(s * patches + p, j) = set[s].image(p, j);
  return m;
}

Matrix stack_prototypes(const std::vector<ClassPrototype>& protos) {
  std::vector<LabeledImage> as_images;
  for (const auto& p : protos) as_images.push_back(LabeledImage{p.prototype, p.class_id});
  const Matrix& first = protos.front().prototype;
  return stack(as_images, first.rows(), first.cols());
}

std::vector<Matrix> unstack(const Matrix& m, std::size_t patches) {
  if (patches == 0 || m.rows() % patches != 0) throw CompatibilityError("dataset images are ragged");
  std::vector<Matrix> out;
  for (std::size_t s = 0; s < m.rows() / patches; ++s) {
    Matrix img(patches, m.cols());
    for (std::size_t p = 0; p < patches; ++p)
      for (std::size_t j = 0; j < m.cols(); ++j) img(p, j) = m(s * patches + p, j);
    out.push_back(std::move(img));
  }
  return out;
}

std::size_t count_of(const TensorFile& f, const std::string& key) {
  try {
    return std::stoull(f.meta(key));
  } catch (const LookupError&) {
    throw CompatibilityError("dataset manifest lacks '" + key + "'");
  } catch (const std::exception&) {
    throw CompatibilityError("dataset manifest '" + key + "' is not a count");
  }
}

}  // namespace

FewShotSplit generate(const DatasetOptions& o) {
  if (o.classes < 2 || o.classes % 2 != 0) {
    throw ContractError("class count must be even and at least 2, got " + std::to_string(o.classes));
  }
  if (o.shots == 0 || o.test_per_class == 0) throw ContractError("shots and test_per_class must be >= 1");
  if (o.patch_count() == 0 || o.patch_dim == 0) throw ContractError("empty patch grid");
  if (o.noise < 0.0 || o.drift < 0.0 || o.shift < 0.0) throw ContractError("negative noise scale");

  std::mt19937_64 rng(o.seed);
  const std::size_t P = o.patch_count();
  const double floor = kSeparationFloor * std::sqrt(2.0 * static_cast<double>(P * o.patch_dim));

  FewShotSplit split;
  split.classes = o.classes;
  split.shots = o.shots;
  for (std::size_t c = 0; c < o.classes; ++c) (c < o.classes / 2 ? split.base_ids : split.new_ids).push_back(c);

  for (std::size_t c = 0; c < o.classes; ++c) {
    Matrix proto;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) throw ContractError("could not separate class prototypes");
      proto = gaussian_like(rng, P, o.patch_dim, 1.0);
      bool separated = true;
      for (const auto& other : split.pretrain_prototypes)
        if (frobenius_norm(subtract(proto, other.prototype)) < floor) separated = false;
      if (separated) break;
    }
    split.pretrain_prototypes.push_back(ClassPrototype{c, std::move(proto), o.noise});
  }

  const Matrix shared = gaussian_like(rng, P, o.patch_dim, o.shift);
  for (const auto& p : split.pretrain_prototypes) {
    Matrix t = add(add(p.prototype, shared), gaussian_like(rng, P, o.patch_dim, o.drift));
    split.prototypes.push_back(ClassPrototype{p.class_id, std::move(t), o.noise});
  }

  split.train = sample_set(rng, split.prototypes, split.base_ids, o.shots);
  split.base_test = sample_set(rng, split.prototypes, split.base_ids, o.test_per_class);
  split.new_test = sample_set(rng, split.prototypes, split.new_ids, o.test_per_class);
  return split;
}

std::vector<LabeledImage> pretraining_corpus(const FewShotSplit& split, std::size_t per_class,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> all;
  for (std::size_t c = 0; c < split.classes; ++c) all.push_back(c);
  auto corpus = sample_set(rng, split.pretrain_prototypes, all, per_class);
  // Interleave classes so minibatches in file order are mixed.
  std::vector<LabeledImage> mixed;
  mixed.reserve(corpus.size());
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < split.classes; ++c) mixed.push_back(std::move(corpus[c * per_class + i]));
  return mixed;
}

double harmonic_mean(double base_acc, double new_acc) {
  const double s = base_acc + new_acc;
  if (s == 0.0) return 0.0;
  return 2.0 * base_acc * new_acc / s;
}

TensorFile dataset_to_tensors(const FewShotSplit& split) {
  if (split.prototypes.empty()) throw ContractError("dataset has no classes");
  const Matrix& shape = split.prototypes.front().prototype;
  const std::size_t P = shape.rows();
  TensorFile f;
  f.set("kind", "dataset");
  f.set("classes", std::to_string(split.classes));
  f.set("shots", std::to_string(split.shots));
  f.set("patch_count", std::to_string(P));
  f.set("patch_dim", std::to_string(shape.cols()));
  f.set("noise", exact(split.prototypes.front().noise_scale));
  f.set("base_ids", join(split.base_ids));
  f.set("new_ids", join(split.new_ids));
  f.add("pretrain_prototypes", stack_prototypes(split.pretrain_prototypes));
  f.add("prototypes", stack_prototypes(split.prototypes));
  const std::pair<const char*, const std::vector<LabeledImage>*> sets[] = {
      {"train", &split.train}, {"base_test", &split.base_test}, {"new_test", &split.new_test}};
  for (const auto& [name, set] : sets) {
    f.add(std::string(name) + ".images", stack(*set, P, shape.cols()));
    Matrix labels(1, set->size());
    for (std::size_t i = 0; i < set->size(); ++i) labels[i] = static_cast<double>((*set)[i].label);
    f.add(std::string(name) + ".labels", std::move(labels));
  }
  return f;
}

FewShotSplit dataset_from_tensors(const TensorFile& f) {
  if (f.find_meta("kind") != "dataset") throw CompatibilityError("file is not a dataset");
  FewShotSplit split;
  split.classes = count_of(f, "classes");
  split.shots = count_of(f, "shots");
  const std::size_t P = count_of(f, "patch_count");
  split.base_ids = split_ids(f.meta("base_ids"));
  split.new_ids = split_ids(f.meta("new_ids"));
  const double noise = std::stod(f.meta("noise"));

  auto protos = [&](const std::string& name) {
    std::vector<ClassPrototype> out;
    auto images = unstack(f.tensor(name), P);
    if (images.size() != split.classes) throw CompatibilityError(name + " count mismatch");
    for (std::size_t c = 0; c < images.size(); ++c) out.push_back(ClassPrototype{c, std::move(images[c]), noise});
    return out;
  };
  split.pretrain_prototypes = protos("pretrain_prototypes");
  split.prototypes = protos("prototypes");

  auto load = [&](const std::string& name) {
    auto images = unstack(f.tensor(name + ".images"), P);
    const Matrix& labels = f.tensor(name + ".labels");
    if (labels.size() != images.size()) throw CompatibilityError(name + " labels do not match images");
    std::vector<LabeledImage> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const double l = labels[i];
      if (l < 0 || l >= static_cast<double>(split.classes) || l != std::floor(l)) {
        throw CompatibilityError(name + " has an invalid label");
      }
      out.push_back(LabeledImage{std::move(images[i]), static_cast<std::size_t>(l)});
    }
    return out;
  };
  split.train = load("train");
  split.base_test = load("base_test");
  split.new_test = load("new_test");
  return split;
}

std::vector<Matrix> images_of(std::span<const LabeledImage> set) {
  std::vector<Matrix> out;
  out.reserve(set.size());
  for (const auto& s : set) out.push_back(s.image);
  return out;
}

std::vector<std::size_t> labels_of(std::span<const LabeledImage> set) {
  std::vector<std::size_t> out;
  out.reserve(set.size());
  for (const auto& s : set) out.push_back(s.label);
  return out;
}

}  // namespace orthotune
