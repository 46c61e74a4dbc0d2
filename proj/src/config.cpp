// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/config.hpp"

#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "orthotune/checkpoint.hpp"
#include "orthotune/error.hpp"

namespace orthotune {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') throw ContractError(key + ": expected a count, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ContractError(key + ": expected a number, got '" + v + "'");
  return x;
}

void require(const std::string& key, const std::string& v, const char* only) {
  if (v != only) throw ContractError(key + ": only '" + std::string(only) + "' is supported, got '" + v + "'");
}

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = to_count(k, v); }},
      {"optimizer", [](RunConfig&, auto& k, auto& v) { require(k, v, "sgd"); }},
      {"learning_rate", [](RunConfig& c, auto& k, auto& v) { c.train.lr = to_real(k, v); }},
      {"lr_scheduler", [](RunConfig&, auto& k, auto& v) { require(k, v, "cosine"); }},
      {"warmup_epoch", [](RunConfig& c, auto& k, auto& v) { c.train.warmup_epochs = to_count(k, v); }},
      {"warmup_type", [](RunConfig&, auto& k, auto& v) { require(k, v, "constant"); }},
      {"warmup_lr", [](RunConfig& c, auto& k, auto& v) { c.train.warmup_lr = to_real(k, v); }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = to_count(k, v); }},
      {"lambda1", [](RunConfig& c, auto& k, auto& v) { c.train.weights.lambda1 = to_real(k, v); }},
      {"lambda2", [](RunConfig& c, auto& k, auto& v) { c.train.weights.lambda2 = to_real(k, v); }},
      {"cutout_min", [](RunConfig& c, auto& k, auto& v) { c.train.cutout.k_min = to_count(k, v); }},
      {"cutout_max", [](RunConfig& c, auto& k, auto& v) { c.train.cutout.k_max = to_count(k, v); }},
      {"seed",
       [](RunConfig& c, auto& k, auto& v) {
         c.train.seed = to_count(k, v);
         c.train.cutout.seed = c.train.seed;
       }},
      {"adapter", [](RunConfig& c, auto&, auto& v) { c.train.adapter_mode = parse_adapter_mode(v); }},
      {"branches", [](RunConfig& c, auto&, auto& v) { c.train.targets = parse_branches(v); }},

      {"embed_dim", [](RunConfig& c, auto& k, auto& v) { c.encoder.embed_dim = to_count(k, v); }},
      {"layers", [](RunConfig& c, auto& k, auto& v) { c.encoder.layers = to_count(k, v); }},
      {"heads", [](RunConfig& c, auto& k, auto& v) { c.encoder.heads = to_count(k, v); }},
      {"ffn_hidden", [](RunConfig& c, auto& k, auto& v) { c.encoder.ffn_hidden = to_count(k, v); }},
      {"grid_rows",
       [](RunConfig& c, auto& k, auto& v) { c.encoder.grid_rows = c.dataset.grid_rows = to_count(k, v); }},
      {"grid_cols",
       [](RunConfig& c, auto& k, auto& v) { c.encoder.grid_cols = c.dataset.grid_cols = to_count(k, v); }},
      {"patch_dim",
       [](RunConfig& c, auto& k, auto& v) { c.encoder.patch_dim = c.dataset.patch_dim = to_count(k, v); }},
      {"context_length", [](RunConfig& c, auto& k, auto& v) { c.encoder.context_length = to_count(k, v); }},
      {"classes",
       [](RunConfig& c, auto& k, auto& v) { c.encoder.classes = c.dataset.classes = to_count(k, v); }},
      {"shots", [](RunConfig& c, auto& k, auto& v) { c.dataset.shots = to_count(k, v); }},
      {"test_per_class", [](RunConfig& c, auto& k, auto& v) { c.dataset.test_per_class = to_count(k, v); }},
      {"noise", [](RunConfig& c, auto& k, auto& v) { c.dataset.noise = to_real(k, v); }},
      {"drift", [](RunConfig& c, auto& k, auto& v) { c.dataset.drift = to_real(k, v); }},
      {"shift", [](RunConfig& c, auto& k, auto& v) { c.dataset.shift = to_real(k, v); }},
      {"data_seed", [](RunConfig& c, auto& k, auto& v) { c.dataset.seed = to_count(k, v); }},
      {"pretrain_steps", [](RunConfig& c, auto& k, auto& v) { c.pretrain.steps = to_count(k, v); }},
      {"pretrain_batch_size", [](RunConfig& c, auto& k, auto& v) { c.pretrain.batch_size = to_count(k, v); }},
      {"pretrain_learning_rate", [](RunConfig& c, auto& k, auto& v) { c.pretrain.lr = to_real(k, v); }},
      {"pretrain_per_class", [](RunConfig& c, auto& k, auto& v) { c.pretrain.per_class = to_count(k, v); }},
      {"pretrain_seed", [](RunConfig& c, auto& k, auto& v) { c.pretrain.seed = to_count(k, v); }},
  };
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  dataset.grid_rows = encoder.grid_rows;
  dataset.grid_cols = encoder.grid_cols;
  dataset.patch_dim = encoder.patch_dim;
  dataset.classes = encoder.classes;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ContractError("unknown config key '" + key + "'");
  it->second(config, key, value);
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(config, trim(std::string_view(body).substr(0, eq)),
                  trim(std::string_view(body).substr(eq + 1)));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_bytes(path);
  try {
    return parse_config(text);
  } catch (const ContractError& e) {
    throw ContractError(path.string() + ": " + e.what());
  }
}

std::string render_config(const RunConfig& c) {
  std::ostringstream o;
  o << "batch_size = " << c.train.batch_size << "\n"
    << "optimizer = sgd\n"
    << "learning_rate = " << real(c.train.lr) << "\n"
    << "lr_scheduler = cosine\n"
    << "warmup_epoch = " << c.train.warmup_epochs << "\n"
    << "warmup_type = constant\n"
    << "warmup_lr = " << real(c.train.warmup_lr) << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "lambda1 = " << real(c.train.weights.lambda1) << "\n"
    << "lambda2 = " << real(c.train.weights.lambda2) << "\n"
    << "cutout_min = " << c.train.cutout.k_min << "\n"
    << "cutout_max = " << c.train.cutout.k_max << "\n"
    << "seed = " << c.train.seed << "\n"
    << "adapter = " << to_string(c.train.adapter_mode) << "\n"
    << "branches = " << branches_name(c.train.targets) << "\n"
    << "embed_dim = " << c.encoder.embed_dim << "\n"
    << "layers = " << c.encoder.layers << "\n"
    << "heads = " << c.encoder.heads << "\n"
    << "ffn_hidden = " << c.encoder.ffn_hidden << "\n"
    << "grid_rows = " << c.encoder.grid_rows << "\n"
    << "grid_cols = " << c.encoder.grid_cols << "\n"
    << "patch_dim = " << c.encoder.patch_dim << "\n"
    << "context_length = " << c.encoder.context_length << "\n"
    << "classes = " << c.encoder.classes << "\n"
    << "shots = " << c.dataset.shots << "\n"
    << "test_per_class = " << c.dataset.test_per_class << "\n"
    << "noise = " << real(c.dataset.noise) << "\n"
    << "drift = " << real(c.dataset.drift) << "\n"
    << "shift = " << real(c.dataset.shift) << "\n"
    << "data_seed = " << c.dataset.seed << "\n"
    << "pretrain_steps = " << c.pretrain.steps << "\n"
    << "pretrain_batch_size = " << c.pretrain.batch_size << "\n"
    << "pretrain_learning_rate = " << real(c.pretrain.lr) << "\n"
    << "pretrain_per_class = " << c.pretrain.per_class << "\n"
    << "pretrain_seed = " << c.pretrain.seed << "\n";
  return o.str();
}

std::string branches_name(const AdapterTargets& t) {
  if (t.image && t.text) return "both";
  if (t.image) return "image";
  if (t.text) return "text";
  return "none";
}

AdapterTargets parse_branches(const std::string& name) {
  if (name == "both") return {true, true};
  if (name == "image") return {true, false};
  if (name == "text") return {false, true};
  throw ContractError("branches must be both, image or text, got '" + name + "'");
}

}  // namespace orthotune
