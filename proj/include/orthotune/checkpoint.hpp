// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "orthotune/encoder.hpp"
#include "orthotune/tensor.hpp"

namespace orthotune {

// "OCRK" tensor container, all integers little-endian:
//
//   magic      4 bytes  "OCRK"
//   version    u32      kContainerVersion
//   count      u32      number of tensors
//   per tensor:
//     name_len u32, name (UTF-8, no terminator)
//     rank     u32
//     dims     u64 x rank
//     data     f64 x prod(dims), row-major
//   meta_len   u32, then meta_len bytes of "key=value\n" lines
//
// Matrices are written with rank 2. Rank 0 and 1 tensors read back as 1x1 and
// 1xn. A file that ends right after the tensors has empty metadata.
inline constexpr std::uint32_t kContainerVersion = 1;

struct TensorFile {
  std::vector<std::pair<std::string, Matrix>> tensors;
  std::vector<std::pair<std::string, std::string>> metadata;

  void add(std::string name, Matrix m) { tensors.emplace_back(std::move(name), std::move(m)); }
  void set(const std::string& key, std::string value);
  // Throws LookupError when absent.
  const Matrix& tensor(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
  std::optional<std::string> find_meta(const std::string& key) const;
  bool has_tensor(const std::string& name) const;
};

std::string encode_tensor_file(const TensorFile& file);
// Throws CompatibilityError on bad magic/version (including input too short to
// hold the magic), IoError on truncation after it.
TensorFile decode_tensor_file(const std::string& bytes);

std::string read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::string& bytes);
TensorFile read_tensor_file(const std::filesystem::path& path);
// Returns the git-style hash of the bytes written.
std::string write_tensor_file(const std::filesystem::path& path, const TensorFile& file);

// Full pretrained model: every tensor plus the encoder config as metadata.
// Adapters are not included.
TensorFile model_to_tensors(const DualEncoder& model);
DualEncoder model_from_tensors(const TensorFile& file);

// Adapter-only file: skew parameters (orthogonal) or down/up matrices
// (low-rank) per FFN layer, tagged with the base checkpoint's hash.
TensorFile adapters_to_tensors(const DualEncoder& model, const std::string& base_hash);
// Installs adapters from the file into model. Throws CompatibilityError if
// base_hash differs from the one recorded in the file or shapes disagree.
void load_adapters(DualEncoder& model, const TensorFile& file, const std::string& base_hash);

}  // namespace orthotune
