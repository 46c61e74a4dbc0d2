// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "orthotune/error.hpp"
#include "orthotune/hash.hpp"

namespace orthotune {

namespace {

constexpr char kMagic[4] = {'O', 'C', 'R', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += width;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("tensor file truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::size_t meta_size(const TensorFile& f, const std::string& key) {
  const std::string& v = f.meta(key);
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw CompatibilityError("metadata '" + key + "' is not a count: " + v);
  }
}

}  // namespace

void TensorFile::set(const std::string& key, std::string value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw ContractError("metadata key/value may not contain '=' in keys or newlines: " + key);
  }
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  metadata.emplace_back(key, std::move(value));
}

const Matrix& TensorFile::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw LookupError("tensor '" + name + "' not found");
}

bool TensorFile::has_tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return true;
  return false;
}

std::optional<std::string> TensorFile::find_meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& TensorFile::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  throw LookupError("metadata key '" + key + "' not found");
}

std::string encode_tensor_file(const TensorFile& file) {
  std::string out(kMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, m] : file.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, 2);
    put_u64(out, m.rows());
    put_u64(out, m.cols());
    for (double v : m.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::string meta;
  for (const auto& [k, v] : file.metadata) meta += k + "=" + v + "\n";
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  return out;
}

TensorFile decode_tensor_file(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw CompatibilityError("not an OCRK tensor file (bad magic)");
  }
  r.str(4);
  const auto version = r.uint(4);
  if (version != kContainerVersion) {
    throw CompatibilityError("unsupported OCRK version " + std::to_string(version));
  }
  TensorFile file;
  const auto count = r.uint(4);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = r.str(r.uint(4));
    const auto rank = r.uint(4);
    if (rank > 2) throw CompatibilityError("tensor '" + name + "' has rank " + std::to_string(rank));
    std::uint64_t dims[2] = {1, 1};
    for (std::uint64_t i = 0; i < rank; ++i) dims[rank == 1 ? 1 : i] = r.uint(8);
    std::vector<double> data(dims[0] * dims[1]);
    for (double& v : data) {
      v = std::bit_cast<double>(r.uint(8));
      if (!std::isfinite(v)) throw CompatibilityError("tensor '" + name + "' holds a non-finite value");
    }
    file.add(std::move(name), Matrix(dims[0], dims[1], std::move(data)));
  }
  if (!r.at_end()) {
    std::istringstream meta(r.str(r.uint(4)));
    std::string line;
    while (std::getline(meta, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CompatibilityError("malformed metadata line: " + line);
      file.set(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  return file;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  return ss.str();
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  try {
    return decode_tensor_file(read_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const CompatibilityError& e) {
    throw CompatibilityError(path.string() + ": " + e.what());
  }
}

std::string write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const std::string bytes = encode_tensor_file(file);
  write_bytes(path, bytes);
  return git_blob_hash(bytes);
}

TensorFile model_to_tensors(const DualEncoder& model) {
  TensorFile f;
  const EncoderConfig& c = model.config;
  f.set("kind", "model");
  f.set("embed_dim", std::to_string(c.embed_dim));
  f.set("layers", std::to_string(c.layers));
  f.set("heads", std::to_string(c.heads));
  f.set("ffn_hidden", std::to_string(c.ffn_hidden));
  f.set("grid_rows", std::to_string(c.grid_rows));
  f.set("grid_cols", std::to_string(c.grid_cols));
  f.set("patch_dim", std::to_string(c.patch_dim));
  f.set("context_length", std::to_string(c.context_length));
  f.set("classes", std::to_string(c.classes));
  model.for_each_tensor([&](const std::string& name, const Matrix& m) { f.add(name, m); });
  return f;
}

DualEncoder model_from_tensors(const TensorFile& file) {
  if (file.find_meta("kind") != "model") throw CompatibilityError("file is not a model checkpoint");
  EncoderConfig c;
  c.embed_dim = meta_size(file, "embed_dim");
  c.layers = meta_size(file, "layers");
  c.heads = meta_size(file, "heads");
  c.ffn_hidden = meta_size(file, "ffn_hidden");
  c.grid_rows = meta_size(file, "grid_rows");
  c.grid_cols = meta_size(file, "grid_cols");
  c.patch_dim = meta_size(file, "patch_dim");
  c.context_length = meta_size(file, "context_length");
  c.classes = meta_size(file, "classes");
  DualEncoder model = DualEncoder::init(c, 0);
  model.for_each_tensor([&](const std::string& name, Matrix& m) {
    if (!file.has_tensor(name)) throw CompatibilityError("checkpoint lacks tensor '" + name + "'");
    const Matrix& stored = file.tensor(name);
    if (!stored.same_shape(m)) throw CompatibilityError("tensor '" + name + "' has the wrong shape");
    m = stored;
  });
  return model;
}

TensorFile adapters_to_tensors(const DualEncoder& model, const std::string& base_hash) {
  TensorFile f;
  f.set("kind", "adapters");
  f.set("base_hash", base_hash);
  AdapterMode mode = AdapterMode::kNone;
  model.for_each_ffn([&](const std::string& name, const FrozenLinear& layer) {
    if (const auto* o = std::get_if<OrthogonalAdapter>(&layer.adapter)) {
      f.add(name + ".skew", o->skew().upper);
      mode = AdapterMode::kOrthogonal;
    } else if (const auto* l = std::get_if<LowRankAdapter>(&layer.adapter)) {
      f.add(name + ".down", l->down);
      f.add(name + ".up", l->up);
      mode = AdapterMode::kLowRank;
    }
  });
  f.set("adapter_mode", to_string(mode));
  return f;
}

void load_adapters(DualEncoder& model, const TensorFile& file, const std::string& base_hash) {
  if (file.find_meta("kind") != "adapters") throw CompatibilityError("file is not an adapter checkpoint");
  const auto recorded = file.find_meta("base_hash");
  if (recorded != base_hash) {
    throw CompatibilityError("adapter file was trained against base " + recorded.value_or("<none>") +
                             ", not " + base_hash);
  }
  DualEncoder staged = model;
  staged.clear_adapters();
  std::size_t used = 0;
  staged.for_each_ffn([&](const std::string& name, FrozenLinear& layer) {
    if (file.has_tensor(name + ".skew")) {
      const Matrix& upper = file.tensor(name + ".skew");
      if (upper.rows() != 1 || upper.cols() != SkewParam::count(layer.in_dim())) {
        throw CompatibilityError("adapter '" + name + "' has the wrong skew size");
      }
      layer.adapter = OrthogonalAdapter(SkewParam{layer.in_dim(), upper});
      ++used;
    } else if (file.has_tensor(name + ".down")) {
      const Matrix& down = file.tensor(name + ".down");
      const Matrix& up = file.tensor(name + ".up");
      if (down.rows() != layer.in_dim() || up.cols() != layer.out_dim() || down.cols() != up.rows()) {
        throw CompatibilityError("adapter '" + name + "' has the wrong low-rank shape");
      }
      layer.adapter = LowRankAdapter{down.cols(), down, up};
      used += 2;
    }
  });
  if (used != file.tensors.size()) throw CompatibilityError("adapter file holds unknown tensors");
  model = std::move(staged);
}

}  // namespace orthotune
