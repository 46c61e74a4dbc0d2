// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "orthotune/checkpoint.hpp"
#include "orthotune/error.hpp"
#include "orthotune/hash.hpp"
#include "test_util.hpp"

using namespace orthotune;
using orthotune::testing::random_images;
using orthotune::testing::random_matrix;
using orthotune::testing::randomize_adapters;
using orthotune::testing::tiny_config;

namespace {

void u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void f64(std::string& s, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  u64(s, bits);
}

// Hand-assembled file with one tensor of the given rank.
std::string handmade(std::uint32_t rank, const std::vector<std::uint64_t>& dims, const std::vector<double>& data) {
  std::string s = "OCRK";
  u32(s, kContainerVersion);
  u32(s, 1);
  u32(s, 1);
  s += "x";
  u32(s, rank);
  for (auto d : dims) u64(s, d);
  for (double v : data) f64(s, v);
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "orthotune-test-checkpoint";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Matrix logits(const DualEncoder& m, const std::vector<Matrix>& images, bool adapters) {
  std::vector<std::size_t> ids(m.config.classes);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return similarity_logits(encode_text(m, ids, adapters), encode_image(m, images, adapters), m.temperature());
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("git blob hashes match git") {
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("container round trips tensors and metadata bit-exactly") {
  std::mt19937_64 rng(1);
  TensorFile f;
  f.add("a", random_matrix(rng, 3, 4));
  f.add("b.c", Matrix(1, 1, -0.0));
  f.add("tiny", Matrix{{std::numeric_limits<double>::denorm_min(), 1e308}});
  f.set("kind", "test");
  f.set("note", "spaces and = signs are fine in values");
  const std::string bytes = encode_tensor_file(f);
  const TensorFile g = decode_tensor_file(bytes);
  REQUIRE(g.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.tensors[i].first == f.tensors[i].first);
    CHECK(g.tensors[i].second == f.tensors[i].second);
  }
  CHECK(std::signbit(g.tensor("b.c")[0]));
  CHECK(g.metadata == f.metadata);
  CHECK(encode_tensor_file(g) == bytes);
  CHECK_THROWS_AS(g.tensor("missing"), LookupError);
  CHECK_THROWS_AS(g.meta("missing"), LookupError);
  CHECK_FALSE(g.find_meta("missing").has_value());
}

TEST_CASE("metadata keys and values are validated") {
  TensorFile f;
  CHECK_THROWS_AS(f.set("a=b", "x"), ContractError);
  CHECK_THROWS_AS(f.set("a\nb", "x"), ContractError);
  CHECK_THROWS_AS(f.set("a", "x\ny"), ContractError);
}

TEST_CASE("rank 0 and rank 1 tensors read back as row matrices") {
  const TensorFile r0 = decode_tensor_file(handmade(0, {}, {2.5}));
  CHECK(r0.tensor("x") == Matrix{{2.5}});
  const TensorFile r1 = decode_tensor_file(handmade(1, {3}, {1, 2, 3}));
  CHECK(r1.tensor("x") == Matrix{{1, 2, 3}});
  CHECK(r1.metadata.empty());
  CHECK_THROWS_AS(decode_tensor_file(handmade(3, {1, 1, 1}, {1})), CompatibilityError);
  CHECK_THROWS_AS(decode_tensor_file(handmade(1, {1}, {std::numeric_limits<double>::quiet_NaN()})),
                  CompatibilityError);
}

TEST_CASE("corrupt files are rejected with the right error") {
  TensorFile f;
  f.add("w", Matrix(2, 2, 1.0));
  f.set("kind", "test");
  const std::string good = encode_tensor_file(f);

  std::string magic = good;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_tensor_file(magic), CompatibilityError);

  std::string version = good;
  version[4] = 99;
  CHECK_THROWS_AS(decode_tensor_file(version), CompatibilityError);

  // Too short to hold the magic: not recognisably ours.
  CHECK_THROWS_AS(decode_tensor_file(""), CompatibilityError);
  CHECK_THROWS_AS(decode_tensor_file(good.substr(0, 3)), CompatibilityError);
  for (std::size_t cut : {std::size_t{4}, std::size_t{10}, good.size() - 20, good.size() - 1}) {
    CAPTURE(cut);
    CHECK_THROWS_AS(decode_tensor_file(good.substr(0, cut)), IoError);
  }
}

TEST_CASE("files on disk carry their path in errors and return a git hash") {
  TensorFile f;
  f.add("w", Matrix(1, 2, 3.0));
  const auto path = scratch("one.ocrk");
  const std::string hash = write_tensor_file(path, f);
  CHECK(hash == git_blob_hash(read_bytes(path)));
  CHECK(read_tensor_file(path).tensor("w") == f.tensor("w"));

  const auto missing = scratch("does-not-exist.ocrk");
  std::filesystem::remove(missing);
  try {
    read_tensor_file(missing);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("does-not-exist.ocrk") != std::string::npos);
  }
  write_bytes(scratch("junk.ocrk"), "not a tensor file");
  CHECK_THROWS_AS(read_tensor_file(scratch("junk.ocrk")), CompatibilityError);
}

TEST_CASE("model checkpoints round trip") {
  const auto m = DualEncoder::init(tiny_config(3), 4);
  const DualEncoder back = model_from_tensors(decode_tensor_file(encode_tensor_file(model_to_tensors(m))));
  std::vector<Matrix> a, b;
  m.for_each_tensor([&](const std::string&, const Matrix& x) { a.push_back(x); });
  back.for_each_tensor([&](const std::string&, const Matrix& x) { b.push_back(x); });
  CHECK(a == b);
  CHECK(back.config.classes == 3);
  CHECK(back.config.embed_dim == m.config.embed_dim);

  TensorFile missing = model_to_tensors(m);
  missing.tensors.pop_back();
  CHECK_THROWS_AS(model_from_tensors(missing), CompatibilityError);
  TensorFile not_model = model_to_tensors(m);
  not_model.set("kind", "adapters");
  CHECK_THROWS_AS(model_from_tensors(not_model), CompatibilityError);
}

TEST_CASE("adapter files restore the adapted forward and check the base") {
  const EncoderConfig c = tiny_config(3);
  std::mt19937_64 rng(5);
  const auto images = random_images(rng, c, 4);
  for (AdapterMode mode : {AdapterMode::kOrthogonal, AdapterMode::kLowRank}) {
    auto tuned = DualEncoder::init(c, 4);
    tuned.attach_adapters(mode, {}, rng);
    randomize_adapters(tuned, rng, 0.3);
    const TensorFile file = decode_tensor_file(encode_tensor_file(adapters_to_tensors(tuned, "abc")));

    auto fresh = DualEncoder::init(c, 4);
    load_adapters(fresh, file, "abc");
    CHECK(logits(fresh, images, true) == logits(tuned, images, true));

    auto other = DualEncoder::init(c, 4);
    CHECK_THROWS_AS(load_adapters(other, file, "def"), CompatibilityError);
    CHECK(other.trainable_parameter_count() == 0);  // untouched on failure

    TensorFile extra = file;
    extra.add("stray", Matrix(1, 1));
    CHECK_THROWS_AS(load_adapters(other, extra, "abc"), CompatibilityError);
    CHECK(other.trainable_parameter_count() == 0);
  }
}

}  // TEST_SUITE
