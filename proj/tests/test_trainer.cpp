// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "orthotune/error.hpp"
#include "orthotune/trainer.hpp"
#include "test_util.hpp"

using namespace orthotune;
using orthotune::testing::tiny_config;
using orthotune::testing::tiny_data;

namespace {

struct World {
  EncoderConfig config = tiny_config(4);
  FewShotSplit split = generate(tiny_data(4, 1));
  PretrainResult pre;

  World() {
    PretrainConfig p;
    p.steps = 60;
    p.batch_size = 8;
    p.per_class = 20;
    p.seed = 2;
    pre = pretrain(config, split, p);
  }
};

const World& world() {
  static const World w;
  return w;
}

TrainConfig small_train() {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 4;
  c.lr = 0.05;
  c.warmup_lr = 0.005;
  c.cutout = CutoutPolicy{1, 2, 3};
  c.seed = 7;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("learning rate schedule: constant warmup then cosine") {
  const TrainConfig p = TrainConfig::short_schedule();
  CHECK(p.epochs == 5);
  CHECK(p.batch_size == 4);
  CHECK(p.lr == 1e-5);
  CHECK(lr_at(p, 0.0) == 1e-6);
  CHECK(lr_at(p, 0.99) == 1e-6);
  CHECK(lr_at(p, 1.0) == 1e-5);
  CHECK(lr_at(p, 3.0) == doctest::Approx(0.5e-5).epsilon(1e-12));
  CHECK(std::abs(lr_at(p, 5.0)) <= 1e-20);
  CHECK_THROWS_AS(lr_at(p, -0.1), ContractError);
  CHECK_THROWS_AS(lr_at(p, 5.1), ContractError);
  double prev = lr_at(p, 1.0);
  for (double t = 1.05; t <= 5.0; t += 0.05) {
    const double now = lr_at(p, t);
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("config validation") {
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.epochs = 0; }).validate(), ContractError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), ContractError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.lr = -1; }).validate(), ContractError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.warmup_epochs = 99; }).validate(), ContractError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.weights.lambda2 = -1; }).validate(), ContractError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.cutout = CutoutPolicy{3, 2, 0}; }).validate(), ContractError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("metrics csv uses the fixed header and round-trippable numbers") {
  const std::vector<MetricRow> rows{{0, 0, 0.1, 1.0 / 3.0, 2.0, 0.0, 1e-300, 5.4, 0.0, 1e-16},
                                    {1, 1, 0.0, 1.0, 1.0, 1.0, 1.0, 5.4, 0.25, 0.0}};
  const std::string csv = metrics_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == kMetricsHeader);
  CHECK(csv.find('\r') == std::string::npos);
  std::getline(in, line);
  CHECK(line.rfind("0,0,0.10000000000000001,0.33333333333333331,2,0,1e-300,", 0) == 0);
  std::vector<double> fields;
  std::istringstream row(line);
  for (std::string f; std::getline(row, f, ',');) fields.push_back(std::strtod(f.c_str(), nullptr));
  REQUIRE(fields.size() == 10);
  CHECK(fields[3] == rows[0].l_ce);
  CHECK(fields[6] == rows[0].l_cutout_kl);
  CHECK(fields[9] == rows[0].orth_residual);

  const auto means = epoch_mean_totals(std::vector<MetricRow>{{0, 0, 0, 0, 0, 0, 0, 1.0, 0, 0},
                                                              {1, 0, 0, 0, 0, 0, 0, 3.0, 0, 0},
                                                              {2, 1, 0, 0, 0, 0, 0, 7.0, 0, 0}});
  CHECK(means == std::vector<double>{2.0, 7.0});
}

TEST_CASE("zero learning rate keeps the zero-shot model") {
  const World& w = world();
  TrainConfig c = small_train();
  c.lr = 0.0;
  c.warmup_lr = 0.0;
  const FinetuneResult r = finetune(w.pre.model, w.split, c);
  REQUIRE(r.metrics.size() == c.epochs * 2);  // 8 samples in batches of 4
  for (const MetricRow& m : r.metrics) {
    CHECK(m.l_kl == 0.0);
    CHECK(m.he_drift == 0.0);
    CHECK(m.orth_residual == 0.0);
    CHECK(m.l_cutout_ce > 0.0);
  }
  for (const auto* set : {&w.split.base_test, &w.split.new_test}) {
    const auto& ids = set == &w.split.base_test ? w.split.base_ids : w.split.new_ids;
    CHECK(evaluate(r.model, *set, ids, true) == evaluate(w.pre.model, *set, ids, false));
  }
}

TEST_CASE("without adapters or cutout every epoch sees the same mean loss") {
  const World& w = world();
  TrainConfig c = small_train();
  c.adapter_mode = AdapterMode::kNone;
  c.cutout = CutoutPolicy{0, 0, 0};
  const FinetuneResult r = finetune(w.pre.model, w.split, c);
  const auto means = epoch_mean_totals(r.metrics);
  for (double m : means) CHECK(m == doctest::Approx(means.front()).epsilon(1e-12));
  for (const MetricRow& m : r.metrics) {
    CHECK(m.l_cutout_ce == m.l_ce);  // k = 0 leaves the image whole
    CHECK(m.l_kl == 0.0);
    CHECK(m.l_cutout_kl == 0.0);
  }
}

TEST_CASE("orthogonal finetuning preserves orthogonality and energy") {
  const World& w = world();
  const FinetuneResult r = finetune(w.pre.model, w.split, small_train());
  for (const MetricRow& m : r.metrics) {
    CHECK(m.orth_residual <= 1e-10);
    CHECK(m.he_drift <= 1e-10);
  }
  double moved = 0.0;
  r.model.for_each_ffn([&](const std::string&, const FrozenLinear& l) {
    if (const auto* o = std::get_if<OrthogonalAdapter>(&l.adapter)) moved = std::max(moved, max_abs(o->skew().upper));
  });
  CHECK(moved > 0.0);
  CHECK(r.frozen_hash == frozen_hash(w.pre.model));
}

TEST_CASE("low-rank finetuning drifts the energy") {
  const World& w = world();
  TrainConfig c = small_train();
  c.adapter_mode = AdapterMode::kLowRank;
  const FinetuneResult r = finetune(w.pre.model, w.split, c);
  CHECK(r.metrics.back().he_drift > 0.0);
  for (const MetricRow& m : r.metrics) CHECK(m.orth_residual == 0.0);
}

TEST_CASE("training loss decreases on the tiny problem") {
  const World& w = world();
  TrainConfig c = small_train();
  c.epochs = 12;
  const auto means = epoch_mean_totals(finetune(w.pre.model, w.split, c).metrics);
  CHECK(means.back() < means.front());
}

TEST_CASE("runs are bitwise deterministic and seed-sensitive") {
  const World& w = world();
  const TrainConfig c = small_train();
  const std::string a = metrics_csv(finetune(w.pre.model, w.split, c).metrics);
  const std::string b = metrics_csv(finetune(w.pre.model, w.split, c).metrics);
  CHECK(a == b);
  TrainConfig other = c;
  other.seed = 8;
  CHECK(metrics_csv(finetune(w.pre.model, w.split, other).metrics) != a);
}

TEST_CASE("detached branches get no gradient during real steps") {
  const World& w = world();
  Finetuner t(w.pre.model, w.split, small_train());
  const std::vector<std::size_t> batch{0, 3, 5, 6};
  t.step(batch, 0.05, 1);  // leave the identity so the KL term has a gradient
  DetachAudit audit;
  t.step(batch, 0.05, 2, &audit);
  CHECK(audit.kl_wrt_image == 0.0);
  CHECK(audit.cutout_kl_wrt_text == 0.0);
  CHECK(audit.kl_wrt_text > 0.0);
  CHECK(audit.cutout_kl_wrt_image > 0.0);
  const std::vector<std::size_t> out_of_range{99};
  CHECK_THROWS_AS(t.step(out_of_range, 0.0, 1), LookupError);
  CHECK_THROWS_AS(t.step({}, 0.0, 1), ContractError);
}

TEST_CASE("bad finetune inputs") {
  const World& w = world();
  TrainConfig c = small_train();
  c.cutout = CutoutPolicy{2, 5, 0};  // more cells than the 2x2 grid has
  CHECK_THROWS_AS(Finetuner(w.pre.model, w.split, c), ContractError);

  FewShotSplit six = generate(tiny_data(6));
  CHECK_THROWS_AS(Finetuner(w.pre.model, six, small_train()), CompatibilityError);

  FewShotSplit stray = w.split;
  stray.train[0].label = stray.new_ids[0];
  CHECK_THROWS_AS(Finetuner(w.pre.model, stray, small_train()), ContractError);

  FewShotSplit empty = w.split;
  empty.train.clear();
  CHECK_THROWS_AS(Finetuner(w.pre.model, empty, small_train()), ContractError);
}

TEST_CASE("prediction is chunk-independent and evaluation is a fraction") {
  const World& w = world();
  const auto images = images_of(w.split.base_test);
  std::vector<Matrix> many;
  for (int rep = 0; rep < 6; ++rep) many.insert(many.end(), images.begin(), images.end());  // > one chunk
  const auto all = predict(w.pre.model, many, w.split.base_ids, false);
  REQUIRE(all.size() == many.size());
  for (std::size_t i = 0; i < many.size(); ++i) {
    const auto one = predict(w.pre.model, std::span(many).subspan(i, 1), w.split.base_ids, false);
    CHECK(one[0] == all[i]);
    CHECK((all[i] == w.split.base_ids[0] || all[i] == w.split.base_ids[1]));
  }
  const double acc = evaluate(w.pre.model, w.split.base_test, w.split.base_ids, false);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK_THROWS_AS(evaluate(w.pre.model, {}, w.split.base_ids, false), ContractError);
}

TEST_CASE("prediction breaks exact ties toward the first class") {
  const World& w = world();
  const std::vector<std::size_t> twice{2, 2, 2};
  for (std::size_t p : predict(w.pre.model, images_of(w.split.base_test), twice, false)) CHECK(p == 2);
  // A repeated id later in the list never wins over its first occurrence.
  const std::vector<std::size_t> ids{0, 1, 0};
  const auto pred = predict(w.pre.model, images_of(w.split.base_test), ids, false);
  const auto two = predict(w.pre.model, images_of(w.split.base_test), std::vector<std::size_t>{0, 1}, false);
  CHECK(pred == two);
}

TEST_CASE("pretraining learns and clamps the temperature") {
  const World& w = world();
  const auto& l = w.pre.losses;
  REQUIRE(l.size() == 60);
  const double first = std::accumulate(l.begin(), l.begin() + 10, 0.0);
  const double last = std::accumulate(l.end() - 10, l.end(), 0.0);
  CHECK(last < first);
  CHECK(w.pre.model.temperature() >= kMinTemperature * (1 - 1e-12));

  std::vector<std::size_t> all{0, 1, 2, 3};
  std::vector<LabeledImage> everything = w.split.base_test;
  everything.insert(everything.end(), w.split.new_test.begin(), w.split.new_test.end());
  CHECK(evaluate(w.pre.model, everything, all, false) > 0.25);  // above chance

  PretrainConfig p;
  p.steps = 3;
  CHECK_THROWS_AS(pretrain(tiny_config(6), w.split, p), ContractError);
}

}  // TEST_SUITE
