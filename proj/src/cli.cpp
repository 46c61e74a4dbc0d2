// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <ostream>
#include <sstream>

#include "orthotune/checkpoint.hpp"
#include "orthotune/error.hpp"
#include "orthotune/hash.hpp"

namespace orthotune {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.txt";

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Ordered key=value lines; one per output directory.
class Manifest {
 public:
  explicit Manifest(std::string command) { put("command", std::move(command)); }

  void put(const std::string& key, const std::string& value) { lines_ += key + "=" + value + "\n"; }
  void input(const std::string& role, const fs::path& path) {
    put("input." + role, path.string());
    put("input." + role + ".hash", git_blob_hash(read_bytes(path)));
  }
  void output(const std::string& role, const fs::path& path, const std::string& hash) {
    put("output." + role, path.string());
    put("output." + role + ".hash", hash);
  }
  void config(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (eq != std::string::npos) put("config." + line.substr(0, eq), line.substr(eq + 3));
    }
  }
  void write(const fs::path& dir) const { write_bytes(dir / kManifest, lines_); }

 private:
  std::string lines_;
};

std::string write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, text);
  return git_blob_hash(text);
}

EvalReport evaluate_split(const DualEncoder& model, const FewShotSplit& split) {
  EvalReport r;
  r.base_acc = 100.0 * evaluate(model, split.base_test, split.base_ids, true);
  r.new_acc = 100.0 * evaluate(model, split.new_test, split.new_ids, true);
  r.hm = harmonic_mean(r.base_acc, r.new_acc);
  r.params = model.trainable_parameter_count();
  return r;
}

void print_report(std::ostream& out, const std::string& label, const EvalReport& r) {
  out << label << ": base " << fixed(r.base_acc, 2) << "  new " << fixed(r.new_acc, 2) << "  hm "
      << fixed(r.hm, 2) << "  params " << r.params << "\n";
}

FewShotSplit load_dataset(const fs::path& path) { return dataset_from_tensors(read_tensor_file(path)); }

}  // namespace

std::string report_csv_row(const EvalReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%zu", r.base_acc, r.new_acc, r.hm, r.params);
  return buf;
}

void cmd_generate(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  ensure_dir(out_dir);
  const FewShotSplit split = generate(config.dataset);
  const fs::path data = out_dir / "dataset.ocrk";
  Manifest m("generate");
  m.config(render_config(config));
  m.output("dataset", data, write_tensor_file(data, dataset_to_tensors(split)));
  m.write(out_dir);
  out << "dataset: " << split.train.size() << " train, " << split.base_test.size() << " base test, "
      << split.new_test.size() << " new test -> " << data.string() << "\n";
}

void cmd_pretrain(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  ensure_dir(out_dir);
  RunConfig c = config;
  c.encoder.classes = c.dataset.classes;
  const FewShotSplit split = generate(c.dataset);
  const PretrainResult result = pretrain(c.encoder, split, c.pretrain);

  const fs::path ckpt = out_dir / "pretrained.ocrk";
  const fs::path data = out_dir / "dataset.ocrk";
  Manifest m("pretrain");
  m.config(render_config(c));
  m.put("seeds", std::to_string(c.pretrain.seed));
  m.output("checkpoint", ckpt, write_tensor_file(ckpt, model_to_tensors(result.model)));
  m.output("dataset", data, write_tensor_file(data, dataset_to_tensors(split)));
  m.write(out_dir);

  const EvalReport zs = evaluate_split(result.model, split);
  out << "pretrained " << c.pretrain.steps << " steps, final loss " << fixed(result.losses.back(), 4)
      << ", tau " << fixed(result.model.temperature(), 4) << "\n";
  print_report(out, "zero-shot", zs);
}

DualEncoder load_model(const fs::path& checkpoint, const std::optional<fs::path>& adapters) {
  const std::string bytes = read_bytes(checkpoint);
  DualEncoder model;
  try {
    model = model_from_tensors(decode_tensor_file(bytes));
  } catch (const CompatibilityError& e) {
    throw CompatibilityError(checkpoint.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(checkpoint.string() + ": " + e.what());
  }
  if (adapters) load_adapters(model, read_tensor_file(*adapters), git_blob_hash(bytes));
  return model;
}

void cmd_finetune(const FinetuneRequest& req, std::ostream& out) {
  if (req.seeds == 0) throw ContractError("--seeds must be at least 1");
  const std::string base_hash = git_blob_hash(read_bytes(req.checkpoint));
  const DualEncoder base = load_model(req.checkpoint, std::nullopt);
  const FewShotSplit split = load_dataset(req.dataset);
  if (split.classes != base.config.classes) {
    throw CompatibilityError("dataset has " + std::to_string(split.classes) + " classes, checkpoint " +
                             std::to_string(base.config.classes));
  }
  ensure_dir(req.out_dir);

  Manifest top("finetune");
  top.config(req.config_text);
  top.input("checkpoint", req.checkpoint);
  top.input("dataset", req.dataset);
  std::string seeds;
  std::string summary = std::string("seed,") + kReportHeader + "\n";
  EvalReport mean;
  for (std::size_t i = 0; i < req.seeds; ++i) {
    TrainConfig tc = req.train;
    tc.seed = req.train.seed + i;
    tc.cutout.seed = req.train.cutout.seed + i;
    seeds += (i ? "," : "") + std::to_string(tc.seed);

    const FinetuneResult result = finetune(base, split, tc);
    const fs::path dir = req.seeds == 1 ? req.out_dir : req.out_dir / ("seed-" + std::to_string(tc.seed));
    ensure_dir(dir);
    const fs::path adapters = dir / "adapters.ocrk";
    const fs::path metrics = dir / "metrics.csv";
    const std::string a_hash = write_tensor_file(adapters, adapters_to_tensors(result.model, base_hash));
    const std::string m_hash = write_text(metrics, metrics_csv(result.metrics));
    if (req.seeds == 1) {
      top.output("adapters", adapters, a_hash);
      top.output("metrics", metrics, m_hash);
    } else {
      Manifest m("finetune");
      m.config(req.config_text);
      m.put("seeds", std::to_string(tc.seed));
      m.input("checkpoint", req.checkpoint);
      m.input("dataset", req.dataset);
      m.output("adapters", adapters, a_hash);
      m.output("metrics", metrics, m_hash);
      m.write(dir);
    }

    const EvalReport r = evaluate_split(result.model, split);
    print_report(out, "seed " + std::to_string(tc.seed), r);
    summary += std::to_string(tc.seed) + "," + report_csv_row(r) + "\n";
    mean.base_acc += r.base_acc / static_cast<double>(req.seeds);
    mean.new_acc += r.new_acc / static_cast<double>(req.seeds);
    mean.params = r.params;
  }
  top.put("seeds", seeds);
  if (req.seeds > 1) {
    mean.hm = harmonic_mean(mean.base_acc, mean.new_acc);
    summary += "mean," + report_csv_row(mean) + "\n";
    const fs::path s = req.out_dir / "summary.csv";
    top.output("summary", s, write_text(s, summary));
    print_report(out, "mean", mean);
  }
  top.write(req.out_dir);
}

EvalReport cmd_eval(const fs::path& checkpoint, const std::optional<fs::path>& adapters,
                    const fs::path& dataset, const std::optional<fs::path>& out_dir, std::ostream& out) {
  const DualEncoder model = load_model(checkpoint, adapters);
  const FewShotSplit split = load_dataset(dataset);
  if (split.classes != model.config.classes) throw CompatibilityError("dataset and checkpoint class counts differ");
  const EvalReport r = evaluate_split(model, split);
  print_report(out, adapters ? "adapted" : "zero-shot", r);
  if (out_dir) {
    ensure_dir(*out_dir);
    Manifest m("eval");
    m.input("checkpoint", checkpoint);
    if (adapters) m.input("adapters", *adapters);
    m.input("dataset", dataset);
    const fs::path report = *out_dir / "report.csv";
    m.output("report", report, write_text(report, std::string(kReportHeader) + "\n" + report_csv_row(r) + "\n"));
    m.write(*out_dir);
  }
  return r;
}

void cmd_merge(const fs::path& checkpoint, const fs::path& adapters, const fs::path& out_dir,
               std::ostream& out) {
  const DualEncoder merged = load_model(checkpoint, adapters).merged();
  ensure_dir(out_dir);
  Manifest m("merge");
  m.input("checkpoint", checkpoint);
  m.input("adapters", adapters);
  const fs::path path = out_dir / "merged.ocrk";
  const std::string hash = write_tensor_file(path, model_to_tensors(merged));
  m.output("checkpoint", path, hash);
  m.write(out_dir);
  out << "merged -> " << path.string() << " (" << hash << ")\n";
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, out, err);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Orthogonal finetuning of a miniature dual encoder", "orthotune"};
  app.require_subcommand(1);

  std::string config_path;
  fs::path out_dir;

  auto* gen = app.add_subcommand("generate", "Write a synthetic few-shot dataset");
  gen->add_option("--config", config_path, "Key/value config file");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Pretrain the dual encoder on all classes");
  pre->add_option("--config", config_path, "Key/value config file");
  pre->add_option("--out", out_dir, "Output directory")->required();

  fs::path checkpoint, dataset, adapters_path;
  auto* fin = app.add_subcommand("finetune", "Train adapters on the base classes");
  fin->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  fin->add_option("--dataset", dataset, "Dataset file")->required();
  fin->add_option("--out", out_dir, "Output directory")->required();
  fin->add_option("--config", config_path, "Key/value config file (flags override it)");
  std::optional<std::string> adapter, branches;
  std::optional<double> lambda1, lambda2, lr;
  std::optional<std::size_t> cutout_min, cutout_max, epochs;
  std::optional<std::uint64_t> seed;
  std::size_t seeds = 1;
  bool short_schedule = false;
  fin->add_option("--adapter", adapter, "orthogonal, lowrank or none");
  fin->add_option("--lambda1", lambda1, "Weight of the classification terms");
  fin->add_option("--lambda2", lambda2, "Weight of the distillation terms");
  fin->add_option("--cutout-min", cutout_min, "Smallest number of patches cut");
  fin->add_option("--cutout-max", cutout_max, "Largest number of patches cut");
  fin->add_option("--seed", seed, "Run seed");
  fin->add_option("--seeds", seeds, "Number of consecutive seeds to run and average");
  fin->add_option("--epochs", epochs, "Training epochs");
  fin->add_option("--lr", lr, "Peak learning rate");
  fin->add_option("--branches", branches, "Adapted branches: both, image or text");
  fin->add_flag("--short-schedule", short_schedule, "Use the 5-epoch, lr 1e-5 schedule");

  std::optional<fs::path> eval_adapters, eval_out;
  auto* ev = app.add_subcommand("eval", "Report base/new accuracy and their harmonic mean");
  ev->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  ev->add_option("--adapters", eval_adapters, "Adapter file; zero-shot when omitted");
  ev->add_option("--dataset", dataset, "Dataset file")->required();
  ev->add_option("--out", eval_out, "Directory for report.csv");

  auto* mer = app.add_subcommand("merge", "Fold adapters into the base weights");
  mer->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  mer->add_option("--adapters", adapters_path, "Adapter file")->required();
  mer->add_option("--out", out_dir, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "orthotune: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (*gen) {
      cmd_generate(config, out_dir, out);
    } else if (*pre) {
      cmd_pretrain(config, out_dir, out);
    } else if (*fin) {
      if (short_schedule) {
        const TrainConfig s = TrainConfig::short_schedule();
        config.train.epochs = s.epochs;
        config.train.batch_size = s.batch_size;
        config.train.lr = s.lr;
        config.train.warmup_epochs = s.warmup_epochs;
        config.train.warmup_lr = s.warmup_lr;
      }
      if (adapter) apply_setting(config, "adapter", *adapter);
      if (branches) apply_setting(config, "branches", *branches);
      if (lambda1) config.train.weights.lambda1 = *lambda1;
      if (lambda2) config.train.weights.lambda2 = *lambda2;
      if (cutout_min) config.train.cutout.k_min = *cutout_min;
      if (cutout_max) config.train.cutout.k_max = *cutout_max;
      if (epochs) config.train.epochs = *epochs;
      if (lr) config.train.lr = *lr;
      if (seed) {
        config.train.seed = *seed;
        config.train.cutout.seed = *seed;
      }
      FinetuneRequest req{checkpoint, dataset, out_dir, config.train, seeds, render_config(config)};
      cmd_finetune(req, out);
    } else if (*ev) {
      cmd_eval(checkpoint, eval_adapters, dataset, eval_out, out);
    } else if (*mer) {
      cmd_merge(checkpoint, adapters_path, out_dir, out);
    }
  } catch (const IoError& e) {
    err << "orthotune: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CompatibilityError& e) {
    err << "orthotune: incompatible input: " << e.what() << "\n";
    return kExitCompatibility;
  } catch (const Error& e) {
    err << "orthotune: " << e.what() << "\n";
    return kExitContract;
  }
  return kExitOk;
}

}  // namespace orthotune
