// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "orthotune/config.hpp"

namespace orthotune {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitContract = 2,
  kExitIo = 3,
  kExitCompatibility = 4,
};

struct EvalReport {
  double base_acc = 0.0;  // percent
  double new_acc = 0.0;   // percent
  double hm = 0.0;
  std::size_t params = 0;
};

inline constexpr const char* kReportHeader = "base_acc,new_acc,hm,params";
std::string report_csv_row(const EvalReport& r);

// Individual commands. Each writes its files plus manifest.txt into out_dir,
// creating the directory if needed, and prints a short summary to out.
void cmd_generate(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);
void cmd_pretrain(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);

struct FinetuneRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  TrainConfig train;
  std::size_t seeds = 1;  // runs seed, seed+1, ...
  std::string config_text;  // snapshot for the manifest
};
void cmd_finetune(const FinetuneRequest& request, std::ostream& out);

EvalReport cmd_eval(const std::filesystem::path& checkpoint,
                    const std::optional<std::filesystem::path>& adapters,
                    const std::filesystem::path& dataset,
                    const std::optional<std::filesystem::path>& out_dir, std::ostream& out);

void cmd_merge(const std::filesystem::path& checkpoint, const std::filesystem::path& adapters,
               const std::filesystem::path& out_dir, std::ostream& out);

// Loads a base checkpoint and, when given, its adapter file.
DualEncoder load_model(const std::filesystem::path& checkpoint,
                       const std::optional<std::filesystem::path>& adapters);

// Full command line (argv[0] is the program name). Never throws; maps errors
// to exit codes and prints them to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace orthotune
