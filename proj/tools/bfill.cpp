// Copyright 2026 The bfill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bfill/error.hpp"
#include "bfill/experiment.hpp"

namespace {

int run(const std::function<std::string()>& fn) {
  try {
    std::cout << fn();
    return bfill::kExitOk;
  } catch (const bfill::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return bfill::kExitConfig;
  } catch (const bfill::TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return bfill::kExitDivergence;
  } catch (const bfill::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return bfill::kExitIo;
  } catch (const bfill::FormatError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return bfill::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bfill::kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial backfilling experiments on synthetic embedding worlds"};
  app.require_subcommand(1);

  bfill::CommandOptions opts;
  std::optional<std::uint64_t> seed_override;
  unsigned jobs = 1;
  std::string run_dir;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "Experiment JSON")->required();
    sub->add_option("--out", opts.out, "Output directory")->required();
    sub->add_option("--seed-override", seed_override, "Run only this seed");
    sub->add_option("--jobs", jobs, "Seeds processed in parallel")->check(CLI::PositiveNumber);
  };
  auto* gen = app.add_subcommand("gen", "Generate paired old/new feature stores");
  add_common(gen);
  auto* train = app.add_subcommand("train", "Train the classifier head and alignment map");
  add_common(train);
  auto* backfill = app.add_subcommand("backfill", "Evaluate backfilling curves for every ordering");
  add_common(backfill);
  auto* analyze = app.add_subcommand("analyze", "Flip counts, rank correlations, subgroup fractions");
  analyze->add_option("run_dir", run_dir, "Directory written by the other commands")->required();
  analyze->add_option("--jobs", jobs, "Seeds processed in parallel")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? bfill::kExitOk : bfill::kExitConfig;
  }
  opts.seed_override = seed_override;
  opts.jobs = jobs;

  if (*gen) return run([&] { return bfill::cmd_gen(opts); });
  if (*train) return run([&] { return bfill::cmd_train(opts); });
  if (*backfill) return run([&] { return bfill::cmd_backfill(opts); });
  return run([&] { return bfill::cmd_analyze(run_dir, jobs); });
}
