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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bfill/alignment.hpp"
#include "bfill/backfill.hpp"
#include "bfill/kendall.hpp"
#include "bfill/retrieval.hpp"
#include "bfill/world.hpp"

namespace bfill {

// Everything one experiment run needs: the synthetic world, both training
// recipes, the orderings to compare and how to score them. Parsed from a
// single JSON document; see configs/ for the shipped ones.
struct ExperimentConfig {
  std::string name;
  SyntheticWorldConfig world;
  TrainConfig head{.epochs = 30, .batch_size = 256, .base_lr = 1e-2, .warmup_epochs = 1, .seed = 0, .loss = {}};
  TrainConfig alignment;
  AlignArchitecture architecture;
  std::vector<OrderingPolicy> policies;
  std::vector<Metric> metrics;
  DistanceKind distance = DistanceKind::l2;
  std::size_t alpha_grid_size = 21;
  std::vector<std::uint64_t> seeds;

  // Throws ConfigError.
  void validate() const;
};

// Throws ConfigError; JSON syntax errors name the line, schema errors the
// field path (e.g. "world.num_classes").
ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Normalized JSON with every default filled in; equal configs give equal text.
std::string canonical_json(const ExperimentConfig& cfg);
// First 16 hex digits of the SHA-256 of canonical_json().
std::string config_hash(const ExperimentConfig& cfg);

SyntheticWorldConfig world_config_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedModels {
  ClassifierHead head;
  AlignNet net;
  std::vector<EpochStats> head_history;
  std::vector<EpochStats> align_history;
};

SeedModels train_models(const ExperimentConfig& cfg, const World& world, std::uint64_t seed);

struct PolicyRun {
  OrderingPolicy policy;
  std::vector<std::uint64_t> ordering;
  BackfillReport report;
  std::optional<GapCurve> gap;  // top-1 gap, when subgroups are configured
};

// Builds every configured ordering and its backfilling curve.
std::vector<PolicyRun> run_backfill(const ExperimentConfig& cfg, const World& world, const SeedModels& models,
                                    std::uint64_t seed, unsigned workers = 1);

// Orders compared by the sigma analysis: sigma^2 against per-item
// L_l2+disc, L_l2 and L_disc on the gallery.
struct SigmaAnalysis {
  double tau_combined = 0.0;
  double tau_l2 = 0.0;
  double tau_disc = 0.0;
  std::vector<RankPair> combined_pairs;
};
SigmaAnalysis analyze_sigma(const ExperimentConfig& cfg, const World& world, const SeedModels& models);

// Command-line entry points. Each writes under `out` (or reads `run_dir`)
// and returns the text it prints on success.
struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed_override;
  unsigned jobs = 1;
};

std::string cmd_gen(const CommandOptions& opts);
std::string cmd_train(const CommandOptions& opts);
std::string cmd_backfill(const CommandOptions& opts);
std::string cmd_analyze(const std::filesystem::path& run_dir, unsigned jobs = 1);

// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitDivergence = 3, kExitIo = 4 };

}  // namespace bfill
