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
#include <optional>
#include <vector>

#include "bfill/feature_set.hpp"

namespace bfill {

// Class-to-subgroup assignment with a per-subgroup multiplier on the old
// embedder's noise. Subgroup tags are attached to every generated record.
struct SubgroupSpec {
  std::vector<std::int32_t> class_subgroup;  // one tag per class
  std::vector<double> noise_multiplier;      // indexed by subgroup tag
};

// Parameters of the synthetic old/new embedder pair.
//
// Each class has a latent centroid; an item is its centroid plus isotropic
// within-class noise. The new embedder is an orthonormal map of the latent
// point plus `new_noise_sigma` noise. The old embedder is a different linear
// map plus `old_noise_sigma` noise, and for classes outside the first
// `old_class_fraction` of the label space it sees only the within-class
// residual: the class-discriminative offset is collapsed.
struct SyntheticWorldConfig {
  int num_classes = 50;
  int dim = 32;
  int latent_dim = 16;
  int train_per_class = 100;
  int gallery_per_class = 40;
  int query_per_class = 10;
  double centroid_scale = 1.0;
  double within_class_sigma = 0.5;
  double old_noise_sigma = 0.3;
  double new_noise_sigma = 0.1;
  double old_class_fraction = 0.5;
  std::optional<SubgroupSpec> subgroups;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the first invalid field.
  void validate() const;

  // Number of classes the old embedder resolves.
  int known_classes() const;
};

struct World {
  PairedFeatureSet train;
  PairedFeatureSet gallery;
  PairedFeatureSet query;
};

// Deterministic: identical configs give bit-identical worlds. Ids are unique
// across all three splits (train, then gallery, then query).
World generate_world(const SyntheticWorldConfig& cfg);

}  // namespace bfill
