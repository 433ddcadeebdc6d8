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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bfill/feature_set.hpp"
#include "bfill/losses.hpp"
#include "bfill/tensornet.hpp"

namespace bfill {

// Linear softmax classifier over new-model features.
struct ClassifierHead {
  Matrix weights;  // k x d
  Vector bias;     // k

  std::size_t classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
  Matrix logits(const Matrix& features) const;

  friend bool operator==(const ClassifierHead& a, const ClassifierHead& b) {
    return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
           a.weights == b.weights && a.bias == b.bias;
  }
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 256;
  double base_lr = 1e-3;
  int warmup_epochs = 2;
  std::uint64_t seed = 0;
  LossConfig loss;

  // Throws ConfigError; `n` is the training-set size.
  void validate(std::size_t n) const;
};

// Hidden layers of width `width_multiplier * d` with relu, identity output.
struct AlignArchitecture {
  int hidden_layers = 2;
  int width_multiplier = 4;
};

// Old-to-new feature map plus a linear log-variance head that reads the
// map's output (shared backbone).
struct AlignNet {
  DenseNet backbone;
  DenseLayer sigma_head;  // 1 x d, identity activation

  std::size_t input_dim() const { return backbone.input_dim(); }
  std::size_t output_dim() const { return backbone.output_dim(); }

  friend bool operator==(const AlignNet&, const AlignNet&) = default;
};

AlignNet make_align_net(std::size_t in_dim, std::size_t out_dim, const AlignArchitecture& arch, Rng& rng);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;  // mean of the optimized per-sample objective
  double l2 = 0.0;
  double disc = 0.0;
  double mean_log_var = 0.0;
  double accuracy = 0.0;  // head training only
};

// Mean objective over a batch and its gradients for every trainable
// parameter. The classifier head is read-only.
struct AlignmentObjective {
  double loss = 0.0;
  double l2 = 0.0;
  double disc = 0.0;
  double mean_log_var = 0.0;
  Gradients backbone;
  Matrix sigma_weights_grad;  // 1 x d
  Vector sigma_bias_grad;     // 1
};

AlignmentObjective alignment_objective(const AlignNet& net, const ClassifierHead& head,
                                       const Matrix& old_batch, const Matrix& new_batch,
                                       std::span<const std::int32_t> labels, const LossConfig& loss,
                                       double lambda);

// Fits a linear softmax head on new features with unsmoothed cross entropy.
// Labels must be contiguous 0..k-1 with k >= 2.
ClassifierHead train_head(const FeatureSet& train_new, const TrainConfig& cfg,
                          std::vector<EpochStats>* history = nullptr);

// Jointly trains the alignment map and log-variance head against a frozen
// classifier head. Throws TrainingError on a non-finite loss.
AlignNet train_alignment(const PairedFeatureSet& pairs, const ClassifierHead& head, const TrainConfig& cfg,
                         const AlignArchitecture& arch = {}, std::vector<EpochStats>* history = nullptr);

// Record-wise map of old features into the new space; ids, labels and
// subgroups are kept.
FeatureSet transform(const AlignNet& net, const FeatureSet& old_features);

// sigma^2 per record, exp of the log-variance head on the mapped features.
std::vector<double> predict_sigma(const AlignNet& net, const FeatureSet& old_features);

// Per-item alignment losses on a held-out paired set, using eps from `loss`.
struct ItemLosses {
  std::vector<double> l2;
  std::vector<double> disc;
  std::vector<double> combined;
};
ItemLosses item_losses(const AlignNet& net, const ClassifierHead& head, const PairedFeatureSet& pairs,
                       const LossConfig& loss);

double head_accuracy(const ClassifierHead& head, const FeatureSet& feats);

Matrix to_matrix(const FeatureSet& set);

// Checkpoints. Head: "FFH1" + FFN1 single layer. AlignNet: "FFA1" + FFN1
// backbone + FFN1 single-layer sigma head.
void write_head(const ClassifierHead& head, const std::filesystem::path& path);
ClassifierHead read_head(const std::filesystem::path& path);
void write_align_net(const AlignNet& net, const std::filesystem::path& path);
AlignNet read_align_net(const std::filesystem::path& path);

}  // namespace bfill
