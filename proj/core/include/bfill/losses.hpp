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

#include <Eigen/Core>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace bfill {

enum class LossKind { l2, disc, l2_plus_disc };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct LossConfig {
  double label_smoothing_eps = 0.1;
  // Weight on log sigma^2 is 1/lambda. Unset means 1/d, d the feature width.
  std::optional<double> lambda;
  LossKind kind = LossKind::l2_plus_disc;
  bool uncertainty = true;

  double lambda_for(std::size_t dim) const;
  // Throws ConfigError.
  void validate() const;
};

struct LossGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

// ||target - h||^2 and its gradient 2 (h - target).
LossGrad loss_l2(std::span<const double> h, std::span<const double> target);

// Cross entropy of softmax(logits) against the smoothed target
// (1 - eps) * onehot(label) + eps / k. Gradient is with respect to logits.
LossGrad loss_disc(std::span<const double> logits, int label, double eps);

struct CombinedLoss {
  double value = 0.0;
  double l2 = 0.0;
  double disc = 0.0;
  Eigen::VectorXd grad_h;       // from the pairwise term
  Eigen::VectorXd grad_logits;  // from the discriminative term
};

// L_l2 + L_disc with unit weights, or a single term per cfg.kind. The
// discriminative gradient is returned against the logits; the caller chains it
// through the classifier head.
CombinedLoss loss_combined(std::span<const double> h, std::span<const double> target,
                           std::span<const double> logits, int label, const LossConfig& cfg);

struct UncertainLoss {
  double value = 0.0;
  double d_base = 0.0;
  double d_log_var = 0.0;
};

// exp(-s) * base + s / lambda with s = log sigma^2.
UncertainLoss loss_uncertain(double base, double log_var, double lambda);

}  // namespace bfill
