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

#include "bfill/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bfill/error.hpp"

namespace bfill {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::l2: return "l2";
    case LossKind::disc: return "disc";
    case LossKind::l2_plus_disc: return "l2_plus_disc";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "l2") return LossKind::l2;
  if (name == "disc") return LossKind::disc;
  if (name == "l2_plus_disc") return LossKind::l2_plus_disc;
  throw ConfigError("loss.kind", "unknown loss kind \"" + std::string(name) + "\"");
}

double LossConfig::lambda_for(std::size_t dim) const {
  return lambda ? *lambda : 1.0 / static_cast<double>(dim);
}

void LossConfig::validate() const {
  if (!(label_smoothing_eps >= 0.0 && label_smoothing_eps < 1.0)) {
    throw ConfigError("loss.label_smoothing_eps", "must lie in [0, 1)");
  }
  if (lambda && !(*lambda > 0.0 && std::isfinite(*lambda))) {
    throw ConfigError("loss.lambda", "must be positive and finite");
  }
}

LossGrad loss_l2(std::span<const double> h, std::span<const double> target) {
  if (h.size() != target.size()) {
    throw DimensionError("l2 loss operands differ in length: " + std::to_string(h.size()) + " vs " +
                         std::to_string(target.size()));
  }
  LossGrad out;
  out.grad.resize(static_cast<Eigen::Index>(h.size()));
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double diff = h[i] - target[i];
    out.value += diff * diff;
    out.grad(static_cast<Eigen::Index>(i)) = 2.0 * diff;
  }
  return out;
}

LossGrad loss_disc(std::span<const double> logits, int label, double eps) {
  const auto k = logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= k) {
    throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(k) + " classes");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  const double log_norm = peak + std::log(total);

  const double uniform = eps / static_cast<double>(k);
  LossGrad out;
  out.grad.resize(static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j) {
    const double target = uniform + (static_cast<int>(j) == label ? 1.0 - eps : 0.0);
    const double log_p = logits[j] - log_norm;
    out.value -= target * log_p;
    out.grad(static_cast<Eigen::Index>(j)) = std::exp(log_p) - target;
  }
  return out;
}

CombinedLoss loss_combined(std::span<const double> h, std::span<const double> target,
                           std::span<const double> logits, int label, const LossConfig& cfg) {
  CombinedLoss out;
  if (cfg.kind != LossKind::disc) {
    auto l2 = loss_l2(h, target);
    out.l2 = l2.value;
    out.grad_h = std::move(l2.grad);
  } else {
    if (h.size() != target.size()) throw DimensionError("h and target differ in length");
    out.grad_h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h.size()));
  }
  if (cfg.kind != LossKind::l2) {
    auto disc = loss_disc(logits, label, cfg.label_smoothing_eps);
    out.disc = disc.value;
    out.grad_logits = std::move(disc.grad);
  } else {
    out.grad_logits = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(logits.size()));
  }
  out.value = out.l2 + out.disc;
  return out;
}

UncertainLoss loss_uncertain(double base, double log_var, double lambda) {
  if (!std::isfinite(base) || !std::isfinite(log_var) || !std::isfinite(lambda) || lambda <= 0.0) {
    throw Error("loss_uncertain requires finite inputs and lambda > 0");
  }
  const double precision = std::exp(-log_var);
  UncertainLoss out;
  out.value = precision * base + log_var / lambda;
  out.d_base = precision;
  out.d_log_var = -precision * base + 1.0 / lambda;
  return out;
}

}  // namespace bfill
