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

#include "bfill/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "bfill/error.hpp"

namespace bfill {

double LrSchedule::at(std::int64_t step) const {
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (!cosine) return base_lr;
  const auto span = std::max<std::int64_t>(1, total_steps - warmup_steps);
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Adam::Adam(std::vector<std::size_t> sizes, LrSchedule schedule)
    : Adam(std::move(sizes), schedule, Options{}) {}

Adam::Adam(std::vector<std::size_t> sizes, LrSchedule schedule, Options options)
    : schedule_(schedule), options_(options) {
  for (auto n : sizes) {
    first_.emplace_back(n, 0.0);
    second_.emplace_back(n, 0.0);
  }
}

void Adam::step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
  if (params.size() != first_.size() || grads.size() != first_.size()) {
    throw DimensionError("optimizer tracks " + std::to_string(first_.size()) + " blocks, got " +
                         std::to_string(params.size()) + " params / " + std::to_string(grads.size()) + " grads");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != first_[b].size() || grads[b].size() != first_[b].size()) {
      throw DimensionError("optimizer block " + std::to_string(b) + " size mismatch");
    }
    for (double g : grads[b]) {
      if (!std::isfinite(g)) throw TrainingError(step_, "non-finite gradient");
    }
  }

  const double lr = schedule_.at(step_);
  ++step_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = first_[b];
    auto& v = second_[b];
    auto p = params[b];
    auto g = grads[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.epsilon);
    }
  }
}

}  // namespace bfill
