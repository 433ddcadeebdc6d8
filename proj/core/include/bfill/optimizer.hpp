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
#include <span>
#include <vector>

namespace bfill {

// Linear warmup followed by optional cosine decay to zero.
//
// During warmup (step < warmup_steps) the rate is base * (step + 1) /
// warmup_steps. Afterwards it is base, or with cosine decay
// base * (1 + cos(pi * t / T)) / 2 where t counts post-warmup steps and T is
// total_steps - warmup_steps.
struct LrSchedule {
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 0;
  bool cosine = false;

  double at(std::int64_t step) const;
};

// Adam with bias-corrected moments.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  // `sizes` gives the length of each parameter block.
  Adam(std::vector<std::size_t> sizes, LrSchedule schedule);
  Adam(std::vector<std::size_t> sizes, LrSchedule schedule, Options options);

  // Applies one update in place. Throws DimensionError on block mismatch and
  // TrainingError (with the step index) if any gradient is non-finite; the
  // parameters are untouched in that case.
  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads);

  std::int64_t steps_taken() const noexcept { return step_; }
  double current_lr() const { return schedule_.at(step_); }
  const LrSchedule& schedule() const noexcept { return schedule_; }

 private:
  LrSchedule schedule_;
  Options options_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::int64_t step_ = 0;
};

}  // namespace bfill
