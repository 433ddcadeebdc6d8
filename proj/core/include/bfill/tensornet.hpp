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
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bfill/binary_io.hpp"
#include "bfill/rng.hpp"

namespace bfill {

// Row-major so that a batch row or a weight row is a contiguous span.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint32_t { identity = 0, relu = 1 };

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::identity;

  std::size_t in() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weights.rows()); }

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.activation == b.activation && a.weights.rows() == b.weights.rows() &&
           a.weights.cols() == b.weights.cols() && a.bias.size() == b.bias.size() &&
           a.weights == b.weights && a.bias == b.bias;
  }
};

// A stack of affine layers with elementwise activations.
class DenseNet {
 public:
  DenseNet() = default;
  // Throws DimensionError if adjacent layers do not chain.
  explicit DenseNet(std::vector<DenseLayer> layers);

  // Glorot-uniform weights, zero biases. `widths` lists input, hidden and
  // output widths; hidden layers use `hidden`, the last layer `output`.
  static DenseNet glorot(std::span<const std::size_t> widths, Activation hidden, Activation output,
                         Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t depth() const noexcept { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  DenseLayer& layer(std::size_t i) { return layers_[i]; }

  // Views over every parameter block in (weights, bias) per-layer order.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const DenseNet&, const DenseNet&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

// Activations recorded by forward() for a single matching backward().
class Tape {
 public:
  Tape() = default;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

 private:
  friend struct ForwardAccess;
  std::vector<Matrix> inputs_;
  std::vector<Matrix> pre_activations_;
};

struct ForwardResult {
  Matrix output;
  Tape tape;
};

struct LayerGrad {
  Matrix weights;
  Vector bias;
};

struct Gradients {
  std::vector<LayerGrad> layers;
  Matrix input_grad;

  // Same block order as DenseNet::parameters().
  std::vector<std::span<const double>> blocks() const;
};

// batch: n x input_dim. Throws DimensionError on width mismatch.
ForwardResult forward(const DenseNet& net, const Matrix& batch);
// Forward without recording.
Matrix predict(const DenseNet& net, const Matrix& batch);
// Exact reverse-mode gradients of the recorded pass; consumes the tape.
Gradients backward(const DenseNet& net, Tape&& tape, const Matrix& output_grad);

// "FFN1": magic, u32 layer count, then per layer u32 {out, in, activation}
// followed by out*in f64 weights (row-major) and out f64 biases.
void encode_dense_net(const DenseNet& net, ByteWriter& w);
DenseNet decode_dense_net(ByteReader& r);
void write_dense_net(const DenseNet& net, const std::filesystem::path& path);
DenseNet read_dense_net(const std::filesystem::path& path);

}  // namespace bfill
