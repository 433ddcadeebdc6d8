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

#include "bfill/tensornet.hpp"

#include <cmath>
#include <string>

#include "bfill/error.hpp"

namespace bfill {

struct ForwardAccess {
  static std::vector<Matrix>& inputs(Tape& t) { return t.inputs_; }
  static std::vector<Matrix>& pre(Tape& t) { return t.pre_activations_; }
};

namespace {

void apply_activation(Activation act, Matrix& m) {
  if (act == Activation::relu) m = m.cwiseMax(0.0);
}

std::string dims(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weights.rows() == 0 || l.weights.cols() == 0) {
      throw DimensionError("layer " + std::to_string(i) + " has an empty weight matrix");
    }
    if (l.bias.size() != l.weights.rows()) {
      throw DimensionError("layer " + std::to_string(i) + " bias length does not match output width");
    }
    if (i > 0 && l.in() != layers_[i - 1].out()) {
      throw DimensionError("layer " + std::to_string(i) + " input width " + std::to_string(l.in()) +
                           " does not chain with previous output " + std::to_string(layers_[i - 1].out()));
    }
  }
}

DenseNet DenseNet::glorot(std::span<const std::size_t> widths, Activation hidden, Activation output,
                          Rng& rng) {
  if (widths.size() < 2) throw DimensionError("need at least input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(widths[i]);
    const auto out = static_cast<Eigen::Index>(widths[i + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer l;
    l.weights.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.weights(r, c) = rng.uniform(-limit, limit);
    l.bias = Vector::Zero(out);
    l.activation = (i + 2 == widths.size()) ? output : hidden;
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in(); }
std::size_t DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out(); }

std::vector<std::span<double>> DenseNet::parameters() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> DenseNet::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers_) {
    out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

bool DenseNet::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

std::vector<std::span<const double>> Gradients::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& g : layers) {
    out.emplace_back(g.weights.data(), static_cast<std::size_t>(g.weights.size()));
    out.emplace_back(g.bias.data(), static_cast<std::size_t>(g.bias.size()));
  }
  return out;
}

ForwardResult forward(const DenseNet& net, const Matrix& batch) {
  if (net.depth() == 0) throw DimensionError("forward through an empty network");
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim()) {
    throw DimensionError("batch width " + std::to_string(batch.cols()) + " does not match input dim " +
                         std::to_string(net.input_dim()));
  }
  ForwardResult res;
  auto& inputs = ForwardAccess::inputs(res.tape);
  auto& pre = ForwardAccess::pre(res.tape);
  inputs.reserve(net.depth());
  pre.reserve(net.depth());
  Matrix x = batch;
  for (const auto& l : net.layers()) {
    Matrix z = x * l.weights.transpose();
    z.rowwise() += l.bias.transpose();
    inputs.push_back(std::move(x));
    x = z;
    apply_activation(l.activation, x);
    pre.push_back(std::move(z));
  }
  res.output = std::move(x);
  return res;
}

Matrix predict(const DenseNet& net, const Matrix& batch) {
  if (net.depth() == 0) throw DimensionError("forward through an empty network");
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim()) {
    throw DimensionError("batch width " + std::to_string(batch.cols()) + " does not match input dim " +
                         std::to_string(net.input_dim()));
  }
  Matrix x = batch;
  for (const auto& l : net.layers()) {
    Matrix z = x * l.weights.transpose();
    z.rowwise() += l.bias.transpose();
    apply_activation(l.activation, z);
    x = std::move(z);
  }
  return x;
}

Gradients backward(const DenseNet& net, Tape&& tape, const Matrix& output_grad) {
  Tape consumed = std::move(tape);
  auto& inputs = ForwardAccess::inputs(consumed);
  auto& pre = ForwardAccess::pre(consumed);
  if (inputs.size() != net.depth() || pre.size() != net.depth()) {
    throw DimensionError("tape records " + std::to_string(inputs.size()) + " layers, network has " +
                         std::to_string(net.depth()));
  }
  for (std::size_t i = 0; i < net.depth(); ++i) {
    const auto& l = net.layers()[i];
    if (static_cast<std::size_t>(inputs[i].cols()) != l.in() ||
        static_cast<std::size_t>(pre[i].cols()) != l.out()) {
      throw DimensionError("tape does not match layer " + std::to_string(i));
    }
  }
  const auto n = inputs.front().rows();
  if (output_grad.rows() != n || static_cast<std::size_t>(output_grad.cols()) != net.output_dim()) {
    throw DimensionError("output gradient is " + dims(output_grad.rows(), output_grad.cols()) +
                         ", expected " + dims(n, static_cast<Eigen::Index>(net.output_dim())));
  }

  Gradients g;
  g.layers.resize(net.depth());
  Matrix upstream = output_grad;
  for (std::size_t i = net.depth(); i-- > 0;) {
    const auto& l = net.layers()[i];
    if (l.activation == Activation::relu) {
      upstream = upstream.cwiseProduct((pre[i].array() > 0.0).cast<double>().matrix());
    }
    g.layers[i].weights = upstream.transpose() * inputs[i];
    g.layers[i].bias = upstream.colwise().sum().transpose();
    upstream = upstream * l.weights;
  }
  g.input_grad = std::move(upstream);
  return g;
}

void encode_dense_net(const DenseNet& net, ByteWriter& w) {
  w.magic("FFN1");
  w.u32(static_cast<std::uint32_t>(net.depth()));
  for (const auto& l : net.layers()) {
    w.u32(static_cast<std::uint32_t>(l.out()));
    w.u32(static_cast<std::uint32_t>(l.in()));
    w.u32(static_cast<std::uint32_t>(l.activation));
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) w.f64(l.weights.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias(i));
  }
}

DenseNet decode_dense_net(ByteReader& r) {
  r.expect_magic("FFN1");
  const auto count = r.u32();
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    const auto out = r.u32();
    const auto in = r.u32();
    const auto act = r.u32();
    if (out == 0 || in == 0) throw FormatError(at, "layer with zero width");
    if (act > static_cast<std::uint32_t>(Activation::relu)) throw FormatError(at + 8, "unknown activation tag");
    const std::uint64_t n = std::uint64_t{out} * in + out;
    if (r.remaining() / 8 < n) throw FormatError(r.offset(), "truncated layer parameters");
    DenseLayer l;
    l.activation = static_cast<Activation>(act);
    l.weights.resize(out, in);
    for (Eigen::Index k = 0; k < l.weights.size(); ++k) l.weights.data()[k] = r.f64();
    l.bias.resize(out);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = r.f64();
    layers.push_back(std::move(l));
  }
  try {
    return DenseNet(std::move(layers));
  } catch (const DimensionError& e) {
    throw FormatError(r.offset(), e.what());
  }
}

void write_dense_net(const DenseNet& net, const std::filesystem::path& path) {
  ByteWriter w;
  encode_dense_net(net, w);
  write_file_atomic(path, w.buffer());
}

DenseNet read_dense_net(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  auto net = decode_dense_net(r);
  if (r.remaining() != 0) throw FormatError(r.offset(), "trailing bytes after network");
  return net;
}

}  // namespace bfill
