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

#include "bfill/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "bfill/binary_io.hpp"
#include "bfill/error.hpp"
#include "bfill/optimizer.hpp"

namespace bfill {
namespace {

Matrix gather(const FeatureSet& set, std::span<const std::size_t> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(set.dim()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto v = set.row(rows[r]);
    for (std::size_t j = 0; j < v.size(); ++j) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v[j];
  }
  return m;
}

std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

LrSchedule make_schedule(const TrainConfig& cfg, std::size_t n) {
  const auto per_epoch = static_cast<std::int64_t>((n + cfg.batch_size - 1) / cfg.batch_size);
  LrSchedule s;
  s.base_lr = cfg.base_lr;
  s.warmup_steps = per_epoch * cfg.warmup_epochs;
  s.total_steps = per_epoch * cfg.epochs;
  s.cosine = true;
  return s;
}

std::vector<std::size_t> block_sizes(std::span<const std::span<double>> blocks) {
  std::vector<std::size_t> sizes;
  for (auto b : blocks) sizes.push_back(b.size());
  return sizes;
}

Vector sigma_outputs(const DenseLayer& head, const Matrix& h) {
  return (h * head.weights.transpose()).col(0).array() + head.bias(0);
}

void check_labels(const FeatureSet& set, std::size_t classes) {
  for (auto l : set.labels()) {
    if (static_cast<std::size_t>(l) >= classes) {
      throw Error("label " + std::to_string(l) + " not covered by a " + std::to_string(classes) + "-class head");
    }
  }
}

}  // namespace

Matrix to_matrix(const FeatureSet& set) {
  Matrix m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(set.dim()));
  const auto vals = set.values();
  for (std::size_t i = 0; i < vals.size(); ++i) m.data()[i] = vals[i];
  return m;
}

Matrix ClassifierHead::logits(const Matrix& features) const {
  if (static_cast<std::size_t>(features.cols()) != dim()) {
    throw DimensionError("head expects width " + std::to_string(dim()) + ", got " + std::to_string(features.cols()));
  }
  Matrix z = features * weights.transpose();
  z.rowwise() += bias.transpose();
  return z;
}

void TrainConfig::validate(std::size_t n) const {
  if (epochs <= 0) throw ConfigError("epochs", "must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size", "must be positive");
  if (static_cast<std::size_t>(batch_size) > n) {
    throw ConfigError("batch_size", "exceeds training set size " + std::to_string(n));
  }
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ConfigError("base_lr", "must be positive");
  if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("warmup_epochs", "must lie in [0, epochs]");
  loss.validate();
}

AlignNet make_align_net(std::size_t in_dim, std::size_t out_dim, const AlignArchitecture& arch, Rng& rng) {
  if (arch.hidden_layers < 0 || arch.width_multiplier <= 0) {
    throw ConfigError("architecture", "hidden_layers >= 0 and width_multiplier > 0 required");
  }
  std::vector<std::size_t> widths{in_dim};
  for (int i = 0; i < arch.hidden_layers; ++i) widths.push_back(static_cast<std::size_t>(arch.width_multiplier) * out_dim);
  widths.push_back(out_dim);
  AlignNet net;
  net.backbone = DenseNet::glorot(widths, Activation::relu, Activation::identity, rng);
  const std::size_t head_widths[] = {out_dim, 1};
  net.sigma_head = DenseNet::glorot(head_widths, Activation::identity, Activation::identity, rng).layers()[0];
  return net;
}

namespace {

// An oversized step can overflow the weights even when every gradient was
// finite; catch that here instead of in the next forward pass.
void require_finite(const std::vector<std::span<double>>& params, std::int64_t step) {
  for (const auto& block : params) {
    for (double v : block) {
      if (!std::isfinite(v)) throw TrainingError(step, "parameters diverged");
    }
  }
}

}  // namespace

AlignmentObjective alignment_objective(const AlignNet& net, const ClassifierHead& head,
                                       const Matrix& old_batch, const Matrix& new_batch,
                                       std::span<const std::int32_t> labels, const LossConfig& loss,
                                       double lambda) {
  const auto n = old_batch.rows();
  if (new_batch.rows() != n || labels.size() != static_cast<std::size_t>(n) || n == 0) {
    throw DimensionError("objective batch rows disagree");
  }
  if (static_cast<std::size_t>(new_batch.cols()) != net.output_dim() || head.dim() != net.output_dim() ||
      static_cast<std::size_t>(net.sigma_head.weights.cols()) != net.output_dim()) {
    throw DimensionError("alignment net, head and targets disagree on feature width");
  }
  auto fwd = forward(net.backbone, old_batch);
  const Matrix& h = fwd.output;
  const bool use_disc = loss.kind != LossKind::l2;
  const Matrix logits = use_disc ? head.logits(h) : Matrix::Zero(n, static_cast<Eigen::Index>(head.classes()));
  const Vector log_var = loss.uncertainty ? sigma_outputs(net.sigma_head, h) : Vector::Zero(n);

  AlignmentObjective out;
  if (!h.allFinite() || !logits.allFinite() || !log_var.allFinite()) {
    // Overflowed forward pass: report it as a non-finite loss.
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix grad_h(n, h.cols());
  Matrix grad_logits = Matrix::Zero(n, static_cast<Eigen::Index>(head.classes()));
  Vector grad_log_var = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = loss_combined(row_span(h, i), row_span(new_batch, i), row_span(logits, i),
                                 labels[static_cast<std::size_t>(i)], loss);
    double value = c.value;
    double d_base = 1.0;
    if (loss.uncertainty) {
      const auto u = loss_uncertain(c.value, log_var(i), lambda);
      value = u.value;
      d_base = u.d_base;
      grad_log_var(i) = u.d_log_var * inv_n;
    }
    out.loss += value * inv_n;
    out.l2 += c.l2 * inv_n;
    out.disc += c.disc * inv_n;
    out.mean_log_var += log_var(i) * inv_n;
    grad_h.row(i) = (d_base * inv_n) * c.grad_h.transpose();
    if (use_disc) grad_logits.row(i) = (d_base * inv_n) * c.grad_logits.transpose();
  }
  if (use_disc) grad_h += grad_logits * head.weights;
  if (loss.uncertainty) grad_h += grad_log_var * net.sigma_head.weights;

  out.sigma_weights_grad = grad_log_var.transpose() * h;
  out.sigma_bias_grad = Vector::Constant(1, grad_log_var.sum());
  out.backbone = backward(net.backbone, std::move(fwd.tape), grad_h);
  return out;
}

ClassifierHead train_head(const FeatureSet& train_new, const TrainConfig& cfg, std::vector<EpochStats>* history) {
  cfg.validate(train_new.size());
  std::int32_t max_label = 0;
  for (auto l : train_new.labels()) max_label = std::max(max_label, l);
  const auto k = static_cast<std::size_t>(max_label) + 1;
  std::vector<char> seen(k, 0);
  for (auto l : train_new.labels()) seen[static_cast<std::size_t>(l)] = 1;
  if (k < 2) throw Error("head training needs at least 2 classes");
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw Error("head training labels must be contiguous 0..k-1");
  }

  Rng rng(derive_seed(cfg.seed, 11));
  const std::size_t widths[] = {train_new.dim(), k};
  DenseNet layer = DenseNet::glorot(widths, Activation::identity, Activation::identity, rng);
  auto params = layer.parameters();
  Adam opt(block_sizes(params), make_schedule(cfg, train_new.size()));

  const std::size_t n = train_new.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto rows = std::span(order).subspan(start, std::min<std::size_t>(cfg.batch_size, n - start));
      const Matrix x = gather(train_new, rows);
      auto fwd = forward(layer, x);
      const double inv = 1.0 / static_cast<double>(rows.size());
      Matrix grad(fwd.output.rows(), fwd.output.cols());
      double batch_loss = 0.0;
      for (Eigen::Index i = 0; i < grad.rows(); ++i) {
        const auto label = train_new.label(rows[static_cast<std::size_t>(i)]);
        const auto d = loss_disc(row_span(fwd.output, i), label, 0.0);
        batch_loss += d.value;
        grad.row(i) = inv * d.grad.transpose();
        Eigen::Index arg = 0;
        fwd.output.row(i).maxCoeff(&arg);
        if (arg == label) ++correct;
      }
      if (!std::isfinite(batch_loss)) throw TrainingError(opt.steps_taken(), "non-finite head loss");
      stats.loss += batch_loss / static_cast<double>(n);
      const auto g = backward(layer, std::move(fwd.tape), grad);
      opt.step(params, g.blocks());
      require_finite(params, opt.steps_taken());
    }
    stats.disc = stats.loss;
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (history) history->push_back(stats);
  }
  ClassifierHead head;
  head.weights = layer.layers()[0].weights;
  head.bias = layer.layers()[0].bias;
  return head;
}

AlignNet train_alignment(const PairedFeatureSet& pairs, const ClassifierHead& head, const TrainConfig& cfg,
                         const AlignArchitecture& arch, std::vector<EpochStats>* history) {
  pairs.validate();
  const std::size_t n = pairs.size();
  cfg.validate(n);
  const auto d_new = pairs.new_features.dim();
  if (head.dim() != d_new) throw DimensionError("head width does not match new feature width");
  check_labels(pairs.new_features, head.classes());
  const double lambda = cfg.loss.lambda_for(d_new);

  Rng rng(derive_seed(cfg.seed, 23));
  AlignNet net = make_align_net(pairs.old_features.dim(), d_new, arch, rng);
  auto params = net.backbone.parameters();
  params.emplace_back(net.sigma_head.weights.data(), static_cast<std::size_t>(net.sigma_head.weights.size()));
  params.emplace_back(net.sigma_head.bias.data(), 1);
  Adam opt(block_sizes(params), make_schedule(cfg, n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::int32_t> labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto rows = std::span(order).subspan(start, std::min<std::size_t>(cfg.batch_size, n - start));
      const Matrix x_old = gather(pairs.old_features, rows);
      const Matrix x_new = gather(pairs.new_features, rows);
      labels.clear();
      for (auto r : rows) labels.push_back(pairs.new_features.label(r));
      auto obj = alignment_objective(net, head, x_old, x_new, labels, cfg.loss, lambda);
      if (!std::isfinite(obj.loss)) throw TrainingError(opt.steps_taken(), "non-finite alignment loss");
      const double w = static_cast<double>(rows.size()) / static_cast<double>(n);
      stats.loss += w * obj.loss;
      stats.l2 += w * obj.l2;
      stats.disc += w * obj.disc;
      stats.mean_log_var += w * obj.mean_log_var;
      auto grads = obj.backbone.blocks();
      grads.emplace_back(obj.sigma_weights_grad.data(), static_cast<std::size_t>(obj.sigma_weights_grad.size()));
      grads.emplace_back(obj.sigma_bias_grad.data(), 1);
      opt.step(params, grads);
      require_finite(params, opt.steps_taken());
    }
    if (history) history->push_back(stats);
  }
  return net;
}

FeatureSet transform(const AlignNet& net, const FeatureSet& old_features) {
  if (old_features.dim() != net.input_dim()) {
    throw DimensionError("transform expects width " + std::to_string(net.input_dim()) + ", got " +
                         std::to_string(old_features.dim()));
  }
  FeatureSet out(net.output_dim(), old_features.role());
  out.reserve(old_features.size());
  if (old_features.empty()) return out;
  const Matrix h = predict(net.backbone, to_matrix(old_features));
  std::vector<float> row(net.output_dim());
  for (std::size_t i = 0; i < old_features.size(); ++i) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = static_cast<float>(h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    std::optional<std::int32_t> sg;
    if (old_features.has_subgroups()) sg = old_features.subgroup(i);
    out.append(old_features.id(i), old_features.label(i), row, sg);
  }
  return out;
}

std::vector<double> predict_sigma(const AlignNet& net, const FeatureSet& old_features) {
  if (old_features.dim() != net.input_dim()) {
    throw DimensionError("predict_sigma expects width " + std::to_string(net.input_dim()) + ", got " +
                         std::to_string(old_features.dim()));
  }
  if (old_features.empty()) return {};
  const Vector s = sigma_outputs(net.sigma_head, predict(net.backbone, to_matrix(old_features)));
  std::vector<double> out(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) out[static_cast<std::size_t>(i)] = std::exp(s(i));
  return out;
}

ItemLosses item_losses(const AlignNet& net, const ClassifierHead& head, const PairedFeatureSet& pairs,
                       const LossConfig& loss) {
  pairs.validate();
  if (pairs.old_features.dim() != net.input_dim() || pairs.new_features.dim() != net.output_dim()) {
    throw DimensionError("paired set widths do not match the alignment net");
  }
  check_labels(pairs.new_features, head.classes());
  ItemLosses out;
  const auto n = pairs.size();
  if (n == 0) return out;
  const Matrix h = predict(net.backbone, to_matrix(pairs.old_features));
  const Matrix target = to_matrix(pairs.new_features);
  const Matrix logits = head.logits(h);
  LossConfig full = loss;
  full.kind = LossKind::l2_plus_disc;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto c = loss_combined(row_span(h, r), row_span(target, r), row_span(logits, r),
                                 pairs.new_features.label(i), full);
    out.l2.push_back(c.l2);
    out.disc.push_back(c.disc);
    out.combined.push_back(c.value);
  }
  return out;
}

double head_accuracy(const ClassifierHead& head, const FeatureSet& feats) {
  if (feats.empty()) return 0.0;
  const Matrix z = head.logits(to_matrix(feats));
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    z.row(i).maxCoeff(&arg);
    if (arg == feats.label(static_cast<std::size_t>(i))) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(feats.size());
}

void write_head(const ClassifierHead& head, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic("FFH1");
  w.u32(static_cast<std::uint32_t>(head.classes()));
  w.u32(static_cast<std::uint32_t>(head.dim()));
  encode_dense_net(DenseNet({DenseLayer{head.weights, head.bias, Activation::identity}}), w);
  write_file_atomic(path, w.buffer());
}

ClassifierHead read_head(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("FFH1");
  const auto k = r.u32();
  const auto d = r.u32();
  const auto at = r.offset();
  const auto net = decode_dense_net(r);
  if (net.depth() != 1 || net.output_dim() != k || net.input_dim() != d) {
    throw FormatError(at, "head payload does not match its header");
  }
  if (r.remaining() != 0) throw FormatError(r.offset(), "trailing bytes after head");
  return ClassifierHead{net.layers()[0].weights, net.layers()[0].bias};
}

void write_align_net(const AlignNet& net, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic("FFA1");
  encode_dense_net(net.backbone, w);
  encode_dense_net(DenseNet({net.sigma_head}), w);
  write_file_atomic(path, w.buffer());
}

AlignNet read_align_net(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("FFA1");
  AlignNet net;
  net.backbone = decode_dense_net(r);
  const auto at = r.offset();
  const auto head = decode_dense_net(r);
  if (head.depth() != 1 || head.output_dim() != 1 || head.input_dim() != net.backbone.output_dim()) {
    throw FormatError(at, "sigma head does not read the backbone output");
  }
  if (r.remaining() != 0) throw FormatError(r.offset(), "trailing bytes after alignment net");
  net.sigma_head = head.layers()[0];
  return net;
}

}  // namespace bfill
