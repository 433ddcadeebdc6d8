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

#include "bfill/world.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "bfill/error.hpp"
#include "bfill/rng.hpp"

namespace bfill {
namespace {

Eigen::MatrixXd gaussian_matrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// d x l matrix with orthonormal columns.
Eigen::MatrixXd orthonormal_columns(Rng& rng, int d, int l) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(rng, d, l));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, l);
  // Fix column signs so the factorization is unique.
  const Eigen::MatrixXd r = qr.matrixQR().topRows(l).triangularView<Eigen::Upper>();
  for (int j = 0; j < l; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

struct Embedders {
  Eigen::MatrixXd centroids;  // k x latent
  Eigen::MatrixXd new_map;    // d x latent
  Eigen::MatrixXd old_map;    // d x latent
};

PairedFeatureSet sample_split(const SyntheticWorldConfig& cfg, const Embedders& emb, int per_class,
                              Role role, std::uint64_t first_id, std::uint64_t stream) {
  Rng rng(derive_seed(cfg.seed, stream));
  const int known = cfg.known_classes();
  PairedFeatureSet out{FeatureSet(static_cast<std::size_t>(cfg.dim), role),
                       FeatureSet(static_cast<std::size_t>(cfg.dim), role)};
  const auto total = static_cast<std::size_t>(per_class) * static_cast<std::size_t>(cfg.num_classes);
  out.old_features.reserve(total);
  out.new_features.reserve(total);

  Eigen::VectorXd residual(cfg.latent_dim);
  std::vector<float> old_vec(cfg.dim), new_vec(cfg.dim);
  std::uint64_t id = first_id;
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::optional<std::int32_t> tag;
    double old_sigma = cfg.old_noise_sigma;
    if (cfg.subgroups) {
      tag = cfg.subgroups->class_subgroup[c];
      old_sigma *= cfg.subgroups->noise_multiplier[*tag];
    }
    for (int i = 0; i < per_class; ++i, ++id) {
      for (int l = 0; l < cfg.latent_dim; ++l) residual(l) = cfg.within_class_sigma * rng.normal();
      const Eigen::VectorXd latent = emb.centroids.row(c).transpose() + residual;
      const Eigen::VectorXd fresh = emb.new_map * latent;
      const Eigen::VectorXd stale = emb.old_map * (c < known ? latent : residual);
      for (int j = 0; j < cfg.dim; ++j) {
        new_vec[j] = static_cast<float>(fresh(j) + cfg.new_noise_sigma * rng.normal());
      }
      for (int j = 0; j < cfg.dim; ++j) {
        old_vec[j] = static_cast<float>(stale(j) + old_sigma * rng.normal());
      }
      out.new_features.append(id, c, new_vec, tag);
      out.old_features.append(id, c, old_vec, tag);
    }
  }
  return out;
}

}  // namespace

int SyntheticWorldConfig::known_classes() const {
  const int k = static_cast<int>(std::lround(old_class_fraction * num_classes));
  return std::clamp(k, 1, num_classes);
}

void SyntheticWorldConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes", "need at least 2 classes");
  if (dim <= 0) throw ConfigError("dim", "must be positive");
  if (latent_dim <= 0) throw ConfigError("latent_dim", "must be positive");
  if (latent_dim > dim) throw ConfigError("latent_dim", "must not exceed dim");
  if (train_per_class <= 0) throw ConfigError("train_per_class", "must be positive");
  if (gallery_per_class <= 0) throw ConfigError("gallery_per_class", "must be positive");
  if (query_per_class <= 0) throw ConfigError("query_per_class", "must be positive");
  if (!(centroid_scale > 0) || !std::isfinite(centroid_scale)) {
    throw ConfigError("centroid_scale", "must be positive and finite");
  }
  if (!(within_class_sigma >= 0) || !std::isfinite(within_class_sigma)) {
    throw ConfigError("within_class_sigma", "must be nonnegative and finite");
  }
  if (!(old_noise_sigma >= 0) || !std::isfinite(old_noise_sigma)) {
    throw ConfigError("old_noise_sigma", "must be nonnegative and finite");
  }
  if (!(new_noise_sigma >= 0) || !std::isfinite(new_noise_sigma)) {
    throw ConfigError("new_noise_sigma", "must be nonnegative and finite");
  }
  // Equal only in the noiseless case.
  if (new_noise_sigma > old_noise_sigma || (old_noise_sigma > 0 && new_noise_sigma == old_noise_sigma)) {
    throw ConfigError("new_noise_sigma", "must be below old_noise_sigma (the new model is the stronger one)");
  }
  if (!(old_class_fraction > 0 && old_class_fraction <= 1)) {
    throw ConfigError("old_class_fraction", "must lie in (0, 1]");
  }
  if (subgroups) {
    if (subgroups->class_subgroup.size() != static_cast<std::size_t>(num_classes)) {
      throw ConfigError("subgroups.class_subgroup", "needs one entry per class");
    }
    for (auto tag : subgroups->class_subgroup) {
      if (tag < 0 || static_cast<std::size_t>(tag) >= subgroups->noise_multiplier.size()) {
        throw ConfigError("subgroups.class_subgroup", "tag " + std::to_string(tag) + " has no noise multiplier");
      }
    }
    for (double m : subgroups->noise_multiplier) {
      if (!(m >= 0) || !std::isfinite(m)) {
        throw ConfigError("subgroups.noise_multiplier", "must be nonnegative and finite");
      }
    }
  }
}

World generate_world(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));
  Embedders emb;
  emb.centroids = cfg.centroid_scale * gaussian_matrix(rng, cfg.num_classes, cfg.latent_dim);
  emb.new_map = orthonormal_columns(rng, cfg.dim, cfg.latent_dim);
  // A different basis with per-direction gains in [0.5, 1.5]: invertible on
  // the latent space but not an isometry.
  emb.old_map = orthonormal_columns(rng, cfg.dim, cfg.latent_dim);
  for (int l = 0; l < cfg.latent_dim; ++l) emb.old_map.col(l) *= rng.uniform(0.5, 1.5);

  const auto k = static_cast<std::uint64_t>(cfg.num_classes);
  const std::uint64_t n_train = k * static_cast<std::uint64_t>(cfg.train_per_class);
  const std::uint64_t n_gallery = k * static_cast<std::uint64_t>(cfg.gallery_per_class);
  World w;
  w.train = sample_split(cfg, emb, cfg.train_per_class, Role::train, 0, 1);
  w.gallery = sample_split(cfg, emb, cfg.gallery_per_class, Role::gallery, n_train, 2);
  w.query = sample_split(cfg, emb, cfg.query_per_class, Role::query, n_train + n_gallery, 3);
  return w;
}

}  // namespace bfill
