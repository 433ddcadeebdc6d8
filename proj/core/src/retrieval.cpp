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

#include "bfill/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "bfill/error.hpp"
#include "bfill/parallel.hpp"

namespace bfill {
namespace {

constexpr std::size_t kGalleryBlock = 256;
constexpr std::size_t kQueryBlock = 32;

// Gallery transposed into column blocks: block b holds d rows of
// kGalleryBlock doubles, so the inner product loop runs over gallery items
// and every pair accumulates its dimensions in the same order.
struct PackedGallery {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t blocks = 0;
  std::vector<double> data;
  std::vector<double> norms;  // squared l2 norms, or l2 norms for cosine
};

double squared_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return s;
}

PackedGallery pack(const FeatureSet& gallery, DistanceKind kind) {
  PackedGallery p;
  p.n = gallery.size();
  p.d = gallery.dim();
  p.blocks = (p.n + kGalleryBlock - 1) / kGalleryBlock;
  p.data.assign(p.blocks * p.d * kGalleryBlock, 0.0);
  p.norms.resize(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto v = gallery.row(i);
    const std::size_t b = i / kGalleryBlock, j = i % kGalleryBlock;
    double* base = p.data.data() + b * p.d * kGalleryBlock;
    for (std::size_t k = 0; k < p.d; ++k) base[k * kGalleryBlock + j] = v[k];
    p.norms[i] = squared_norm(v);
    if (kind == DistanceKind::cosine) {
      if (p.norms[i] == 0.0) throw Error("cosine distance with zero gallery vector at row " + std::to_string(i));
      p.norms[i] = std::sqrt(p.norms[i]);
    }
  }
  return p;
}

// out[a * kGalleryBlock + j] = <q_a, g_j> for `nq` <= 4 queries against the
// gallery items of block b. Each pair accumulates over k in ascending order
// whatever the tile size, so equal vectors give bit-equal distances.
void block_dots(const PackedGallery& p, std::size_t b, const double* q, std::size_t nq, double* out) {
  const double* base = p.data.data() + b * p.d * kGalleryBlock;
  const std::size_t d = p.d;
  std::fill(out, out + nq * kGalleryBlock, 0.0);
  if (nq == 4) {
    double* o0 = out;
    double* o1 = out + kGalleryBlock;
    double* o2 = out + 2 * kGalleryBlock;
    double* o3 = out + 3 * kGalleryBlock;
    for (std::size_t k = 0; k < d; ++k) {
      const double a0 = q[k], a1 = q[d + k], a2 = q[2 * d + k], a3 = q[3 * d + k];
      const double* g = base + k * kGalleryBlock;
      for (std::size_t j = 0; j < kGalleryBlock; ++j) {
        o0[j] += a0 * g[j];
        o1[j] += a1 * g[j];
        o2[j] += a2 * g[j];
        o3[j] += a3 * g[j];
      }
    }
    return;
  }
  for (std::size_t a = 0; a < nq; ++a) {
    double* o = out + a * kGalleryBlock;
    for (std::size_t k = 0; k < d; ++k) {
      const double qk = q[a * d + k];
      const double* g = base + k * kGalleryBlock;
      for (std::size_t j = 0; j < kGalleryBlock; ++j) o[j] += qk * g[j];
    }
  }
}

struct Candidate {
  double dist;
  std::uint32_t index;
};

bool closer(const Candidate& a, const Candidate& b) {
  return a.dist < b.dist || (a.dist == b.dist && a.index < b.index);
}

}  // namespace

std::string_view to_string(DistanceKind kind) {
  return kind == DistanceKind::l2 ? "l2" : "cosine";
}

DistanceKind parse_distance(std::string_view name) {
  if (name == "l2") return DistanceKind::l2;
  if (name == "cosine") return DistanceKind::cosine;
  throw ConfigError("distance", "unknown distance \"" + std::string(name) + "\"");
}

bool RetrievalResult::full_depth() const {
  for (std::size_t q = 0; q < num_queries; ++q) {
    if (row_length[q] != eligible[q]) return false;
  }
  return true;
}

RetrievalResult rank(const FeatureSet& gallery, const FeatureSet& query, const RankOptions& options) {
  if (gallery.dim() != query.dim()) {
    throw DimensionError("gallery width " + std::to_string(gallery.dim()) + " != query width " +
                         std::to_string(query.dim()));
  }
  const std::size_t ng = gallery.size();
  const std::size_t depth = options.depth.value_or(ng);
  if (depth > ng) {
    throw Error("depth " + std::to_string(depth) + " exceeds gallery size " + std::to_string(ng));
  }
  if (ng > UINT32_MAX) throw Error("gallery too large");

  const PackedGallery packed = pack(gallery, options.distance);
  std::unordered_map<std::uint64_t, std::uint32_t> by_id;
  if (options.exclude_same_id) {
    by_id.reserve(ng);
    for (std::size_t i = 0; i < ng; ++i) by_id.emplace(gallery.id(i), static_cast<std::uint32_t>(i));
  }

  RetrievalResult res;
  res.num_queries = query.size();
  res.gallery_size = ng;
  res.depth = depth;
  res.indices.assign(res.num_queries * depth, 0);
  if (options.keep_distances) res.distances.assign(res.num_queries * depth, 0.0);
  res.row_length.assign(res.num_queries, 0);
  res.eligible.assign(res.num_queries, 0);

  const std::size_t d = query.dim();
  const std::size_t nblocks = (res.num_queries + kQueryBlock - 1) / kQueryBlock;
  parallel_for(nblocks, std::max(1u, options.workers), [&](std::size_t qb) {
    const std::size_t q0 = qb * kQueryBlock;
    const std::size_t q1 = std::min(res.num_queries, q0 + kQueryBlock);
    const std::size_t nq = q1 - q0;
    std::vector<double> qbuf(nq * d);
    std::vector<double> qnorm(nq);
    for (std::size_t a = 0; a < nq; ++a) {
      const auto v = query.row(q0 + a);
      for (std::size_t k = 0; k < d; ++k) qbuf[a * d + k] = v[k];
      qnorm[a] = squared_norm(v);
      if (options.distance == DistanceKind::cosine) {
        if (qnorm[a] == 0.0) throw Error("cosine distance with zero query vector at row " + std::to_string(q0 + a));
        qnorm[a] = std::sqrt(qnorm[a]);
      }
    }
    // Distances for this query block against the whole gallery.
    std::vector<double> dist(nq * packed.blocks * kGalleryBlock);
    std::vector<double> dots(4 * kGalleryBlock);
    for (std::size_t b = 0; b < packed.blocks; ++b) {
      const std::size_t g0 = b * kGalleryBlock;
      const std::size_t gn = std::min(kGalleryBlock, ng - g0);
      for (std::size_t a0 = 0; a0 < nq; a0 += 4) {
        const std::size_t tile = std::min<std::size_t>(4, nq - a0);
        block_dots(packed, b, qbuf.data() + a0 * d, tile, dots.data());
        for (std::size_t t = 0; t < tile; ++t) {
          const std::size_t a = a0 + t;
          const double* dot = dots.data() + t * kGalleryBlock;
          double* out = dist.data() + a * packed.blocks * kGalleryBlock + g0;
          if (options.distance == DistanceKind::l2) {
            for (std::size_t j = 0; j < gn; ++j) {
              out[j] = std::max(0.0, qnorm[a] + packed.norms[g0 + j] - 2.0 * dot[j]);
            }
          } else {
            for (std::size_t j = 0; j < gn; ++j) {
              out[j] = 1.0 - dot[j] / (qnorm[a] * packed.norms[g0 + j]);
            }
          }
        }
      }
    }
    std::vector<Candidate> cand;
    cand.reserve(ng);
    for (std::size_t a = 0; a < nq; ++a) {
      const std::size_t q = q0 + a;
      std::int64_t skip = -1;
      if (options.exclude_same_id) {
        if (auto it = by_id.find(query.id(q)); it != by_id.end()) skip = it->second;
      }
      cand.clear();
      const double* row = dist.data() + a * packed.blocks * kGalleryBlock;
      for (std::size_t j = 0; j < ng; ++j) {
        if (static_cast<std::int64_t>(j) != skip) cand.push_back({row[j], static_cast<std::uint32_t>(j)});
      }
      const std::size_t keep = std::min(depth, cand.size());
      if (keep < cand.size()) {
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), closer);
      } else {
        std::sort(cand.begin(), cand.end(), closer);
      }
      res.eligible[q] = static_cast<std::uint32_t>(cand.size());
      res.row_length[q] = static_cast<std::uint32_t>(keep);
      for (std::size_t r = 0; r < keep; ++r) {
        res.indices[q * depth + r] = cand[r].index;
        if (options.keep_distances) res.distances[q * depth + r] = cand[r].dist;
      }
    }
  });
  return res;
}

namespace {

void check_labels(const RetrievalResult& result, std::span<const std::int32_t> gallery_labels,
                  std::span<const std::int32_t> query_labels) {
  if (gallery_labels.size() != result.gallery_size || query_labels.size() != result.num_queries) {
    throw DimensionError("label arrays do not match the retrieval result");
  }
}

}  // namespace

std::vector<std::uint8_t> hits_at_k(const RetrievalResult& result, std::span<const std::int32_t> gallery_labels,
                                    std::span<const std::int32_t> query_labels, std::size_t k) {
  check_labels(result, gallery_labels, query_labels);
  if (k == 0 || k > result.depth) {
    throw Error("k = " + std::to_string(k) + " outside [1, depth = " + std::to_string(result.depth) + "]");
  }
  std::vector<std::uint8_t> hits(result.num_queries, 0);
  for (std::size_t q = 0; q < result.num_queries; ++q) {
    const auto row = result.row(q);
    const std::size_t n = std::min(k, row.size());
    for (std::size_t r = 0; r < n; ++r) {
      if (gallery_labels[row[r]] == query_labels[q]) {
        hits[q] = 1;
        break;
      }
    }
  }
  return hits;
}

double cmc_top_k(const RetrievalResult& result, std::span<const std::int32_t> gallery_labels,
                 std::span<const std::int32_t> query_labels, std::size_t k) {
  const auto hits = hits_at_k(result, gallery_labels, query_labels, k);
  if (hits.empty()) return 0.0;
  std::size_t total = 0;
  for (auto h : hits) total += h;
  return static_cast<double>(total) / static_cast<double>(hits.size());
}

std::vector<std::optional<double>> average_precisions(const RetrievalResult& result,
                                                      std::span<const std::int32_t> gallery_labels,
                                                      std::span<const std::int32_t> query_labels) {
  check_labels(result, gallery_labels, query_labels);
  if (!result.full_depth()) throw Error("average precision needs a full-depth ranking");
  std::vector<std::optional<double>> out(result.num_queries);
  for (std::size_t q = 0; q < result.num_queries; ++q) {
    const auto row = result.row(q);
    std::size_t found = 0;
    double sum = 0.0;
    for (std::size_t r = 0; r < row.size(); ++r) {
      if (gallery_labels[row[r]] == query_labels[q]) {
        ++found;
        sum += static_cast<double>(found) / static_cast<double>(r + 1);
      }
    }
    if (found > 0) out[q] = sum / static_cast<double>(found);
  }
  return out;
}

MapSummary mean_average_precision(const RetrievalResult& result, std::span<const std::int32_t> gallery_labels,
                                  std::span<const std::int32_t> query_labels) {
  MapSummary s;
  for (const auto& ap : average_precisions(result, gallery_labels, query_labels)) {
    if (ap) {
      s.value += *ap;
      ++s.evaluated;
    } else {
      ++s.skipped;
    }
  }
  if (s.evaluated > 0) s.value /= static_cast<double>(s.evaluated);
  return s;
}

}  // namespace bfill
