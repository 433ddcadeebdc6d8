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

#include "bfill/feature_set.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

#include "bfill/binary_io.hpp"
#include "bfill/error.hpp"

namespace bfill {
namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 20;
constexpr std::uint32_t kFlagLabels = 1u << 0;
constexpr std::uint32_t kFlagSubgroups = 1u << 1;
constexpr std::uint32_t kFlagIds = 1u << 2;

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::gallery: return "gallery";
    case Role::query: return "query";
    case Role::train: return "train";
  }
  return "unknown";
}

FeatureSet::FeatureSet(std::size_t dim, Role role) : dim_(dim), role_(role) {
  if (dim == 0) throw DimensionError("feature dimension must be positive");
}

void FeatureSet::reserve(std::size_t n) {
  ids_.reserve(n);
  labels_.reserve(n);
  values_.reserve(n * dim_);
  if (has_subgroups_) subgroups_.reserve(n);
}

void FeatureSet::append(std::uint64_t id, std::int32_t label, std::span<const float> vec,
                        std::optional<std::int32_t> subgroup) {
  if (dim_ == 0) throw DimensionError("append to a FeatureSet without dimension");
  if (vec.size() != dim_) {
    throw DimensionError("record " + std::to_string(id) + " has " + std::to_string(vec.size()) +
                         " components, set dimension is " + std::to_string(dim_));
  }
  if (label < 0) throw Error("record " + std::to_string(id) + " has negative label");
  for (float v : vec) {
    if (!std::isfinite(v)) throw Error("record " + std::to_string(id) + " has non-finite component");
  }
  if (empty()) {
    has_subgroups_ = subgroup.has_value();
  } else if (has_subgroups_ != subgroup.has_value()) {
    throw Error("subgroup tags must be present on all records or none");
  }
  ids_.push_back(id);
  labels_.push_back(label);
  if (subgroup) subgroups_.push_back(*subgroup);
  values_.insert(values_.end(), vec.begin(), vec.end());
}

FeatureRecord FeatureSet::record(std::size_t i) const {
  FeatureRecord r;
  r.id = ids_[i];
  r.label = labels_[i];
  if (has_subgroups_) r.subgroup = subgroups_[i];
  auto v = row(i);
  r.vector.assign(v.begin(), v.end());
  return r;
}

void FeatureSet::validate() const {
  if (dim_ == 0) throw DimensionError("feature dimension must be positive");
  if (values_.size() != ids_.size() * dim_ || labels_.size() != ids_.size() ||
      (has_subgroups_ && subgroups_.size() != ids_.size())) {
    throw Error("inconsistent FeatureSet column lengths");
  }
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!seen.insert(ids_[i]).second) throw Error("duplicate id " + std::to_string(ids_[i]));
    if (labels_[i] < 0) throw Error("negative label at row " + std::to_string(i));
  }
  for (float v : values_) {
    if (!std::isfinite(v)) throw Error("non-finite feature component");
  }
}

void PairedFeatureSet::validate() const {
  old_features.validate();
  new_features.validate();
  if (old_features.size() != new_features.size()) {
    throw Error("paired sets differ in length: " + std::to_string(old_features.size()) + " vs " +
                std::to_string(new_features.size()));
  }
  for (std::size_t i = 0; i < new_features.size(); ++i) {
    if (old_features.id(i) != new_features.id(i) || old_features.label(i) != new_features.label(i)) {
      throw Error("paired sets disagree at row " + std::to_string(i));
    }
  }
}

std::vector<std::byte> encode_feature_set(const FeatureSet& set) {
  if (set.dim() == 0) throw DimensionError("cannot encode a FeatureSet of dimension 0");
  const auto n = set.size();
  ByteWriter w;
  w.magic("FFS1");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(set.dim()));
  std::uint32_t flags = kFlagLabels | kFlagIds;
  if (set.has_subgroups()) flags |= kFlagSubgroups;
  w.u32(flags);
  for (float v : set.values()) w.f32(v);
  for (auto l : set.labels()) w.u32(static_cast<std::uint32_t>(l));
  if (set.has_subgroups()) {
    for (auto s : set.subgroups()) w.u32(static_cast<std::uint32_t>(s));
  }
  for (auto id : set.ids()) w.u64(id);
  return w.release();
}

FeatureSet decode_feature_set(std::span<const std::byte> data, Role role) {
  ByteReader r(data);
  r.expect_magic("FFS1");
  const auto version_at = r.offset();
  if (r.u32() != kVersion) throw FormatError(version_at, "unsupported version");
  const std::uint64_t n = r.u32();
  const auto dim_at = r.offset();
  const std::uint64_t d = r.u32();
  if (d == 0) throw FormatError(dim_at, "dimension 0");
  const auto flags_at = r.offset();
  const std::uint32_t flags = r.u32();
  if (flags & ~(kFlagLabels | kFlagSubgroups | kFlagIds)) {
    throw FormatError(flags_at, "unknown flag bits");
  }
  // Size check up front so a corrupt n cannot trigger a huge allocation.
  std::uint64_t per_row = 4 * d;
  if (flags & kFlagLabels) per_row += 4;
  if (flags & kFlagSubgroups) per_row += 4;
  if (flags & kFlagIds) per_row += 8;
  if (n != 0 && r.remaining() / per_row < n) {
    throw FormatError(r.offset() + r.remaining(), "truncated payload: header declares " +
                                                      std::to_string(n) + " records");
  }

  std::vector<float> values(n * d);
  for (auto& v : values) v = r.f32();
  std::vector<std::int32_t> labels(n, 0);
  if (flags & kFlagLabels) {
    for (auto& l : labels) {
      const auto at = r.offset();
      const auto raw = r.u32();
      if (raw > static_cast<std::uint32_t>(INT32_MAX)) throw FormatError(at, "label out of range");
      l = static_cast<std::int32_t>(raw);
    }
  }
  std::vector<std::int32_t> subgroups;
  if (flags & kFlagSubgroups) {
    subgroups.resize(n);
    for (auto& s : subgroups) s = static_cast<std::int32_t>(r.u32());
  }
  std::vector<std::uint64_t> ids(n);
  for (std::uint64_t i = 0; i < n; ++i) ids[i] = (flags & kFlagIds) ? r.u64() : i;
  if (r.remaining() != 0) throw FormatError(r.offset(), "trailing bytes after payload");

  FeatureSet set(static_cast<std::size_t>(d), role);
  set.reserve(n);
  std::unordered_set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::optional<std::int32_t> sg;
    if (flags & kFlagSubgroups) sg = subgroups[i];
    if (!seen.insert(ids[i]).second) {
      throw FormatError(data.size(), "duplicate id " + std::to_string(ids[i]));
    }
    try {
      set.append(ids[i], labels[i], std::span<const float>(values.data() + i * d, d), sg);
    } catch (const Error& e) {
      throw FormatError(kHeaderBytes + 4 * i * d, e.what());
    }
  }
  return set;
}

void write_feature_set(const FeatureSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_feature_set(set);
  write_file_atomic(path, bytes);
}

FeatureSet read_feature_set(const std::filesystem::path& path, Role role) {
  const auto bytes = read_file(path);
  return decode_feature_set(bytes, role);
}

}  // namespace bfill
