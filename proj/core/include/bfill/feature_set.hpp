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
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace bfill {

enum class Role : std::uint8_t { gallery, query, train };

std::string_view to_string(Role role);

// One labeled feature vector. Used for construction and inspection; a
// FeatureSet stores its records column-wise.
struct FeatureRecord {
  std::uint64_t id = 0;
  std::int32_t label = 0;
  std::optional<std::int32_t> subgroup;
  std::vector<float> vector;
};

// Labeled d-dimensional feature vectors. Values are stored as 32-bit floats
// (the on-disk precision); arithmetic elsewhere promotes to double.
//
// Invariants: every row has `dim()` finite components, labels are
// non-negative, ids are unique, and subgroup tags are either present on every
// record or on none.
class FeatureSet {
 public:
  FeatureSet() = default;
  explicit FeatureSet(std::size_t dim, Role role = Role::gallery);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  Role role() const noexcept { return role_; }
  void set_role(Role role) noexcept { role_ = role; }

  // Throws DimensionError on length mismatch, Error on bad label/non-finite.
  void append(std::uint64_t id, std::int32_t label, std::span<const float> vec,
              std::optional<std::int32_t> subgroup = std::nullopt);
  void append(const FeatureRecord& rec) { append(rec.id, rec.label, rec.vector, rec.subgroup); }
  void reserve(std::size_t n);

  std::uint64_t id(std::size_t i) const { return ids_[i]; }
  std::int32_t label(std::size_t i) const { return labels_[i]; }
  bool has_subgroups() const noexcept { return has_subgroups_; }
  std::int32_t subgroup(std::size_t i) const { return subgroups_[i]; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<float> mutable_row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  FeatureRecord record(std::size_t i) const;

  std::span<const std::uint64_t> ids() const noexcept { return ids_; }
  std::span<const std::int32_t> labels() const noexcept { return labels_; }
  std::span<const std::int32_t> subgroups() const noexcept { return subgroups_; }
  std::span<const float> values() const noexcept { return values_; }

  // Full invariant check (including id uniqueness); throws Error.
  void validate() const;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;

 private:
  std::size_t dim_ = 0;
  Role role_ = Role::gallery;
  bool has_subgroups_ = false;
  std::vector<std::uint64_t> ids_;
  std::vector<std::int32_t> labels_;
  std::vector<std::int32_t> subgroups_;
  std::vector<float> values_;
};

// Old- and new-model features of the same items, aligned row by row.
struct PairedFeatureSet {
  FeatureSet old_features;
  FeatureSet new_features;

  std::size_t size() const noexcept { return new_features.size(); }
  // Same length, ids and labels per row; throws Error otherwise.
  void validate() const;

  friend bool operator==(const PairedFeatureSet&, const PairedFeatureSet&) = default;
};

// "FFS1" feature-store format: magic, then little-endian u32 {version=1, n,
// d, flags}; flag bit0 = labels, bit1 = subgroups, bit2 = ids; then n*d f32
// row-major, n u32 labels, n u32 subgroups, n u64 ids (each when flagged).
// The role is not persisted; readers supply it.
std::vector<std::byte> encode_feature_set(const FeatureSet& set);
FeatureSet decode_feature_set(std::span<const std::byte> data, Role role = Role::gallery);

void write_feature_set(const FeatureSet& set, const std::filesystem::path& path);
FeatureSet read_feature_set(const std::filesystem::path& path, Role role = Role::gallery);

}  // namespace bfill
