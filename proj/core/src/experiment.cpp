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

#include "bfill/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "bfill/binary_io.hpp"
#include "bfill/error.hpp"
#include "bfill/hashing.hpp"
#include "bfill/kendall.hpp"
#include "bfill/parallel.hpp"
#include "bfill/rng.hpp"
#include "json.hpp"

namespace bfill {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Strict object reader: typed access by key with the dotted field path in
// every error, and a final check that no unknown keys remain.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  bool has(std::string_view key) const { return obj_.contains(std::string(key)); }

  const json& at(std::string_view key) {
    used_.insert(std::string(key));
    const auto it = obj_.find(std::string(key));
    if (it == obj_.end()) throw ConfigError(field(key), "missing required field");
    return *it;
  }

  int integer(std::string_view key) {
    const auto& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(field(key), "integer out of range");
    return static_cast<int>(x);
  }
  int integer(std::string_view key, int def) { return has(key) ? integer(key) : (used_.insert(std::string(key)), def); }

  double number(std::string_view key) {
    const auto& v = at(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    return v.get<double>();
  }
  double number(std::string_view key, double def) { return has(key) ? number(key) : (used_.insert(std::string(key)), def); }

  bool boolean(std::string_view key, bool def) {
    if (!has(key)) return def;
    const auto& v = at(key);
    if (!v.is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(std::string_view key) {
    const auto& v = at(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(std::string_view key, std::string def) {
    return has(key) ? string(key) : (used_.insert(std::string(key)), def);
  }

  std::vector<std::string> strings(std::string_view key) {
    const auto& v = at(key);
    if (!v.is_array()) throw ConfigError(field(key), "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(field(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, _] : obj_.items()) {
      if (!used_.count(k)) throw ConfigError(field(k), "unknown field");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

SyntheticWorldConfig parse_world(const json& j) {
  Fields f(j, "world");
  SyntheticWorldConfig w;
  w.num_classes = f.integer("num_classes");
  w.dim = f.integer("dim");
  w.latent_dim = f.integer("latent_dim");
  w.train_per_class = f.integer("train_per_class");
  w.gallery_per_class = f.integer("gallery_per_class");
  w.query_per_class = f.integer("query_per_class");
  w.centroid_scale = f.number("centroid_scale", w.centroid_scale);
  w.within_class_sigma = f.number("within_class_sigma", w.within_class_sigma);
  w.old_noise_sigma = f.number("old_noise_sigma");
  w.new_noise_sigma = f.number("new_noise_sigma");
  w.old_class_fraction = f.number("old_class_fraction");
  if (f.has("subgroups") && !f.at("subgroups").is_null()) {
    Fields s(f.at("subgroups"), "world.subgroups");
    SubgroupSpec spec;
    const auto& tags = s.at("class_subgroup");
    const auto& mult = s.at("noise_multiplier");
    if (!tags.is_array()) throw ConfigError("world.subgroups.class_subgroup", "expected an array of integers");
    if (!mult.is_array()) throw ConfigError("world.subgroups.noise_multiplier", "expected an array of numbers");
    for (const auto& t : tags) {
      if (!t.is_number_integer()) throw ConfigError("world.subgroups.class_subgroup", "expected an array of integers");
      spec.class_subgroup.push_back(t.get<std::int32_t>());
    }
    for (const auto& m : mult) {
      if (!m.is_number()) throw ConfigError("world.subgroups.noise_multiplier", "expected an array of numbers");
      spec.noise_multiplier.push_back(m.get<double>());
    }
    s.finish();
    w.subgroups = std::move(spec);
  } else if (f.has("subgroups")) {
    f.at("subgroups");
  }
  f.finish();
  return w;
}

void parse_train(const json& j, const std::string& path, TrainConfig& t, AlignArchitecture* arch) {
  Fields f(j, path);
  t.epochs = f.integer("epochs", t.epochs);
  t.batch_size = f.integer("batch_size", t.batch_size);
  t.base_lr = f.number("base_lr", t.base_lr);
  t.warmup_epochs = f.integer("warmup_epochs", t.warmup_epochs);
  if (arch) {
    arch->hidden_layers = f.integer("hidden_layers", arch->hidden_layers);
    arch->width_multiplier = f.integer("width_multiplier", arch->width_multiplier);
    if (f.has("loss")) {
      Fields l(f.at("loss"), path + ".loss");
      t.loss.kind = parse_loss_kind(l.string("kind", std::string(to_string(t.loss.kind))));
      t.loss.uncertainty = l.boolean("uncertainty", t.loss.uncertainty);
      t.loss.label_smoothing_eps = l.number("label_smoothing_eps", t.loss.label_smoothing_eps);
      if (l.has("lambda") && !l.at("lambda").is_null()) {
        t.loss.lambda = l.number("lambda");
      } else if (l.has("lambda")) {
        l.at("lambda");
      }
      l.finish();
    }
  }
  f.finish();
}

json world_json(const SyntheticWorldConfig& w) {
  json j = {{"num_classes", w.num_classes},
            {"dim", w.dim},
            {"latent_dim", w.latent_dim},
            {"train_per_class", w.train_per_class},
            {"gallery_per_class", w.gallery_per_class},
            {"query_per_class", w.query_per_class},
            {"centroid_scale", w.centroid_scale},
            {"within_class_sigma", w.within_class_sigma},
            {"old_noise_sigma", w.old_noise_sigma},
            {"new_noise_sigma", w.new_noise_sigma},
            {"old_class_fraction", w.old_class_fraction}};
  if (w.subgroups) {
    j["subgroups"] = {{"class_subgroup", w.subgroups->class_subgroup},
                      {"noise_multiplier", w.subgroups->noise_multiplier}};
  } else {
    j["subgroups"] = nullptr;
  }
  return j;
}

json config_json(const ExperimentConfig& c) {
  json policies = json::array();
  for (const auto& p : c.policies) {
    std::string s = p.name();
    if (p.kind == OrderingPolicy::Kind::random && p.seed) s += ":" + std::to_string(*p.seed);
    if (p.kind == OrderingPolicy::Kind::file) s += ":" + p.path.string();
    policies.push_back(s);
  }
  json metrics = json::array();
  for (auto m : c.metrics) metrics.push_back(std::string(to_string(m)));
  json loss = {{"kind", std::string(to_string(c.alignment.loss.kind))},
               {"uncertainty", c.alignment.loss.uncertainty},
               {"label_smoothing_eps", c.alignment.loss.label_smoothing_eps},
               {"lambda", c.alignment.loss.lambda ? json(*c.alignment.loss.lambda) : json(nullptr)}};
  return {{"name", c.name},
          {"world", world_json(c.world)},
          {"head",
           {{"epochs", c.head.epochs},
            {"batch_size", c.head.batch_size},
            {"base_lr", c.head.base_lr},
            {"warmup_epochs", c.head.warmup_epochs}}},
          {"alignment",
           {{"epochs", c.alignment.epochs},
            {"batch_size", c.alignment.batch_size},
            {"base_lr", c.alignment.base_lr},
            {"warmup_epochs", c.alignment.warmup_epochs},
            {"hidden_layers", c.architecture.hidden_layers},
            {"width_multiplier", c.architecture.width_multiplier},
            {"loss", loss}}},
          {"policies", policies},
          {"metrics", metrics},
          {"distance", std::string(to_string(c.distance))},
          {"alpha_grid_size", c.alpha_grid_size},
          {"seeds", c.seeds}};
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string provenance_line(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

std::string bare_message(const ConfigError& e) {
  const std::string what = e.what();
  const std::string prefix = e.field() + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed_" + std::to_string(seed)); }

struct SplitFile {
  const char* name;
  PairedFeatureSet World::*split;
  Role role;
};

constexpr SplitFile kSplits[] = {
    {"train", &World::train, Role::train},
    {"gallery", &World::gallery, Role::gallery},
    {"query", &World::query, Role::query},
};

World read_world(const fs::path& dir) {
  World w;
  for (const auto& s : kSplits) {
    for (const char* side : {"old", "new"}) {
      const auto p = dir / (std::string(s.name) + "_" + side + ".ffs");
      if (!fs::exists(p)) throw IoError("missing feature store " + p.string() + " (run `gen` first)");
      auto set = read_feature_set(p, s.role);
      auto& pair = w.*(s.split);
      (std::string_view(side) == "old" ? pair.old_features : pair.new_features) = std::move(set);
    }
    (w.*(s.split)).validate();
  }
  return w;
}

SeedModels read_models(const fs::path& dir) {
  const auto head = dir / "head.ffh";
  const auto align = dir / "align.ffa";
  if (!fs::exists(head) || !fs::exists(align)) {
    throw IoError("missing checkpoints in " + dir.string() + " (run `train` first)");
  }
  SeedModels m;
  m.head = read_head(head);
  m.net = read_align_net(align);
  return m;
}

ExperimentConfig with_override(ExperimentConfig cfg, const std::optional<std::uint64_t>& seed) {
  if (seed) cfg.seeds = {*seed};
  return cfg;
}

void write_config_echo(const ExperimentConfig& cfg, const fs::path& out) {
  json j = json::parse(canonical_json(cfg));
  j["config_hash"] = config_hash(cfg);
  write_file_atomic(out / "config.json", j.dump(2) + "\n");
}

// Runs fn for every seed, `jobs` at a time, collecting results in seed order.
template <typename Fn>
auto for_each_seed(const std::vector<std::uint64_t>& seeds, unsigned jobs, Fn fn) {
  using R = decltype(fn(seeds.front()));
  std::vector<R> out(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) { out[i] = fn(seeds[i]); });
  return out;
}

json report_json(const PolicyRun& run, const ExperimentConfig& cfg, const std::string& hash, std::uint64_t seed,
                 const std::map<std::string, std::vector<std::uint64_t>>& reference_orders) {
  json area = json::object();
  for (std::size_t m = 0; m < run.report.metrics.size(); ++m) area[std::string(to_string(run.report.metrics[m]))] = run.report.area[m];
  json tau = json::object();
  for (const auto& [name, order] : reference_orders) {
    if (order.size() >= 2) tau["vs_" + name] = kendall_tau(run.ordering, order);
  }
  json j = {{"config_hash", hash},     {"seed", seed},
            {"policy", run.policy.name()}, {"num_queries", run.report.num_queries},
            {"area", area},            {"tau", tau},
            {"config", json::parse(canonical_json(cfg))}};
  if (run.gap) {
    json pts = json::array();
    for (const auto& g : run.gap->points) {
      pts.push_back({{"alpha", g.alpha},
                     {"gap", g.gap},
                     {"minority_value", g.minority_value},
                     {"majority_value", g.majority_value},
                     {"minority_backfilled_fraction", g.minority_backfilled_fraction},
                     {"majority_backfilled_fraction", g.majority_backfilled_fraction},
                     {"minority_share_of_backfilled", g.minority_share_of_backfilled}});
    }
    j["subgroup_gap"] = {{"metric", std::string(to_string(run.gap->metric))},
                         {"minority_tag", run.gap->minority_tag},
                         {"majority_tag", run.gap->majority_tag},
                         {"minority_population_share", run.gap->minority_population_share},
                         {"points", pts}};
  }
  return j;
}

std::string report_csv(const PolicyRun& run, const std::string& hash, std::uint64_t seed) {
  std::ostringstream os;
  os << provenance_line(hash, seed);
  os << "alpha,metric,value,subgroup,pos_flips,neg_flips\n";
  for (const auto& p : run.report.points) {
    for (std::size_t m = 0; m < run.report.metrics.size(); ++m) {
      os << num(p.alpha) << ',' << to_string(run.report.metrics[m]) << ',' << num(p.values[m]) << ",all,"
         << p.flips.positive << ',' << p.flips.negative << '\n';
    }
    for (const auto& s : p.subgroups) {
      for (std::size_t m = 0; m < run.report.metrics.size(); ++m) {
        os << num(p.alpha) << ',' << to_string(run.report.metrics[m]) << ',' << num(s.values[m]) << ',' << s.tag
           << ',' << s.flips.positive << ',' << s.flips.negative << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name", "must not be empty");
  try {
    world.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("world." + e.field(), bare_message(e));
  }
  const std::size_t n_train = static_cast<std::size_t>(world.num_classes) * static_cast<std::size_t>(world.train_per_class);
  try {
    head.validate(n_train);
  } catch (const ConfigError& e) {
    throw ConfigError("head." + e.field(), bare_message(e));
  }
  try {
    alignment.validate(n_train);
  } catch (const ConfigError& e) {
    throw ConfigError("alignment." + e.field(), bare_message(e));
  }
  if (architecture.hidden_layers < 0) throw ConfigError("alignment.hidden_layers", "must be nonnegative");
  if (architecture.width_multiplier <= 0) throw ConfigError("alignment.width_multiplier", "must be positive");
  if (policies.empty()) throw ConfigError("policies", "need at least one ordering policy");
  if (metrics.empty()) throw ConfigError("metrics", "need at least one metric");
  if (alpha_grid_size < 2) throw ConfigError("alpha_grid_size", "needs at least 2 points");
  if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("seeds", "seeds must be distinct");
  std::set<std::string> names;
  for (const auto& p : policies) {
    if (!names.insert(p.name()).second) throw ConfigError("policies", "policy " + p.name() + " listed twice");
  }
}

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, json_text.size());
    const auto line = 1 + std::count(json_text.begin(), json_text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError("line " + std::to_string(line), std::string("JSON syntax error: ") + e.what());
  }
  Fields f(root, "");
  ExperimentConfig c;
  c.name = f.string("name");
  c.world = parse_world(f.at("world"));
  if (f.has("head")) parse_train(f.at("head"), "head", c.head, nullptr);
  if (f.has("alignment")) parse_train(f.at("alignment"), "alignment", c.alignment, &c.architecture);
  for (const auto& p : f.strings("policies")) c.policies.push_back(OrderingPolicy::parse(p));
  for (const auto& m : f.strings("metrics")) c.metrics.push_back(parse_metric(m));
  c.distance = parse_distance(f.string("distance", "l2"));
  const int grid = f.integer("alpha_grid_size", 21);
  if (grid < 2) throw ConfigError("alpha_grid_size", "needs at least 2 points");
  c.alpha_grid_size = static_cast<std::size_t>(grid);
  const auto& seeds = f.at("seeds");
  if (!seeds.is_array()) throw ConfigError("seeds", "expected an array of nonnegative integers");
  for (const auto& s : seeds) {
    if (!s.is_number_unsigned()) throw ConfigError("seeds", "expected an array of nonnegative integers");
    c.seeds.push_back(s.get<std::uint64_t>());
  }
  std::optional<std::string> claimed_hash;
  if (f.has("config_hash")) claimed_hash = f.string("config_hash");
  f.finish();
  c.validate();
  if (claimed_hash && *claimed_hash != config_hash(c)) {
    throw ConfigError("config_hash", "does not match the configuration contents");
  }
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::vector<std::byte> bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("config", "cannot read " + path.string());
  }
  return parse_experiment_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string canonical_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(); }

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(canonical_json(cfg)).substr(0, 16); }

SyntheticWorldConfig world_config_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto w = cfg.world;
  w.seed = seed;
  return w;
}

SeedModels train_models(const ExperimentConfig& cfg, const World& world, std::uint64_t seed) {
  SeedModels m;
  auto head_cfg = cfg.head;
  head_cfg.seed = derive_seed(seed, 1);
  m.head = train_head(world.train.new_features, head_cfg, &m.head_history);
  auto align_cfg = cfg.alignment;
  align_cfg.seed = derive_seed(seed, 2);
  m.net = train_alignment(world.train, m.head, align_cfg, cfg.architecture, &m.align_history);
  return m;
}

std::vector<PolicyRun> run_backfill(const ExperimentConfig& cfg, const World& world, const SeedModels& models,
                                    std::uint64_t seed, unsigned workers) {
  const FeatureSet transformed = transform(models.net, world.gallery.old_features);
  OrderingInputs in;
  in.gallery_old = &world.gallery.old_features;
  in.net = &models.net;
  in.head = &models.head;
  in.gallery_new = &world.gallery.new_features;
  in.loss = cfg.alignment.loss;
  const bool gap_metric = std::find(cfg.metrics.begin(), cfg.metrics.end(), Metric::cmc_top1) != cfg.metrics.end();

  std::vector<PolicyRun> runs;
  for (auto policy : cfg.policies) {
    if (policy.kind == OrderingPolicy::Kind::random && !policy.seed) policy.seed = derive_seed(seed, 0x5eed);
    PolicyRun run;
    run.policy = policy;
    run.ordering = make_ordering(policy, in);
    BackfillPlan plan{run.ordering, BackfillPlan::uniform_grid(cfg.alpha_grid_size)};
    run.report = backfill_curve(plan, transformed, world.gallery.new_features, world.query.new_features, cfg.metrics,
                                cfg.distance, workers);
    if (cfg.world.subgroups && gap_metric) run.gap = subgroup_gap_curve(run.report, Metric::cmc_top1);
    runs.push_back(std::move(run));
  }
  return runs;
}

SigmaAnalysis analyze_sigma(const ExperimentConfig& cfg, const World& world, const SeedModels& models) {
  const auto& gallery = world.gallery;
  const auto ids = gallery.old_features.ids();
  const auto sigma = predict_sigma(models.net, gallery.old_features);
  const auto losses = item_losses(models.net, models.head, gallery, cfg.alignment.loss);
  const auto by_sigma = order_by_score(ids, sigma, true);
  const auto by_combined = order_by_score(ids, losses.combined, true);
  SigmaAnalysis a;
  a.tau_combined = kendall_tau(by_sigma, by_combined);
  a.tau_l2 = kendall_tau(by_sigma, order_by_score(ids, losses.l2, true));
  a.tau_disc = kendall_tau(by_sigma, order_by_score(ids, losses.disc, true));
  a.combined_pairs = rank_pairs(by_sigma, by_combined);
  return a;
}

std::string cmd_gen(const CommandOptions& opts) {
  const auto cfg = with_override(load_experiment_config(opts.config), opts.seed_override);
  const auto hash = config_hash(cfg);
  write_config_echo(cfg, opts.out);
  auto manifests = for_each_seed(cfg.seeds, opts.jobs, [&](std::uint64_t seed) {
    const World world = generate_world(world_config_for_seed(cfg, seed));
    const auto dir = seed_dir(opts.out, seed) / "world";
    json files = json::object();
    for (const auto& s : kSplits) {
      const auto& pair = world.*(s.split);
      for (const char* side : {"old", "new"}) {
        const auto& set = std::string_view(side) == "old" ? pair.old_features : pair.new_features;
        const std::string name = std::string(s.name) + "_" + side + ".ffs";
        const auto bytes = encode_feature_set(set);
        write_file_atomic(dir / name, bytes);
        files[name] = {{"sha256", sha256_hex(bytes)}, {"records", set.size()}, {"dim", set.dim()}};
      }
    }
    json m = {{"config_hash", hash}, {"seed", seed}, {"files", files}};
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
    return m;
  });
  json all = {{"config_hash", hash}, {"name", cfg.name}, {"seeds", manifests}};
  return all.dump(2) + "\n";
}

std::string cmd_train(const CommandOptions& opts) {
  const auto cfg = with_override(load_experiment_config(opts.config), opts.seed_override);
  const auto hash = config_hash(cfg);
  write_config_echo(cfg, opts.out);
  auto lines = for_each_seed(cfg.seeds, opts.jobs, [&](std::uint64_t seed) {
    const World world = read_world(seed_dir(opts.out, seed) / "world");
    const auto models = train_models(cfg, world, seed);
    const auto dir = seed_dir(opts.out, seed) / "model";
    write_head(models.head, dir / "head.ffh");
    write_align_net(models.net, dir / "align.ffa");
    std::ostringstream csv;
    csv << provenance_line(hash, seed) << "stage,epoch,loss,l2,disc,mean_log_var,accuracy\n";
    for (const auto& e : models.head_history) {
      csv << "head," << e.epoch << ',' << num(e.loss) << ",0," << num(e.disc) << ",0," << num(e.accuracy) << '\n';
    }
    for (const auto& e : models.align_history) {
      csv << "alignment," << e.epoch << ',' << num(e.loss) << ',' << num(e.l2) << ',' << num(e.disc) << ','
          << num(e.mean_log_var) << ",0\n";
    }
    write_file_atomic(dir / "train_loss.csv", csv.str());
    const auto& first = models.align_history.front();
    const auto& last = models.align_history.back();
    return "seed " + std::to_string(seed) + ": head train acc " + short_num(models.head_history.back().accuracy) +
           ", alignment loss " + short_num(first.loss) + " -> " + short_num(last.loss) + "\n";
  });
  std::string out;
  for (const auto& l : lines) out += l;
  return out;
}

std::string cmd_backfill(const CommandOptions& opts) {
  const auto cfg = with_override(load_experiment_config(opts.config), opts.seed_override);
  const auto hash = config_hash(cfg);
  write_config_echo(cfg, opts.out);
  // Per seed: area per policy and metric.
  auto areas = for_each_seed(cfg.seeds, opts.jobs, [&](std::uint64_t seed) {
    const auto root = seed_dir(opts.out, seed);
    const World world = read_world(root / "world");
    const SeedModels models = read_models(root / "model");
    const auto runs = run_backfill(cfg, world, models, seed);
    std::map<std::string, std::vector<std::uint64_t>> reference;
    for (const auto& r : runs) {
      if (r.policy.kind == OrderingPolicy::Kind::sigma_desc) reference["sigma_desc"] = r.ordering;
      if (r.policy.kind == OrderingPolicy::Kind::cheat_loss_desc) reference["cheat_loss_desc"] = r.ordering;
    }
    std::vector<std::vector<double>> out;
    for (const auto& r : runs) {
      const auto base = root / "backfill" / r.policy.name();
      write_file_atomic(fs::path(base.string() + ".csv"), report_csv(r, hash, seed));
      write_file_atomic(fs::path(base.string() + ".json"), report_json(r, cfg, hash, seed, reference).dump(2) + "\n");
      out.push_back(r.report.area);
    }
    return out;
  });

  json policies = json::array();
  std::ostringstream csv, table;
  csv << provenance_line(hash, cfg.seeds.front()) << "policy,metric,mean,std,seeds\n";
  table << "policy";
  for (auto m : cfg.metrics) table << "\t" << to_string(m);
  table << "\n";
  for (std::size_t p = 0; p < cfg.policies.size(); ++p) {
    json metrics = json::object();
    table << cfg.policies[p].name();
    for (std::size_t m = 0; m < cfg.metrics.size(); ++m) {
      std::vector<double> vals;
      for (const auto& seed_areas : areas) vals.push_back(seed_areas[p][m]);
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
      metrics[std::string(to_string(cfg.metrics[m]))] = {{"mean", mean}, {"std", sd}, {"per_seed", vals}};
      csv << cfg.policies[p].name() << ',' << to_string(cfg.metrics[m]) << ',' << num(mean) << ',' << num(sd) << ','
          << vals.size() << '\n';
      char cell[64];
      std::snprintf(cell, sizeof cell, "\t%.2f +- %.2f", 100.0 * mean, 100.0 * sd);
      table << cell;
    }
    table << "\n";
    policies.push_back({{"policy", cfg.policies[p].name()}, {"area", metrics}});
  }
  json summary = {{"config_hash", hash}, {"seeds", cfg.seeds}, {"policies", policies}};
  write_file_atomic(opts.out / "summary.json", summary.dump(2) + "\n");
  write_file_atomic(opts.out / "summary.csv", csv.str());
  return table.str();
}

std::string cmd_analyze(const fs::path& run_dir, unsigned jobs) {
  const auto cfg_path = run_dir / "config.json";
  if (!fs::exists(cfg_path)) throw IoError("incomplete run dir: " + cfg_path.string() + " not found");
  const auto cfg = load_experiment_config(cfg_path);
  const auto hash = config_hash(cfg);
  auto per_seed = for_each_seed(cfg.seeds, jobs, [&](std::uint64_t seed) {
    const auto root = seed_dir(run_dir, seed);
    const World world = read_world(root / "world");
    const SeedModels models = read_models(root / "model");
    const auto runs = run_backfill(cfg, world, models, seed);
    const auto sigma = analyze_sigma(cfg, world, models);
    const auto dir = root / "analysis";

    std::ostringstream flips;
    flips << provenance_line(hash, seed) << "policy,alpha,backfilled,top1_hits,baseline_hits,pos_flips,neg_flips,num_queries\n";
    bool identity = true;
    for (const auto& r : runs) {
      const auto base_hits = r.report.points.front().top1_hits;
      for (const auto& p : r.report.points) {
        identity = identity && (static_cast<std::int64_t>(p.top1_hits) - static_cast<std::int64_t>(base_hits) ==
                                static_cast<std::int64_t>(p.flips.positive) - static_cast<std::int64_t>(p.flips.negative));
        flips << r.policy.name() << ',' << num(p.alpha) << ',' << p.backfilled << ',' << p.top1_hits << ','
              << base_hits << ',' << p.flips.positive << ',' << p.flips.negative << ',' << r.report.num_queries << '\n';
      }
    }
    if (!identity) throw Error("flip identity violated for seed " + std::to_string(seed));
    write_file_atomic(dir / "flips.csv", flips.str());

    std::ostringstream ranks;
    ranks << provenance_line(hash, seed) << "id,rank_sigma,rank_loss\n";
    for (const auto& rp : sigma.combined_pairs) ranks << rp.id << ',' << rp.rank_a << ',' << rp.rank_b << '\n';
    write_file_atomic(dir / "sigma_ranks.csv", ranks.str());

    json fractions = json::array();
    if (cfg.world.subgroups) {
      std::ostringstream sub;
      sub << provenance_line(hash, seed) << "policy,alpha,subgroup,backfilled,gallery_items,fraction\n";
      for (const auto& r : runs) {
        for (const auto& p : r.report.points) {
          for (const auto& s : p.subgroups) {
            const double frac = s.gallery_items ? static_cast<double>(s.backfilled) / static_cast<double>(s.gallery_items) : 0.0;
            sub << r.policy.name() << ',' << num(p.alpha) << ',' << s.tag << ',' << s.backfilled << ','
                << s.gallery_items << ',' << num(frac) << '\n';
          }
        }
      }
      write_file_atomic(dir / "subgroup_fraction.csv", sub.str());
    }
    json j = {{"seed", seed},
              {"tau", {{"sigma_vs_l2_plus_disc", sigma.tau_combined},
                       {"sigma_vs_l2", sigma.tau_l2},
                       {"sigma_vs_disc", sigma.tau_disc}}},
              {"flip_identity_holds", identity}};
    return j;
  });
  json analysis = {{"config_hash", hash}, {"seeds", per_seed}};
  write_file_atomic(run_dir / "analysis.json", analysis.dump(2) + "\n");
  std::ostringstream os;
  for (const auto& s : per_seed) {
    os << "seed " << s["seed"].get<std::uint64_t>() << ": tau(sigma, L_l2+disc)="
       << num(s["tau"]["sigma_vs_l2_plus_disc"].get<double>()) << " tau(sigma, L_l2)="
       << num(s["tau"]["sigma_vs_l2"].get<double>()) << " tau(sigma, L_disc)="
       << num(s["tau"]["sigma_vs_disc"].get<double>()) << "\n";
  }
  return os.str();
}

}  // namespace bfill
