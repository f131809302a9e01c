// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/rng.hpp"

namespace mmq::cli {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(losses::MmdEstimator e) { return e == losses::MmdEstimator::kBiased ? "biased" : "unbiased"; }
std::string to_string(rq::CodebookInit i) { return i == rq::CodebookInit::kKMeans ? "kmeans" : "random"; }
std::string to_string(diag::DistanceMetric m) { return m == diag::DistanceMetric::kEuclidean ? "euclidean" : "cosine"; }

namespace {

// Parsed JSON stores non-negative integers as unsigned; JSON built in code
// may hold them as signed.
bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

// Reads fields of one JSON object and remembers which keys were used.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + label() + "': expected an object");
  }

  bool has(const std::string& key) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    return true;
  }
  const json& at(const std::string& key) const { return j_.at(key); }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!is_count(v)) throw ConfigError("config key '" + key_path(key) + "': expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  void get(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (v.is_string() && v.get<std::string>() == "inf") {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    if (!v.is_number()) throw ConfigError("config key '" + key_path(key) + "': expected a number");
    out = v.get<double>();
  }
  void get(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError("config key '" + key_path(key) + "': expected true or false");
    out = v.get<bool>();
  }
  void get(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError("config key '" + key_path(key) + "': expected a string");
    out = v.get<std::string>();
  }
  template <typename Parse, typename T>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = parse(s);
  }
  // Either one integer for every modality or an array [c, t, v].
  void get_per_modality(const std::string& key, std::array<std::size_t, rq::kModalities>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (is_count(v)) {
      out.fill(v.get<std::size_t>());
      return;
    }
    if (!v.is_array() || v.size() != rq::kModalities) {
      throw ConfigError("config key '" + key_path(key) + "': expected an integer or an array of 3 integers");
    }
    for (std::size_t m = 0; m < rq::kModalities; ++m) {
      if (!is_count(v[m])) throw ConfigError("config key '" + key_path(key) + "': expected integers");
      out[m] = v[m].get<std::size_t>();
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError("unknown config key '" + key_path(key) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json number_or_inf(double v) { return std::isinf(v) ? json("inf") : json(v); }

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

void parse_corpus(Section& root, RunConfig& cfg) {
  if (!root.has("corpus")) return;
  Section s(root.at("corpus"), "corpus");
  std::string source;
  s.get("source", source);
  if (source == "files") {
    cfg.source = CorpusSource::kFiles;
  } else if (source.empty() || source == "synthetic") {
    cfg.source = CorpusSource::kSynthetic;
  } else {
    throw ConfigError("config key 'corpus.source': expected synthetic|files, got '" + source + "'");
  }
  auto& sc = cfg.synth;
  s.get("items", sc.items);
  s.get("users", sc.users);
  s.get("latent_dim", sc.latent_dim);
  s.get("dim_c", sc.dim_c);
  s.get("dim_t", sc.dim_t);
  s.get("dim_v", sc.dim_v);
  s.get("noise_c", sc.noise_c);
  s.get("noise_t", sc.noise_t);
  s.get("noise_v", sc.noise_v);
  s.get("min_len", sc.min_len);
  s.get("max_len", sc.max_len);
  s.get("markov_temperature", sc.markov_temperature);
  s.get("share_ct_mixing", sc.share_ct_mixing);
  if (s.has("files")) {
    Section f(s.at("files"), "corpus.files");
    for (std::size_t m = 0; m < rq::kModalities; ++m) {
      std::string p;
      f.get(rq::kModalityTags[m], p);
      if (!p.empty()) cfg.files.tables[m] = p;
    }
    std::string p;
    f.get("interactions", p);
    if (!p.empty()) cfg.files.interactions = p;
    f.finish();
  }
  s.finish();
}

void parse_quantizer(Section& root, rq::QuantizerConfig& q) {
  if (!root.has("quantizer")) return;
  Section s(root.at("quantizer"), "quantizer");
  s.get_per_modality("codes", q.codes);
  s.get_per_modality("levels", q.levels);
  s.get("code_dim", q.code_dim);
  s.get("hidden_dim", q.hidden_dim);
  s.get("alpha", q.alpha);
  s.get("beta", q.beta);
  s.get("gamma", q.gamma);
  s.get("recon_weight", q.recon_weight);
  s.get("temperature", q.temperature);
  if (s.has("sigma")) {
    const json& v = s.at("sigma");
    if (v.is_string() && v.get<std::string>() == "median") {
      q.kernel.median_heuristic = true;
    } else if (v.is_number()) {
      q.kernel.median_heuristic = false;
      q.kernel.sigma = v.get<double>();
    } else {
      throw ConfigError("config key 'quantizer.sigma': expected \"median\" or a number");
    }
  }
  s.get_enum("recon", q.recon, rq::parse_recon);
  s.get_enum("estimator", q.estimator, losses::parse_estimator);
  s.get_enum("init", q.init, rq::parse_codebook_init);
  s.get("kmeans_iters", q.kmeans_iters);
  s.get("epochs", q.epochs);
  s.get("batch_size", q.batch_size);
  s.get("lr", q.lr);
  s.get("dead_code_noise", q.dead_code_noise);
  s.finish();
}

void parse_recommender(Section& root, seqrec::RecConfig& r) {
  if (!root.has("recommender")) return;
  Section s(root.at("recommender"), "recommender");
  s.get("d_model", r.d_model);
  s.get("layers", r.layers);
  s.get("heads", r.heads);
  s.get("ffn_dim", r.ffn_dim);
  s.get("max_len", r.max_len);
  s.get("token_hidden", r.token_hidden);
  s.get_enum("token_mode", r.token_mode, seqrec::parse_token_mode);
  s.get("lora", r.lora);
  s.get("lora_rank", r.lora_rank);
  s.get("lora_alpha", r.lora_alpha);
  s.get("g_hidden", r.g_hidden);
  s.get("softmax_weights", r.softmax_weights);
  s.get_enum("sid_init", r.sid_init, seqrec::parse_sid_init);
  s.get("epochs", r.epochs);
  s.get("batch_size", r.batch_size);
  s.get("negatives", r.negatives);
  s.get("warmup_steps", r.warmup_steps);
  s.get("lr", r.lr);
  s.get("weight_decay", r.weight_decay);
  s.finish();
}

template <typename T, typename Parse>
std::vector<T> parse_list(Section& s, const std::string& key, Parse parse) {
  const json& v = s.at(key);
  if (!v.is_array() || v.empty()) throw ConfigError("config key '" + s.key_path(key) + "': expected a non-empty array");
  std::vector<T> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError("config key '" + s.key_path(key) + "': expected strings");
    out.push_back(parse(e.get<std::string>()));
  }
  return out;
}

void parse_experiments(Section& root, ExperimentConfig& e) {
  if (!root.has("experiments")) return;
  Section s(root.at("experiments"), "experiments");
  if (s.has("seeds")) {
    const json& v = s.at("seeds");
    if (!v.is_array() || v.empty()) throw ConfigError("config key 'experiments.seeds': expected a non-empty array");
    e.seeds.clear();
    for (const auto& x : v) {
      if (!is_count(x)) throw ConfigError("config key 'experiments.seeds': expected non-negative integers");
      e.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  s.get("effective_rank_threshold", e.effective_rank_threshold);
  s.get_enum("metric", e.metric, diag::parse_metric);
  if (s.has("recon_modes")) e.recon_modes = parse_list<rq::ReconLoss>(s, "recon_modes", rq::parse_recon);
  if (s.has("sid_inits")) e.sid_inits = parse_list<seqrec::SidInit>(s, "sid_inits", seqrec::parse_sid_init);
  s.finish();
}

}  // namespace

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  cfg.out = "runs/" + name;
  if (name == "desk") return cfg;
  if (name == "paper") {
    cfg.quantizer.codes = {256, 256, 256};
    cfg.quantizer.levels = {4, 4, 4};
    cfg.quantizer.alpha = 1.0;
    cfg.quantizer.beta = 1e-3;
    cfg.quantizer.gamma = 1.0;
    cfg.recommender.epochs = 3;
    cfg.recommender.lr = 3e-4;
    cfg.recommender.batch_size = 16;
    cfg.recommender.warmup_steps = 100;
    cfg.recommender.lora = true;
    cfg.recommender.lora_rank = 8;
    cfg.recommender.lora_alpha = 16.0;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk|paper)");
}

void RunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("config key 'preset': expected desk|paper");
  if (out.empty()) throw ConfigError("config key 'out': must not be empty");
  if (source == CorpusSource::kSynthetic) {
    synth.validate();
  } else {
    for (std::size_t m = 0; m < rq::kModalities; ++m) {
      if (files.tables[m].empty()) {
        throw ConfigError(std::string("config key 'corpus.files.") + rq::kModalityTags[m] + "': required for file corpora");
      }
    }
    if (files.interactions.empty()) throw ConfigError("config key 'corpus.files.interactions': required for file corpora");
  }
  quantizer.validate();
  recommender.validate();
  if (recommender.negatives == 0) throw ConfigError("recommender: negatives must be > 0");
  if (!(experiments.effective_rank_threshold > 0.0 && experiments.effective_rank_threshold < 1.0)) {
    throw ConfigError("config key 'experiments.effective_rank_threshold': must be in (0, 1)");
  }
  if (experiments.seeds.empty()) throw ConfigError("config key 'experiments.seeds': must not be empty");
  if (experiments.recon_modes.empty() || experiments.sid_inits.empty()) {
    throw ConfigError("experiments: recon_modes and sid_inits must not be empty");
  }
  if (std::find(experiments.recon_modes.begin(), experiments.recon_modes.end(), quantizer.recon) ==
      experiments.recon_modes.end()) {
    throw ConfigError("config key 'quantizer.recon': must be one of experiments.recon_modes");
  }
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.synth.seed = Rng::derive_seed(seed, "gen-data");
  r.quantizer.seed = Rng::derive_seed(seed, "train-quantizer");
  r.recommender.seed = Rng::derive_seed(seed, "train-rec");
  return r;
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["preset"] = preset;
  j["seed"] = seed;
  j["out"] = out.string();
  ordered_json c;
  c["source"] = source == CorpusSource::kSynthetic ? "synthetic" : "files";
  c["items"] = synth.items;
  c["users"] = synth.users;
  c["latent_dim"] = synth.latent_dim;
  c["dim_c"] = synth.dim_c;
  c["dim_t"] = synth.dim_t;
  c["dim_v"] = synth.dim_v;
  c["noise_c"] = synth.noise_c;
  c["noise_t"] = synth.noise_t;
  c["noise_v"] = synth.noise_v;
  c["min_len"] = synth.min_len;
  c["max_len"] = synth.max_len;
  c["markov_temperature"] = number_or_inf(synth.markov_temperature);
  c["share_ct_mixing"] = synth.share_ct_mixing;
  if (source == CorpusSource::kFiles) {
    ordered_json f;
    for (std::size_t m = 0; m < rq::kModalities; ++m) f[rq::kModalityTags[m]] = files.tables[m].string();
    f["interactions"] = files.interactions.string();
    c["files"] = f;
  }
  j["corpus"] = c;

  ordered_json q;
  q["codes"] = quantizer.codes;
  q["levels"] = quantizer.levels;
  q["code_dim"] = quantizer.code_dim;
  q["hidden_dim"] = quantizer.hidden_dim;
  q["alpha"] = quantizer.alpha;
  q["beta"] = quantizer.beta;
  q["gamma"] = quantizer.gamma;
  q["recon_weight"] = quantizer.recon_weight;
  q["temperature"] = quantizer.temperature;
  q["sigma"] = quantizer.kernel.median_heuristic ? ordered_json("median") : ordered_json(quantizer.kernel.sigma);
  q["recon"] = rq::to_string(quantizer.recon);
  q["estimator"] = to_string(quantizer.estimator);
  q["init"] = to_string(quantizer.init);
  q["kmeans_iters"] = quantizer.kmeans_iters;
  q["epochs"] = quantizer.epochs;
  q["batch_size"] = quantizer.batch_size;
  q["lr"] = quantizer.lr;
  q["dead_code_noise"] = quantizer.dead_code_noise;
  j["quantizer"] = q;

  const auto& rc = recommender;
  ordered_json r;
  r["d_model"] = rc.d_model;
  r["layers"] = rc.layers;
  r["heads"] = rc.heads;
  r["ffn_dim"] = rc.ffn_dim;
  r["max_len"] = rc.max_len;
  r["token_hidden"] = rc.token_hidden;
  r["token_mode"] = seqrec::to_string(rc.token_mode);
  r["lora"] = rc.lora;
  r["lora_rank"] = rc.lora_rank;
  r["lora_alpha"] = rc.lora_alpha;
  r["g_hidden"] = rc.g_hidden;
  r["softmax_weights"] = rc.softmax_weights;
  r["sid_init"] = seqrec::to_string(rc.sid_init);
  r["epochs"] = rc.epochs;
  r["batch_size"] = rc.batch_size;
  r["negatives"] = rc.negatives;
  r["warmup_steps"] = rc.warmup_steps;
  r["lr"] = rc.lr;
  r["weight_decay"] = rc.weight_decay;
  j["recommender"] = r;

  ordered_json e;
  e["seeds"] = experiments.seeds;
  e["effective_rank_threshold"] = experiments.effective_rank_threshold;
  e["metric"] = to_string(experiments.metric);
  ordered_json modes = ordered_json::array();
  for (auto m : experiments.recon_modes) modes.push_back(rq::to_string(m));
  e["recon_modes"] = modes;
  ordered_json inits = ordered_json::array();
  for (auto s : experiments.sid_inits) inits.push_back(seqrec::to_string(s));
  e["sid_inits"] = inits;
  j["experiments"] = e;
  return j;
}

std::string RunConfig::hash() const {
  // Neither the output directory nor the choice of which runs to execute
  // changes any single result.
  ordered_json j = to_json();
  j.erase("out");
  j["experiments"].erase("recon_modes");
  j["experiments"].erase("sid_inits");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

RunConfig parse_config(const json& j) {
  Section root(j, "");
  std::string preset = "desk";
  root.get("preset", preset);
  RunConfig cfg = preset_config(preset);
  if (root.has("seed")) {
    if (!is_count(j.at("seed"))) throw ConfigError("config key 'seed': expected a non-negative integer");
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }
  std::string out;
  root.get("out", out);
  if (!out.empty()) cfg.out = out;
  parse_corpus(root, cfg);
  parse_quantizer(root, cfg.quantizer);
  parse_recommender(root, cfg.recommender);
  parse_experiments(root, cfg.experiments);
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.recon) {
    cfg.quantizer.recon = *o.recon;
    cfg.experiments.recon_modes = {*o.recon};
  }
  if (o.init_sids) {
    cfg.recommender.sid_init = *o.init_sids;
    cfg.experiments.sid_inits = {*o.init_sids};
  }
  cfg.validate();
}

}  // namespace mmq::cli
