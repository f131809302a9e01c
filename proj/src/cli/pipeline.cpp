// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/cli/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>

#include "mmq/diffkit/checkpoint.hpp"
#include "mmq/diffkit/error.hpp"
#include "mmq/version.hpp"

namespace mmq::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Collects artifacts of one stage and records it in the manifest.
class Stage {
 public:
  Stage(const RunConfig& cfg, std::string name)
      : paths_{cfg.out}, name_(std::move(name)), hash_(cfg.hash()), started_(utc_now()) {
    fs::create_directories(paths_.root);
  }

  const RunPaths& paths() const { return paths_; }
  void add(const fs::path& path) { files_.push_back(path); }

  void commit(const RunConfig& cfg) {
    RunManifest manifest = RunManifest::load(paths_.manifest());
    manifest.library_version = kVersion;
    StageRecord rec;
    rec.config_hash = hash_;
    rec.started = started_;
    rec.finished = utc_now();
    for (const auto& f : files_) {
      ArtifactRecord a;
      a.path = fs::relative(f, paths_.root).generic_string();
      a.crc32 = file_checksum(f);
      a.bytes = fs::file_size(f);
      rec.artifacts.push_back(std::move(a));
    }
    manifest.stages[name_] = std::move(rec);
    // The run directory is implied by the file's location.
    ordered_json cj = cfg.to_json();
    cj.erase("out");
    write_json(paths_.root / "config.json", cj);
    manifest.save(paths_.root);
  }

 private:
  RunPaths paths_;
  std::string name_;
  std::string hash_;
  std::string started_;
  std::vector<fs::path> files_;
};

ordered_json losses_json(const rq::LossBreakdown& l) {
  ordered_json j;
  j["recon"] = l.recon;
  j["align"] = l.align;
  j["commitment"] = l.commitment;
  j["total"] = l.total;
  return j;
}

ordered_json forgetting_json(const diag::ForgettingReport& f) {
  ordered_json j;
  j["tau"] = f.tau;
  j["pairs"] = f.pairs;
  return j;
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

fs::path RunPaths::table(std::size_t modality) const {
  return data_dir() / (std::string("items_") + rq::kModalityTags.at(modality) + ".mmqe");
}

std::string file_checksum(const fs::path& path) {
  const auto bytes = bytes::read_file(path);
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", data::checksum_crc32(bytes));
  return buf;
}

ordered_json RunManifest::to_json() const {
  ordered_json j;
  j["library_version"] = library_version;
  ordered_json stages_json = ordered_json::object();
  for (const auto& [name, s] : stages) {
    ordered_json sj;
    sj["config_hash"] = s.config_hash;
    sj["started"] = s.started;
    sj["finished"] = s.finished;
    ordered_json arts = ordered_json::array();
    for (const auto& a : s.artifacts) arts.push_back({{"path", a.path}, {"crc32", a.crc32}, {"bytes", a.bytes}});
    sj["artifacts"] = arts;
    stages_json[name] = sj;
  }
  j["stages"] = stages_json;
  return j;
}

RunManifest RunManifest::load(const fs::path& path) {
  RunManifest m;
  if (!fs::exists(path)) return m;
  const json j = read_json(path);
  try {
    m.library_version = j.value("library_version", "");
    for (const auto& [name, sj] : j.at("stages").items()) {
      StageRecord s;
      s.config_hash = sj.at("config_hash").get<std::string>();
      s.started = sj.at("started").get<std::string>();
      s.finished = sj.at("finished").get<std::string>();
      for (const auto& a : sj.at("artifacts")) {
        s.artifacts.push_back({a.at("path").get<std::string>(), a.at("crc32").get<std::string>(),
                               a.at("bytes").get<std::uintmax_t>()});
      }
      m.stages[name] = std::move(s);
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

void RunManifest::save(const fs::path& root) const {
  for (const auto& [name, s] : stages) {
    for (const auto& a : s.artifacts) {
      if (!fs::exists(root / a.path)) throw IoError("manifest stage '" + name + "' references missing artifact " + a.path);
    }
  }
  write_json(root / "manifest.json", to_json());
}

std::array<const Matrix*, rq::kModalities> Corpus::matrices() const {
  return {&tables[0].data, &tables[1].data, &tables[2].data};
}

std::array<std::size_t, rq::kModalities> Corpus::dims() const {
  return {tables[0].data.cols(), tables[1].data.cols(), tables[2].data.cols()};
}

namespace {

Corpus finish_corpus(std::array<data::EmbeddingTable, rq::kModalities> tables, data::InteractionDataset interactions) {
  const std::size_t items = tables[0].data.rows();
  for (std::size_t m = 0; m < rq::kModalities; ++m) {
    if (tables[m].modality != rq::kModalityKinds[m]) {
      throw ConfigError(std::string("table for modality ") + rq::kModalityTags[m] + " carries tag " +
                        data::to_string(tables[m].modality));
    }
    if (tables[m].data.rows() != items) {
      throw ConfigError("embedding tables disagree on the item count");
    }
  }
  if (interactions.item_count != items) throw ConfigError("interaction item count does not match the tables");
  Corpus c;
  c.split = data::split_leave_last_out(interactions);
  if (c.split.users.empty()) throw ConfigError("corpus has no user with at least 3 interactions");
  c.tables = std::move(tables);
  c.interactions = std::move(interactions);
  return c;
}

}  // namespace

Corpus build_corpus(const RunConfig& resolved) {
  if (resolved.source == CorpusSource::kSynthetic) {
    auto synth = data::generate_synth(resolved.synth);
    return finish_corpus({std::move(synth.c), std::move(synth.t), std::move(synth.v)}, std::move(synth.interactions));
  }
  std::array<data::EmbeddingTable, rq::kModalities> tables;
  for (std::size_t m = 0; m < rq::kModalities; ++m) tables[m] = data::load_table(resolved.files.tables[m]);
  auto interactions = data::load_interactions(resolved.files.interactions, tables[0].data.rows());
  return finish_corpus(std::move(tables), std::move(interactions));
}

Corpus load_corpus(const RunPaths& paths) {
  std::array<data::EmbeddingTable, rq::kModalities> tables;
  for (std::size_t m = 0; m < rq::kModalities; ++m) {
    if (!fs::exists(paths.table(m))) throw IoError("missing " + paths.table(m).string() + " (run gen-data first)");
    tables[m] = data::load_table(paths.table(m));
  }
  auto interactions = data::load_interactions(paths.interactions(), tables[0].data.rows());
  return finish_corpus(std::move(tables), std::move(interactions));
}

QuantizerRun run_quantizer(const Corpus& corpus, const rq::QuantizerConfig& cfg) {
  QuantizerRun run;
  const auto tabs = corpus.matrices();
  run.train = rq::train_mm_rqvae(tabs, cfg);
  run.ids = rq::assign_ids(run.train.model, tabs);
  run.codes = rq::export_code_embeddings(run.train.model);
  if (!run.train.trace.empty()) run.initial = run.train.trace.front().loss;
  run.final = rq::evaluate_losses(run.train.model, tabs);
  return run;
}

Matrix quantized_matrix(std::span<const rq::SemanticIdAssignment> ids, std::size_t modality) {
  if (ids.empty()) throw InvalidArgument("quantized_matrix: no assignments");
  const std::size_t d = ids[0].zhat.at(modality).size();
  if (d == 0) throw InvalidArgument("quantized_matrix: assignments carry no quantized vectors");
  Matrix out(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].item != i) throw InvalidArgument("quantized_matrix: assignments must be ordered by item");
    for (std::size_t c = 0; c < d; ++c) out(i, c) = ids[i].zhat[modality][c];
  }
  return out;
}

diag::ForgettingReport forgetting_vs_collaborative(const Corpus& corpus, const Matrix& embeddings,
                                                   diag::DistanceMetric metric) {
  const auto ref = diag::distance_profile(corpus.tables[0].data, corpus.split, metric);
  const auto now = diag::distance_profile(embeddings, corpus.split, metric);
  return diag::forgetting_report(ref, now);
}

CollapseComparison compare_collapse(const seqrec::RecModel& model, const seqrec::ItemInputs& inputs,
                                    const Matrix& collaborative, double threshold) {
  const auto tables = seqrec::precompute_items(model, inputs);
  CollapseComparison c;
  c.multimodal = diag::collapse_report(tables.tokens, threshold, "multimodal+sid");
  c.projection = diag::collapse_report(tables.proj[0], threshold, "projection-only");
  c.bound = diag::rank_bound_check(collaborative, model.params.proj_w[0], model.params.proj_b[0], 1e-8);
  return c;
}

seqrec::ItemInputs item_inputs(const Corpus& corpus, std::span<const rq::SemanticIdAssignment> ids) {
  return seqrec::make_item_inputs(corpus.matrices(), ids, seqrec::frequency_feature(corpus.split.train_counts));
}

RecRun run_recommender(const Corpus& corpus, std::span<const rq::SemanticIdAssignment> ids,
                       std::span<const rq::ExportedCodes> codes, const seqrec::RecConfig& cfg,
                       diag::DistanceMetric metric) {
  const auto inputs = item_inputs(corpus, ids);
  Rng rng(cfg.seed);
  RecRun run;
  run.model = seqrec::create_recommender(cfg, corpus.dims(), inputs.items(), codes, rng);
  run.forgetting_initial =
      forgetting_vs_collaborative(corpus, seqrec::sid_embedding_matrix(run.model, inputs, 0), metric);
  const auto base_before = seqrec::encode_backbone_base(run.model);
  run.trace = seqrec::train_recommender(run.model, inputs, corpus.split);
  run.base_unchanged = seqrec::encode_backbone_base(run.model) == base_before;
  run.eval = seqrec::evaluate(run.model, inputs, corpus.split);
  run.forgetting = forgetting_vs_collaborative(corpus, seqrec::sid_embedding_matrix(run.model, inputs, 0), metric);
  run.params = seqrec::count_parameters(run.model);
  return run;
}

ordered_json to_json(const CollapseComparison& c) {
  auto report = [](const diag::CollapseReport& r) {
    ordered_json j;
    j["source"] = r.spectrum.source;
    j["effective_rank"] = r.effective_rank;
    j["threshold"] = r.threshold;
    j["entropy"] = r.entropy;
    j["dimensions"] = r.dimensions;
    j["spectrum"] = r.spectrum.normalized;
    return j;
  };
  ordered_json j;
  j["multimodal"] = report(c.multimodal);
  j["projection_only"] = report(c.projection);
  j["rank_bound"] = {{"lhs_rank", c.bound.lhs_rank},
                     {"rank_e_c", c.bound.rank_e},
                     {"rhs_bound", c.bound.rhs_bound},
                     {"holds", c.bound.holds}};
  return j;
}

ordered_json to_json(const seqrec::ParameterCounts& p) {
  ordered_json j;
  j["total"] = p.total;
  j["trainable"] = p.trainable;
  j["backbone_base"] = p.backbone_base;
  j["adapters"] = p.adapters;
  j["adapter_fraction_of_backbone"] = p.backbone_fraction();
  j["trainable_fraction_of_all"] = p.overall_fraction();
  return j;
}

ordered_json cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  const RunConfig r = cfg.resolved();
  Stage stage(cfg, "gen-data");
  const RunPaths& paths = stage.paths();
  const Corpus corpus = build_corpus(r);
  for (std::size_t m = 0; m < rq::kModalities; ++m) {
    data::save_table(paths.table(m), corpus.tables[m]);
    stage.add(paths.table(m));
  }
  data::save_interactions(paths.interactions(), corpus.interactions);
  stage.add(paths.interactions());

  const auto st = data::corpus_stats(corpus.interactions);
  ordered_json j;
  j["users"] = st.users;
  j["items"] = st.items;
  j["interactions"] = st.interactions;
  j["sparsity"] = st.sparsity;
  j["split_users"] = corpus.split.users.size();
  j["excluded_users"] = corpus.split.excluded;
  const fs::path stats = paths.data_dir() / "stats.json";
  write_json(stats, j);
  stage.add(stats);
  stage.commit(cfg);

  log << "Dataset   #Users  #Items  #Interactions  Sparsity\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-9s %6zu  %6zu  %13zu  %.4f%%\n",
                cfg.source == CorpusSource::kSynthetic ? "synthetic" : "files", st.users, st.items, st.interactions,
                100.0 * st.sparsity);
  log << line;
  return j;
}

ordered_json cmd_train_quantizer(const RunConfig& cfg, std::ostream& log) {
  const RunConfig r = cfg.resolved();
  Stage stage(cfg, "train-quantizer");
  const RunPaths& paths = stage.paths();
  const Corpus corpus = load_corpus(paths);
  ordered_json summary = ordered_json::object();
  for (const auto recon : r.experiments.recon_modes) {
    rq::QuantizerConfig qc = r.quantizer;
    qc.recon = recon;
    const std::string tag = rq::to_string(recon);
    log << "training quantizer (" << tag << ")\n";
    const QuantizerRun run = run_quantizer(corpus, qc);
    const fs::path dir = paths.quantizer_dir(recon);
    fs::create_directories(dir);
    rq::save_quantizer(dir / "quantizer.mmqk", run.train.model);
    stage.add(dir / "quantizer.mmqk");
    rq::save_assignments(dir / "assignments.jsonl", run.ids);
    stage.add(dir / "assignments.jsonl");
    rq::save_code_embeddings(dir, run.codes);
    for (const auto& c : run.codes) stage.add(dir / rq::code_table_filename(c.modality, c.level));

    std::string csv = "epoch,recon,align,commitment,total,revived_codes\n";
    for (const auto& e : run.train.trace) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%zu\n", e.epoch, e.loss.recon, e.loss.align,
                    e.loss.commitment, e.loss.total, e.revived_codes);
      csv += buf;
    }
    write_text(dir / "loss_trace.csv", csv);
    stage.add(dir / "loss_trace.csv");

    // Quantized vectors are not part of the assignment file; keep ẑ_c for diagnose.
    data::EmbeddingTable zc{data::Modality::kCode, quantized_matrix(run.ids, 0), "zhat_c"};
    data::save_table(dir / "zhat_c.mmqe", zc);
    stage.add(dir / "zhat_c.mmqe");

    ordered_json j;
    j["initial"] = losses_json(run.initial);
    j["final"] = losses_json(run.final);
    j["epochs"] = run.train.trace.size();
    write_json(dir / "summary.json", j);
    stage.add(dir / "summary.json");
    summary[tag] = j;
    log << "  recon " << fmt(run.initial.recon) << " -> " << fmt(run.final.recon) << "\n";
  }
  stage.commit(cfg);
  return summary;
}

ordered_json cmd_diagnose(const RunConfig& cfg, std::ostream& log) {
  const RunConfig r = cfg.resolved();
  Stage stage(cfg, "diagnose");
  const RunPaths& paths = stage.paths();
  const Corpus corpus = load_corpus(paths);
  const fs::path dir = paths.diagnostics_dir();
  fs::create_directories(dir);
  const double thr = r.experiments.effective_rank_threshold;
  ordered_json summary;

  ordered_json taus = ordered_json::object();
  for (const auto recon : r.experiments.recon_modes) {
    const fs::path qdir = paths.quantizer_dir(recon);
    const std::string tag = rq::to_string(recon);
    if (!fs::exists(qdir / "zhat_c.mmqe")) throw IoError("missing " + (qdir / "zhat_c.mmqe").string() + " (run train-quantizer first)");
    const Matrix zc = data::load_table(qdir / "zhat_c.mmqe").data;
    const auto f = forgetting_vs_collaborative(corpus, zc, r.experiments.metric);
    const auto collapse = diag::collapse_report(zc, thr, "zhat_c/" + tag);
    write_json(dir / ("quantized_" + tag + ".json"), diag::diagnostics_json(collapse, f));
    stage.add(dir / ("quantized_" + tag + ".json"));
    taus[tag] = forgetting_json(f);
    log << "tau(" << tag << "-quantized vs original) = " << fmt(f.tau) << " over " << f.pairs << " pairs\n";
  }
  summary["forgetting"] = taus;

  // Input-embedding collapse of a freshly initialized recommender built on
  // the main quantizer's IDs; train-rec repeats this after training.
  const fs::path qdir = paths.quantizer_dir(r.quantizer.recon);
  const auto ids = rq::load_assignments(qdir / "assignments.jsonl");
  const auto codes = rq::load_code_embeddings(qdir, r.quantizer.levels);
  const auto inputs = item_inputs(corpus, ids);
  Rng rng(r.recommender.seed);
  const auto model = seqrec::create_recommender(r.recommender, corpus.dims(), inputs.items(), codes, rng);
  const auto cmp = compare_collapse(model, inputs, corpus.tables[0].data, thr);
  ordered_json cj = to_json(cmp);
  cj["recommender_state"] = "initialized";
  write_json(dir / "collapse.json", cj);
  stage.add(dir / "collapse.json");
  diag::write_spectrum_csv(dir / "spectrum_multimodal.csv", cmp.multimodal.spectrum);
  diag::write_spectrum_csv(dir / "spectrum_projection.csv", cmp.projection.spectrum);
  diag::write_spectrum_csv(dir / "spectrum_collaborative.csv", diag::singular_spectrum(corpus.tables[0].data));
  stage.add(dir / "spectrum_multimodal.csv");
  stage.add(dir / "spectrum_projection.csv");
  stage.add(dir / "spectrum_collaborative.csv");
  summary["collapse"] = {{"multimodal_effective_rank", cmp.multimodal.effective_rank},
                         {"projection_effective_rank", cmp.projection.effective_rank},
                         {"rank_bound_holds", cmp.bound.holds}};
  log << "effective rank: multimodal+SID " << cmp.multimodal.effective_rank << ", projection-only "
      << cmp.projection.effective_rank << " (rank(E_c) = " << cmp.bound.rank_e << ")\n";
  stage.commit(cfg);
  return summary;
}

ordered_json cmd_train_rec(const RunConfig& cfg, std::ostream& log) {
  const RunConfig r = cfg.resolved();
  Stage stage(cfg, "train-rec");
  const RunPaths& paths = stage.paths();
  const Corpus corpus = load_corpus(paths);
  const fs::path qdir = paths.quantizer_dir(r.quantizer.recon);
  if (!fs::exists(qdir / "assignments.jsonl")) throw IoError("missing " + (qdir / "assignments.jsonl").string() + " (run train-quantizer first)");
  const auto ids = rq::load_assignments(qdir / "assignments.jsonl");
  const auto codes = rq::load_code_embeddings(qdir, r.quantizer.levels);
  ordered_json summary = ordered_json::object();
  for (const auto init : r.experiments.sid_inits) {
    seqrec::RecConfig rc = r.recommender;
    rc.sid_init = init;
    const std::string tag = seqrec::to_string(init);
    log << "training recommender (sid init: " << tag << ")\n";
    const RecRun run = run_recommender(corpus, ids, codes, rc, r.experiments.metric);
    const fs::path dir = paths.rec_dir(init);
    fs::create_directories(dir);
    seqrec::save_recommender(dir / "recommender.mmqk", run.model);
    stage.add(dir / "recommender.mmqk");
    write_json(dir / "eval.json", seqrec::to_json(run.eval));
    stage.add(dir / "eval.json");

    ordered_json fj;
    fj["tau"] = run.forgetting.tau;
    fj["pairs"] = run.forgetting.pairs;
    fj["tau_before_training"] = run.forgetting_initial.tau;
    write_json(dir / "forgetting.json", fj);
    stage.add(dir / "forgetting.json");

    ordered_json pj = to_json(run.params);
    pj["lora"] = rc.lora;
    pj["backbone_base_unchanged"] = run.base_unchanged;
    write_json(dir / "parameters.json", pj);
    stage.add(dir / "parameters.json");

    std::string csv = "step,loss\n";
    for (std::size_t s = 0; s < run.trace.step_loss.size(); ++s) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", s, run.trace.step_loss[s]);
      csv += buf;
    }
    write_text(dir / "train_trace.csv", csv);
    stage.add(dir / "train_trace.csv");

    const auto inputs = item_inputs(corpus, ids);
    const auto cmp = compare_collapse(run.model, inputs, corpus.tables[0].data, r.experiments.effective_rank_threshold);
    ordered_json cj = to_json(cmp);
    cj["recommender_state"] = "trained";
    write_json(dir / "collapse.json", cj);
    stage.add(dir / "collapse.json");

    ordered_json j;
    j["eval"] = seqrec::to_json(run.eval);
    j["forgetting"] = fj;
    j["parameters"] = pj;
    summary[tag] = j;
    log << "  HR@10 " << fmt(run.eval.hr.at(10)) << "  nDCG@10 " << fmt(run.eval.ndcg.at(10)) << "  tau "
        << fmt(run.forgetting.tau) << "  trainable " << run.params.trainable << "/" << run.params.total << "\n";
  }
  stage.commit(cfg);
  return summary;
}

ordered_json cmd_report(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths{cfg.out};
  if (!fs::exists(paths.root)) throw IoError("run directory '" + paths.root.string() + "' does not exist");
  const RunManifest manifest = RunManifest::load(paths.manifest());
  std::vector<std::string> gaps;
  std::vector<std::string> warnings;

  std::string hash;
  for (const auto& [name, s] : manifest.stages) {
    if (hash.empty()) hash = s.config_hash;
    if (s.config_hash != hash) warnings.push_back("config hash of stage '" + name + "' (" + s.config_hash +
                                                  ") differs from " + hash);
  }
  auto load = [&](const fs::path& p) -> json {
    if (!fs::exists(p)) {
      gaps.push_back(fs::relative(p, paths.root).generic_string());
      return json();
    }
    return read_json(p);
  };

  ordered_json rep;
  rep["config_hash"] = hash;
  rep["stats"] = load(paths.data_dir() / "stats.json");
  ordered_json rq2;
  rq2["initialized"] = load(paths.diagnostics_dir() / "collapse.json");
  rq2["trained"] = load(paths.rec_dir(seqrec::SidInit::kCodeEmbeddings) / "collapse.json");
  for (auto* part : {&rq2["initialized"], &rq2["trained"]}) {
    if (part->is_object()) {
      for (auto* k : {"multimodal", "projection_only"}) (*part)[k].erase("spectrum");
    }
  }
  rep["rq2_collapse"] = rq2;
  ordered_json rq3 = ordered_json::object();
  for (auto recon : {rq::ReconLoss::kMmd, rq::ReconLoss::kMse}) {
    const json j = load(paths.diagnostics_dir() / ("quantized_" + rq::to_string(recon) + ".json"));
    rq3[rq::to_string(recon)] = j.is_object() ? ordered_json{{"tau", j.at("tau")}, {"pairs", j.at("pairs")}} : ordered_json();
  }
  rep["rq3_forgetting"] = rq3;
  ordered_json rq4 = ordered_json::object();
  ordered_json evals = ordered_json::object();
  ordered_json params = ordered_json::object();
  for (auto init : {seqrec::SidInit::kCodeEmbeddings, seqrec::SidInit::kRandom}) {
    const std::string tag = seqrec::to_string(init);
    rq4[tag] = load(paths.rec_dir(init) / "forgetting.json");
    evals[tag] = load(paths.rec_dir(init) / "eval.json");
    params[tag] = load(paths.rec_dir(init) / "parameters.json");
  }
  rep["rq4_forgetting"] = rq4;
  rep["evaluation"] = evals;
  rep["parameters"] = params;
  rep["gaps"] = gaps;
  rep["warnings"] = warnings;

  std::string md = "# MMQ run report\n\n";
  md += "Config hash: `" + hash + "`\n\n";
  if (rep["stats"].is_object()) {
    const auto& s = rep["stats"];
    md += "## Corpus\n\n| users | items | interactions | sparsity |\n|---|---|---|---|\n";
    md += "| " + s["users"].dump() + " | " + s["items"].dump() + " | " + s["interactions"].dump() + " | " +
          fmt(s["sparsity"].get<double>()) + " |\n\n";
  }
  md += "## Embedding collapse\n\n| recommender | multimodal+SID eff. rank | projection-only eff. rank | rank bound holds |\n|---|---|---|---|\n";
  for (const auto* state : {"initialized", "trained"}) {
    const auto& c = rq2[state];
    if (!c.is_object()) continue;
    md += std::string("| ") + state + " | " + c["multimodal"]["effective_rank"].dump() + " | " +
          c["projection_only"]["effective_rank"].dump() + " | " + c["rank_bound"]["holds"].dump() + " |\n";
  }
  md += "\n## Forgetting: quantized vs original distances\n\n| reconstruction | tau |\n|---|---|\n";
  for (const auto& [tag, j] : rq3.items()) {
    if (j.is_object()) md += "| " + tag + " | " + fmt(j["tau"].get<double>()) + " |\n";
  }
  md += "\n## Forgetting: fine-tuned SID embeddings vs original distances\n\n| SID init | tau | HR@10 | nDCG@10 | trainable fraction |\n|---|---|---|---|---|\n";
  for (const auto& [tag, j] : rq4.items()) {
    if (!j.is_object()) continue;
    const auto& e = evals[tag];
    const auto& p = params[tag];
    md += "| " + tag + " | " + fmt(j["tau"].get<double>()) + " | " +
          (e.is_object() ? fmt(e["HR"]["10"].get<double>()) : std::string("-")) + " | " +
          (e.is_object() ? fmt(e["nDCG"]["10"].get<double>()) : std::string("-")) + " | " +
          (p.is_object() ? fmt(p["trainable_fraction_of_all"].get<double>()) : std::string("-")) + " |\n";
  }
  if (!gaps.empty()) {
    md += "\n## Missing artifacts\n\n";
    for (const auto& g : gaps) md += "- " + g + "\n";
  }
  if (!warnings.empty()) {
    md += "\n## Warnings\n\n";
    for (const auto& w : warnings) md += "- " + w + "\n";
  }
  write_json(paths.root / "report.json", rep);
  write_text(paths.root / "report.md", md);
  for (const auto& w : warnings) log << "warning: " << w << "\n";
  for (const auto& g : gaps) log << "missing: " << g << "\n";
  log << "wrote " << (paths.root / "report.md").generic_string() << "\n";
  return rep;
}

int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    if (name == "gen-data") {
      cmd_gen_data(cfg, log);
    } else if (name == "train-quantizer") {
      cmd_train_quantizer(cfg, log);
    } else if (name == "diagnose") {
      cmd_diagnose(cfg, log);
    } else if (name == "train-rec") {
      cmd_train_rec(cfg, log);
    } else if (name == "report") {
      cmd_report(cfg, log);
    } else {
      throw ConfigError("unknown subcommand '" + name + "'");
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kNumeric:
        return 3;
      case ErrorKind::kIo:
        return 4;
      default:
        return 2;
    }
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mmq::cli
