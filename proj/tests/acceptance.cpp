// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. Criteria 5, 9, 10 and 11
// drive the mmq binary end to end on the default desk configuration.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "grad_suites.hpp"
#include "mmq/cli/config.hpp"
#include "mmq/cli/pipeline.hpp"
#include "mmq/diagnostics.hpp"
#include "mmq/diffkit/mlp.hpp"
#include "mmq/seqrec/train.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace mmq;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot read " + p.string());
  return json::parse(f);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// ---- criterion 1 ----

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  constexpr std::size_t kInstances = 100;
  const std::vector<std::function<test::SuiteResult()>> suites = {
      [] { return test::grad_suite_mmd(kInstances); },       [] { return test::grad_suite_info_nce(kInstances); },
      [] { return test::grad_suite_bce(kInstances); },       [] { return test::grad_suite_mse(kInstances); },
      [] { return test::grad_suite_commitment(kInstances); }, [] { return test::grad_suite_quantizer(kInstances); },
      [] { return test::grad_suite_recommender(kInstances); },
  };
  bool ok = true;
  std::string detail;
  for (const auto& run : suites) {
    const auto s = run();
    const bool good = s.instances >= 100 && s.worst <= 1e-4 && s.unresolved_fraction() <= 0.01;
    ok = ok && good;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %.1e (%zu/%zu unresolved); ", s.name.c_str(), s.worst, s.unresolved, s.checked);
    detail += buf;
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, detail + "total " + fmt(secs, 1) + " s"};
}

// ---- criterion 2 ----

double brute_tau(const std::vector<double>& a, const std::vector<double>& b) {
  long long conc = 0, disc = 0, ta = 0, tb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) {
        ++ta;
      } else if (db == 0.0) {
        ++tb;
      } else if ((da > 0) == (db > 0)) {
        ++conc;
      } else {
        ++disc;
      }
    }
  }
  const double n1 = static_cast<double>(conc + disc + ta), n2 = static_cast<double>(conc + disc + tb);
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  return static_cast<double>(conc - disc) / std::sqrt(n1 * n2);
}

Outcome tau_equivalence() {
  std::size_t mismatches = 0;
  for (std::uint64_t c = 0; c < 1000; ++c) {
    Rng rng(50'000 + c);
    const std::size_t n = 2 + rng.index(199);
    const std::size_t levels = 1 + rng.index(2 * n);  // small value sets force ties
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<double>(rng.index(levels));
      b[i] = c % 3 == 0 ? rng.normal() : static_cast<double>(rng.index(levels));
    }
    mismatches += diag::kendall_tau(a, b) != brute_tau(a, b);
  }
  const double x[] = {1, 2, 3}, y[] = {1, 3, 2};
  const double hand = diag::kendall_tau(x, y);
  return {mismatches == 0 && hand == 1.0 / 3.0,
          std::to_string(mismatches) + " of 1000 differ from brute force; hand case " + fmt(hand, 17)};
}

// ---- criterion 3 ----

Outcome quantization_oracle(const fs::path& run) {
  const auto cfg = cli::preset_config("desk").resolved();
  const auto corpus = cli::load_corpus(cli::RunPaths{run});
  const auto model = rq::load_quantizer(run / "quantizer_mmd" / "quantizer.mmqk", cfg.quantizer);
  const auto tabs = corpus.matrices();
  const auto ids = rq::assign_ids(model, tabs);
  Rng pick(3);
  std::size_t choices = 0, wrong = 0, zhat_wrong = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t i = pick.index(ids.size());
    for (std::size_t m = 0; m < rq::kModalities; ++m) {
      const auto& branch = model.branches[m];
      const Matrix z = mlp_apply(branch.encoder, tabs[m]->gather_rows(std::vector<std::size_t>{i}));
      std::vector<double> r(z.row(0).begin(), z.row(0).end());
      std::vector<double> zhat(r.size(), 0.0);
      for (std::size_t l = 0; l < branch.codebooks.size(); ++l) {
        const Matrix& codes = branch.codebooks[l].codes;
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < codes.rows(); ++j) {
          double d = 0.0;
          for (std::size_t k = 0; k < r.size(); ++k) d += (r[k] - codes(j, k)) * (r[k] - codes(j, k));
          if (d < best_d) {
            best_d = d;
            best = j;
          }
        }
        ++choices;
        wrong += ids[i].sids[m][l] != best;
        const std::uint32_t chosen = ids[i].sids[m][l];
        for (std::size_t k = 0; k < r.size(); ++k) {
          r[k] -= codes(chosen, k);
          zhat[k] += codes(chosen, k);
        }
      }
      zhat_wrong += ids[i].zhat[m] != zhat;
    }
  }
  return {wrong == 0 && zhat_wrong == 0, std::to_string(wrong) + " of " + std::to_string(choices) +
                                             " level choices differ; " + std::to_string(zhat_wrong) +
                                             " quantized vectors differ from the code sum"};
}

// ---- criterion 4 ----

Outcome rank_bound() {
  std::size_t violations = 0;
  const std::size_t trials = 500;
  for (std::uint64_t t = 0; t < trials; ++t) {
    Rng rng(90'000 + t);
    const std::size_t d = 2 + rng.index(48);
    const std::size_t r = 1 + rng.index(d);
    const std::size_t rows = d + rng.index(100);
    const Matrix e = test::planted_rank(rows, d, r, rng);
    const Matrix w = rng.normal_matrix(d, 1 + rng.index(128));
    const Matrix b = rng.normal_matrix(1, w.cols());
    const auto rb = diag::rank_bound_check(e, w, b, 1e-8);
    violations += rb.lhs_rank > r + 1 || !rb.holds;
  }
  return {violations == 0, std::to_string(violations) + " violations in " + std::to_string(trials) + " trials"};
}

// ---- criterion 8 ----

Outcome metric_oracle() {
  std::size_t mismatches = 0, order_violations = 0;
  const std::vector<std::size_t> ks = {5, 10, 20};
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    Rng rng(7'000 + inst);
    const std::size_t items = 5 + rng.index(60);
    const std::size_t users = 1 + rng.index(40);
    std::vector<std::size_t> ranks;
    std::vector<std::size_t> oracle_ranks;
    for (std::size_t u = 0; u < users; ++u) {
      std::vector<double> scores(items);
      for (double& s : scores) s = static_cast<double>(rng.index(8));
      const std::size_t target = rng.index(items);
      ranks.push_back(seqrec::rank_of(scores, target));
      // full scan: order all items by score, ties to the lower id
      std::vector<std::size_t> order(items);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      oracle_ranks.push_back(1 + static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()));
    }
    const auto got = seqrec::metrics_from_ranks(ranks, ks);
    mismatches += ranks != oracle_ranks;
    for (std::size_t k : ks) {
      double hr = 0.0, nd = 0.0;
      for (std::size_t rk : oracle_ranks) {
        if (rk > k) continue;
        hr += 1.0;
        nd += 1.0 / std::log2(static_cast<double>(rk) + 1.0);
      }
      hr /= static_cast<double>(users);
      nd /= static_cast<double>(users);
      mismatches += got.hr.at(k) != hr || got.ndcg.at(k) != nd;
      order_violations += got.ndcg.at(k) > got.hr.at(k);
    }
  }
  const std::size_t three[] = {3};
  const std::size_t five[] = {5};
  const double nd5 = seqrec::metrics_from_ranks(three, five).ndcg.at(5);
  return {mismatches == 0 && order_violations == 0 && nd5 == 0.5,
          std::to_string(mismatches) + " mismatches in 50 instances; " + std::to_string(order_violations) +
              " nDCG > HR; rank-3 nDCG@5 = " + fmt(nd5, 17)};
}

// ---- CLI runs (criteria 5, 9, 10, 11) ----

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "MMQ_THREADS=1 '" + cli + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* const kCommands[] = {"gen-data", "train-quantizer", "diagnose", "train-rec", "report"};

struct PipelineRun {
  fs::path dir;
  bool ok = true;
  std::string failure;
  double seconds = 0.0;
};

PipelineRun run_pipeline(const std::string& cli, const fs::path& dir) {
  PipelineRun p;
  p.dir = dir;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  const auto t0 = Clock::now();
  for (const char* cmd : kCommands) {
    const fs::path log = dir.parent_path() / (dir.filename().string() + "_" + cmd + ".log");
    const int code = run_cli(cli, std::string(cmd) + " --out '" + dir.string() + "'", log);
    if (code != 0) {
      p.ok = false;
      p.failure = std::string(cmd) + " exited " + std::to_string(code) + " (see " + log.string() + ")";
      break;
    }
  }
  p.seconds = seconds_since(t0);
  return p;
}

Outcome collapse_direction(const PipelineRun& run) {
  if (!run.ok) return {false, run.failure};
  const json init = read_json(run.dir / "diagnostics" / "collapse.json");
  const json trained = read_json(run.dir / "rec_code-embeddings" / "collapse.json");
  auto rank = [](const json& j, const char* k) { return j.at(k).at("effective_rank").get<std::size_t>(); };
  const bool dir_init = rank(init, "multimodal") > rank(init, "projection_only");
  const bool dir_trained = rank(trained, "multimodal") > rank(trained, "projection_only");
  const bool in_time = run.seconds <= 600.0;
  return {dir_init && dir_trained && in_time,
          "effective rank multimodal+SID vs projection-only: initialized " + std::to_string(rank(init, "multimodal")) +
              " vs " + std::to_string(rank(init, "projection_only")) + ", trained " +
              std::to_string(rank(trained, "multimodal")) + " vs " + std::to_string(rank(trained, "projection_only")) +
              "; pipeline " + fmt(run.seconds, 1) + " s"};
}

Outcome lora_contract(const PipelineRun& run) {
  if (!run.ok) return {false, run.failure};
  const auto cfg = cli::preset_config("desk").resolved();
  const cli::RunPaths paths{run.dir};
  const auto corpus = cli::load_corpus(paths);
  const auto qdir = paths.quantizer_dir(cfg.quantizer.recon);
  const auto ids = rq::load_assignments(qdir / "assignments.jsonl");
  const auto codes = rq::load_code_embeddings(qdir, cfg.quantizer.levels);
  const auto inputs = cli::item_inputs(corpus, ids);
  auto rc = cfg.recommender;
  rc.sid_init = seqrec::SidInit::kCodeEmbeddings;
  Rng rng(rc.seed);
  const auto fresh = seqrec::create_recommender(rc, corpus.dims(), inputs.items(), codes, rng);
  const auto trained = seqrec::load_recommender(paths.rec_dir(rc.sid_init) / "recommender.mmqk", rc, corpus.dims(),
                                                inputs.items(), cfg.quantizer.levels);
  const bool same = seqrec::encode_backbone_base(fresh) == seqrec::encode_backbone_base(trained);
  const bool adapters_moved = !(fresh.params.blocks[0].up_b == trained.params.blocks[0].up_b);
  const auto p = seqrec::count_parameters(trained);
  const json pj = read_json(paths.rec_dir(rc.sid_init) / "parameters.json");
  return {same && adapters_moved && pj.at("backbone_base_unchanged") == true,
          std::string("base backbone bytes ") + (same ? "unchanged" : "CHANGED") + "; adapters " +
              (adapters_moved ? "updated" : "not updated") + "; trainable " + std::to_string(p.trainable) + "/" +
              std::to_string(p.total) + " = " + fmt(100.0 * p.overall_fraction(), 2) + "% of all, adapters " +
              fmt(100.0 * p.backbone_fraction(), 2) + "% of the backbone"};
}

Outcome learning_sanity(const PipelineRun& run) {
  if (!run.ok) return {false, run.failure};
  const json eval = read_json(run.dir / "rec_code-embeddings" / "eval.json");
  const json stats = read_json(run.dir / "data" / "stats.json");
  const double items = stats.at("items").get<double>();
  const double hr10 = eval.at("HR").at("10").get<double>();
  const double need = 5.0 * 10.0 / items;
  return {hr10 >= need && run.seconds <= 600.0,
          "HR@10 " + fmt(hr10) + " vs required " + fmt(need) + " (random " + fmt(10.0 / items) + ")"};
}

Outcome determinism(const PipelineRun& a, const PipelineRun& b) {
  if (!a.ok) return {false, a.failure};
  if (!b.ok) return {false, b.failure};
  const json ma = read_json(a.dir / "manifest.json"), mb = read_json(b.dir / "manifest.json");
  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const char* stage : {"gen-data", "train-quantizer", "diagnose", "train-rec"}) {
    const auto& aa = ma.at("stages").at(stage).at("artifacts");
    const auto& ab = mb.at("stages").at(stage).at("artifacts");
    if (aa.size() != ab.size()) {
      ++differing;
      continue;
    }
    for (std::size_t i = 0; i < aa.size(); ++i) {
      ++compared;
      const bool same = aa[i].at("path") == ab[i].at("path") && aa[i].at("crc32") == ab[i].at("crc32") &&
                        cli::file_checksum(a.dir / aa[i].at("path").get<std::string>()) ==
                            cli::file_checksum(b.dir / ab[i].at("path").get<std::string>());
      if (!same && first_diff.empty()) first_diff = aa[i].at("path");
      differing += !same;
    }
  }
  for (const char* f : {"report.json", "report.md", "config.json"}) {
    ++compared;
    const bool same = read_bytes(a.dir / f) == read_bytes(b.dir / f);
    if (!same && first_diff.empty()) first_diff = f;
    differing += !same;
  }
  return {differing == 0 && compared > 0, std::to_string(compared) + " artifacts compared across two runs, " +
                                              std::to_string(differing) + " differ" +
                                              (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

// ---- criteria 6 and 7 ----

struct SeedTaus {
  std::uint64_t seed = 0;
  double mmd = 0.0, mse = 0.0;
  double code_init = 0.0, random_init = 0.0;
};

std::vector<SeedTaus> seed_experiments(const PipelineRun& run) {
  const auto desk = cli::preset_config("desk");
  const auto corpus = cli::load_corpus(cli::RunPaths{run.dir});
  const auto metric = desk.experiments.metric;
  std::vector<SeedTaus> out;
  for (std::uint64_t seed : desk.experiments.seeds) {
    auto c = desk;
    c.seed = seed;
    const auto r = c.resolved();
    SeedTaus t;
    t.seed = seed;
    cli::QuantizerRun main_run;
    for (auto recon : {rq::ReconLoss::kMmd, rq::ReconLoss::kMse}) {
      auto qc = r.quantizer;
      qc.recon = recon;
      auto q = cli::run_quantizer(corpus, qc);
      const double tau = cli::forgetting_vs_collaborative(corpus, cli::quantized_matrix(q.ids, 0), metric).tau;
      (recon == rq::ReconLoss::kMmd ? t.mmd : t.mse) = tau;
      if (recon == r.quantizer.recon) main_run = std::move(q);
    }
    for (auto init : {seqrec::SidInit::kCodeEmbeddings, seqrec::SidInit::kRandom}) {
      auto rc = r.recommender;
      rc.sid_init = init;
      const auto rec = cli::run_recommender(corpus, main_run.ids, main_run.codes, rc, metric);
      (init == seqrec::SidInit::kCodeEmbeddings ? t.code_init : t.random_init) = rec.forgetting.tau;
    }
    std::cout << "  seed " << seed << ": tau mmd " << fmt(t.mmd) << " mse " << fmt(t.mse) << "; tau code-init "
              << fmt(t.code_init) << " random-init " << fmt(t.random_init) << std::endl;
    out.push_back(t);
  }
  return out;
}

Outcome count_wins(const std::vector<SeedTaus>& taus, double SeedTaus::*better, double SeedTaus::*worse,
                   const char* label) {
  if (taus.empty()) return {false, "no seed experiments ran"};
  std::size_t wins = 0;
  std::string list;
  for (const auto& t : taus) {
    wins += t.*better > t.*worse;
    list += (list.empty() ? "" : ", ") + fmt(t.*better, 3) + "/" + fmt(t.*worse, 3);
  }
  return {wins >= 4 && taus.size() == 5, std::string(label) + " wins " + std::to_string(wins) + " of " +
                                             std::to_string(taus.size()) + " seeds [" + list + "]"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmq acceptance criteria"};
  std::string cli;
  std::string work = "acceptance_runs";
  app.add_option("--cli", cli, "Path to the mmq binary")->required();
  app.add_option("--work", work, "Scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);

  std::map<int, Outcome> results;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    results[id] = o;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << o.detail << " ["
              << fmt(seconds_since(t0), 1) << " s]" << std::endl;
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "kendall tau oracle", tau_equivalence);

  const fs::path root(work);
  PipelineRun first, second;
  try {
    first = run_pipeline(cli, root / "run_a");
    second = run_pipeline(cli, root / "run_b");
  } catch (const std::exception& e) {
    first.ok = second.ok = false;
    first.failure = second.failure = e.what();
  }
  report(3, "quantization oracle", [&] {
    return first.ok ? quantization_oracle(first.dir) : Outcome{false, first.failure};
  });
  report(4, "rank bound", rank_bound);
  report(5, "collapse direction", [&] { return collapse_direction(first); });

  std::vector<SeedTaus> taus;
  try {
    if (first.ok) taus = seed_experiments(first);
  } catch (const std::exception& e) {
    std::cout << "  seed experiments failed: " << e.what() << std::endl;
  }
  report(6, "quantizer forgetting direction", [&] {
    return count_wins(taus, &SeedTaus::mmd, &SeedTaus::mse, "MMD over MSE");
  });
  report(7, "fine-tuning forgetting direction", [&] {
    return count_wins(taus, &SeedTaus::code_init, &SeedTaus::random_init, "code-embedding init over random init");
  });
  report(8, "metric oracle", metric_oracle);
  report(9, "LoRA contract", [&] { return lora_contract(first); });
  report(10, "learning sanity", [&] { return learning_sanity(first); });
  report(11, "determinism", [&] { return determinism(first, second); });

  std::size_t failed = 0;
  std::cout << "summary:";
  for (const auto& [id, o] : results) {
    std::cout << " " << id << "=" << (o.pass ? "PASS" : "FAIL");
    failed += !o.pass;
  }
  std::cout << std::endl;
  return failed == 0 ? 0 : 1;
}
