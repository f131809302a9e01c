// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

// mmq: command-line driver for the two-stage pipeline.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmq/cli/config.hpp"
#include "mmq/cli/pipeline.hpp"
#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"
#include "mmq/version.hpp"

namespace {

// MMQ_THREADS caps OpenMP workers; unset or invalid leaves the default.
void apply_thread_cap() {
  const char* env = std::getenv("MMQ_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw mmq::ConfigError("MMQ_THREADS must be a positive integer, got '" + std::string(env) + "'");
  mmq::kernels::set_max_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal residual quantization and sequential recommendation toolkit", "mmq"};
  app.set_version_flag("--version", mmq::kVersion);
  app.require_subcommand(1, 1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::string recon;
  std::string init_sids;

  const char* commands[][2] = {
      {"gen-data", "Generate or ingest the corpus"},
      {"train-quantizer", "Train the multimodal residual quantizer and export semantic IDs"},
      {"diagnose", "Embedding-collapse and forgetting diagnostics"},
      {"train-rec", "Train and evaluate the sequential recommender"},
      {"report", "Consolidate run artifacts into one report"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run config (default: desk preset)");
    sub->add_option("--seed", seed, "Root seed");
    sub->add_option("--out", out, "Run directory");
    sub->add_option("--recon", recon, "Reconstruction loss")->check(CLI::IsMember({"mmd", "mse"}));
    sub->add_option("--init-sids", init_sids, "SID embedding initialization")
        ->check(CLI::IsMember({"code-embeddings", "random"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const CLI::App* sub = app.get_subcommands().front();

  mmq::cli::RunConfig cfg;
  try {
    apply_thread_cap();
    cfg = config_path.empty() ? mmq::cli::preset_config("desk") : mmq::cli::load_config(config_path);
    mmq::cli::Overrides o;
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--out")) o.out = out;
    if (!recon.empty()) o.recon = mmq::rq::parse_recon(recon);
    if (!init_sids.empty()) o.init_sids = mmq::seqrec::parse_sid_init(init_sids);
    mmq::cli::apply_overrides(cfg, o);
  } catch (const mmq::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const mmq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return mmq::cli::run_command(command, cfg, std::cout, std::cerr);
}
