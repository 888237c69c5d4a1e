#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sae/config.hpp"
#include "sae/pipeline.hpp"
#include "sae/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Small-area estimation with geostatistically upscaled covariates"};
  app.set_version_flag("--version", std::string(sae::kToolName) + " " + sae::kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "Configuration file (key = value lines)");
  app.add_option("--seed", seed, "Master seed (overrides config)")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--workers", workers, "Worker threads (overrides config)");
  app.add_option("--out", out_dir, "Output directory (overrides config)");

  const char* names[] = {"direct", "upscale", "fit", "bootstrap", "test", "simulate", "diagnose"};
  const char* descs[] = {
      "Post-stratified direct estimates and their log-scale variances",
      "Variogram fit, neighborhood selection and block-kriged covariates",
      "REML fit of the log-scale area model and EBLUP predictions",
      "Double parametric bootstrap: SEs, percentile CIs, EBLUP MSEs",
      "Monte Carlo likelihood-ratio test for one parameter",
      "Generate a synthetic scenario (regions, survey, census, grid)",
      "Diagnostics bundle: Q-Q tables, envelopes, CV comparison, aggregation"};
  for (int i = 0; i < 7; ++i) app.add_subcommand(names[i], descs[i]);

  CLI11_PARSE(app, argc, argv);

  try {
    sae::cfg::PipelineConfig cfg;
    if (!config_path.empty()) cfg = sae::cfg::parse_config_file(config_path);
    if (seed_set) cfg.master_seed = seed;
    if (workers > 0) cfg.workers = workers;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "direct") sae::pipe::cmd_direct(cfg);
    else if (cmd == "upscale") sae::pipe::cmd_upscale(cfg);
    else if (cmd == "fit") sae::pipe::cmd_fit(cfg);
    else if (cmd == "bootstrap") sae::pipe::cmd_bootstrap(cfg);
    else if (cmd == "test") sae::pipe::cmd_test(cfg);
    else if (cmd == "simulate") sae::pipe::cmd_simulate(cfg);
    else if (cmd == "diagnose") sae::pipe::cmd_diagnose(cfg);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
