#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include "rslab/bench.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reproducible resampling and particle-filter experiments"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::string format;
  unsigned jobs = 1;
  for (const auto& kind : rslab::bench::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides RSLAB_OUT_DIR and output.dir)");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--format", format, "result table format")->check(CLI::IsMember({"csv", "json"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  const std::string subcommand = app.get_subcommands().front()->get_name();

  rslab::bench::ExperimentConfig cfg;
  try {
    cfg = rslab::bench::load_config(config_path, subcommand);
  } catch (const rslab::Error& e) {
    std::cerr << "bench-cli: " << e.what() << "\n";
    return kExitConfig;
  }
  if (!format.empty()) cfg.format = format;
  std::string dir = cfg.output_dir.value_or("results");
  if (const char* env = std::getenv("RSLAB_OUT_DIR"); env && *env) dir = env;
  if (!out_dir.empty()) dir = out_dir;

  try {
    const auto rows = rslab::bench::run_experiment(cfg, jobs);
    rslab::bench::write_outputs(cfg, rows, dir);
  } catch (const rslab::Error& e) {
    std::cerr << "bench-cli: experiment " << cfg.experiment << " failed: " << e.what() << "\n";
    return e.code() == rslab::ErrorCode::ConfigError ? kExitConfig : kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "bench-cli: experiment " << cfg.experiment << " failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
