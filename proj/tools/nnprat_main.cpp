#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nnprat/config.hpp"
#include "nnprat/errors.hpp"
#include "nnprat/experiment.hpp"
#include "nnprat/metrics.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_override,
            bool seed_override_set, std::uint64_t seed_override, std::size_t jobs) {
  nnprat::ExperimentConfig cfg = nnprat::load_config(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (seed_override_set) {
    cfg.ablation.seeds = {seed_override};
    cfg.train.seed = seed_override;
  }
  nnprat::ExperimentResult result = nnprat::run_experiment(cfg, jobs);
  std::size_t failed = 0;
  for (const auto& run : result.runs) {
    if (run.failed) {
      ++failed;
      std::fprintf(stderr, "run %s failed: %s\n", run.run_id.c_str(), run.error.c_str());
    }
  }
  std::printf("%zu run(s), %zu failed\nsummary: %s\n", result.runs.size(), failed,
              result.summary_path.c_str());
  return failed == result.runs.size() && !result.runs.empty() ? 1 : 0;
}

int cmd_compare(const std::vector<std::string>& summaries, const std::string& out_csv) {
  nnprat::CompareReport report = nnprat::compare_summaries(summaries);
  std::fputs(report.text.c_str(), stdout);
  if (!out_csv.empty()) {
    FILE* f = std::fopen(out_csv.c_str(), "wb");
    if (!f) {
      std::fprintf(stderr, "cannot write %s\n", out_csv.c_str());
      return 1;
    }
    std::fputs(report.csv.c_str(), f);
    std::fclose(f);
    std::printf("csv: %s\n", out_csv.c_str());
  }
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& config_path, const std::string& out_json) {
  nnprat::ExperimentConfig cfg = nnprat::load_config(config_path);
  cfg.validate();
  nnprat::MetricsReport report = nnprat::evaluate_checkpoint(ckpt, cfg);
  std::fputs(nnprat::format_metrics_text(report).c_str(), stdout);
  if (!out_json.empty()) {
    nnprat::write_metrics_json(report, out_json);
    std::printf("json: %s\n", out_json.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial-training laboratory with projection-removal regularization"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path;
  std::vector<std::string> summaries;
  std::uint64_t seed_override = 0;
  std::size_t jobs = 1;

  CLI::App* run = app.add_subcommand("run", "train and evaluate every grid point of a config");
  run->add_option("config", config_path, "experiment config file")->required();
  CLI::Option* seed_opt =
      run->add_option("--seed-override", seed_override, "replace the seed axis with this seed");
  run->add_option("--out", out_path, "override the configured output directory");
  run->add_option("--jobs", jobs, "worker threads for grid points")->check(CLI::Range(1, 256));

  CLI::App* compare = app.add_subcommand("compare", "aggregate summary.csv files per method");
  compare->add_option("summaries", summaries, "summary.csv paths")->required();
  compare->add_option("--out", out_path, "write the aggregate table as CSV here");

  CLI::App* eval = app.add_subcommand("eval", "re-evaluate a checkpoint on a config's test split");
  eval->add_option("checkpoint", ckpt_path, "model checkpoint")->required();
  eval->add_option("config", config_path, "experiment config file")->required();
  eval->add_option("--out", out_path, "write the metrics as JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path, out_path, seed_opt->count() > 0, seed_override, jobs);
    }
    if (compare->parsed()) {
      return cmd_compare(summaries, out_path);
    }
    return cmd_eval(ckpt_path, config_path, out_path);
  } catch (const nnprat::ValidationError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const nnprat::SchemaError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
