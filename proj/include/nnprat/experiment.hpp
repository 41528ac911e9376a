#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nnprat/config.hpp"
#include "nnprat/data.hpp"
#include "nnprat/metrics.hpp"
#include "nnprat/models.hpp"

namespace nnprat {

// One resolved grid point: training recipe with lambda/beta/seed applied and
// the network spec completed from the dataset.
struct RunPlan {
  std::size_t index = 0;  // grid-order position
  std::string run_id;
  NetworkSpec network;
  TrainSpec train;
};

// One summary.csv row.
struct RunOutcome {
  std::string run_id;
  std::string method;
  double lambda = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;  // empty on success
  double clean_acc = 0.0;
  double fgsm_acc = 0.0;
  double pgd20_acc = 0.0;
  double fisher = 0.0;
  double silhouette = 0.0;
  double spectral_norm = 0.0;
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;  // grid order
  std::string summary_path;
};

// Materializes the train/test splits the config describes. Generated kinds
// draw once and split by test_fraction; idx reads the four files. Class
// subsetting and caps apply afterwards.
std::pair<Dataset, Dataset> build_datasets(const DatasetConfig& cfg);

// Grid expansion in lambda-major, then beta, then seed order. Needs the
// training split to resolve input shape and class count.
std::vector<RunPlan> expand_grid(const ExperimentConfig& cfg, const Dataset& train_set);

// Validates, trains and evaluates every grid point, writes each run's
// artifacts under <output_dir>/<run_id>/ and the grid summary to
// <output_dir>/summary.csv. jobs caps worker threads (0 or 1 = sequential);
// summary rows always land in grid order. A run that dies with a numeric or
// training error is recorded as failed (metrics nan) and the grid continues.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1);

// Clean accuracy, every configured eval attack, and the attacked-feature
// geometry of `model` on `test`. When out_dir is nonempty also writes
// metrics.json, pca_clean.csv, pca_adv.csv, and neighbors.csv there.
MetricsReport evaluate_model(const Network& model, const Dataset& test,
                             const std::vector<NamedAttack>& attacks,
                             const std::string& out_dir);

// Loads a checkpoint and re-evaluates it on the config's test split.
MetricsReport evaluate_checkpoint(const std::string& ckpt_path, const ExperimentConfig& cfg);

std::string format_metrics_text(const MetricsReport& r);

std::string summary_header();
std::string summary_row(const RunOutcome& r);

// Per-method mean and sample standard deviation over summary rows.
struct CompareReport {
  std::string text;  // aligned table
  std::string csv;
};

// Merges one or more summary.csv files; every file must carry the exact
// summary schema (SchemaError otherwise). Methods are ordered alphabetically.
CompareReport compare_summaries(const std::vector<std::string>& paths);

}  // namespace nnprat
