#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nnprat/attacks.hpp"
#include "nnprat/data.hpp"
#include "nnprat/models.hpp"
#include "nnprat/train.hpp"

namespace nnprat {

// Where the samples come from. Generated kinds ("gaussian", "synth-digits")
// draw deterministically and are split by test_fraction; "idx" reads four
// files. `classes` optionally restricts to a label subset (remapped to
// 0..k-1 in list order); caps truncate the splits after subsetting.
struct DatasetConfig {
  std::string kind = "gaussian";  // "gaussian" | "synth-digits" | "idx"
  GaussianSpec gaussian;
  SynthDigitsSpec digits;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::vector<int> classes;
  std::size_t train_cap = 0;  // 0 keeps every row
  std::size_t test_cap = 0;
  double test_fraction = 0.2;
};

struct NamedAttack {
  std::string name;
  AttackSpec spec;
};

// The evaluation battery used when a config names no attacks of its own:
// "fgsm" (single step at the training epsilon) and "pgd20" (20 steps at the
// training epsilon/alpha), both zero-init and deterministic. The parser
// resolves this at parse time; run_experiment and evaluate_checkpoint apply
// it to programmatically built configs with an empty roster.
std::vector<NamedAttack> default_eval_attacks(const AttackSpec& training_attack);

// Optional sweep axes. An empty axis falls back to the single value already
// configured (projection lambda/beta, train seed).
struct AblationGrid {
  std::vector<double> lambdas;
  std::vector<double> betas;
  std::vector<std::uint64_t> seeds;
  std::size_t cap = 64;

  std::size_t cardinality() const;
};

// Everything one experiment needs: data source, architecture, training
// recipe, evaluation attacks, sweep axes, output location. Parsed from and
// serialized to the sectioned key/value text documented in the README.
struct ExperimentConfig {
  DatasetConfig dataset;
  NetworkSpec network;  // input shape and class count are resolved from the
                        // dataset when the run starts, not stored here
  bool network_seed_set = false;  // explicit [network] seed beats the run seed
  TrainSpec train;
  std::vector<NamedAttack> eval_attacks;
  AblationGrid ablation;
  std::string output_dir = "runs";

  // Collects every violation and throws one ValidationError listing them.
  void validate() const;
};

// Parses config text. Structural problems (bad lines, unknown keys,
// unparsable values) are collected and thrown as one ValidationError;
// semantic checks live in ExperimentConfig::validate().
ExperimentConfig parse_config(const std::string& text);

// read file + parse_config. Throws FormatError if the file cannot be read.
ExperimentConfig load_config(const std::string& path);

// Canonical text form; parse_config(serialize_config(c)) reconstructs c.
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace nnprat
