#include "nnprat/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "nnprat/attacks.hpp"
#include "nnprat/errors.hpp"
#include "nnprat/rng.hpp"
#include "nnprat/train.hpp"

namespace nnprat {

namespace {

constexpr std::size_t kEvalChunk = 512;
constexpr std::size_t kProfileK = 10;
constexpr std::uint64_t kSplitSalt = 0x73706c6974ULL;  // "split"

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out << content;
  if (!out) throw FormatError("write failed: " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

Tensor slice_rows(const Tensor& m, std::size_t from, std::size_t count) {
  Tensor out = Tensor::zeros({count, m.dim(1)});
  std::copy(m.values().data() + from * m.dim(1), m.values().data() + (from + count) * m.dim(1),
            out.values().data());
  return out;
}

void keep_first_rows(Dataset& d, std::size_t cap) {
  if (cap == 0 || cap >= d.size()) return;
  d.inputs = slice_rows(d.inputs, 0, cap);
  d.labels.resize(cap);
}

// Double formatted for summary.csv: fixed 6 decimals, with non-finite values
// spelled in a platform-stable way.
std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt4(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string make_run_id(std::size_t index, const TrainSpec& t) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%03zu_%s_lam%g_beta%g_seed%llu", index, t.method.c_str(),
                t.projection.lambda, t.projection.beta,
                static_cast<unsigned long long>(t.seed));
  return buf;
}

// PGD over the whole set, chunked so big splits stay memory-bounded.
Tensor attacked_inputs(const Network& net, const Dataset& data, const AttackSpec& spec) {
  Tensor out = Tensor::zeros({data.size(), data.input_size()});
  const std::size_t d = data.input_size();
  for (std::size_t from = 0; from < data.size(); from += kEvalChunk) {
    std::size_t count = std::min(kEvalChunk, data.size() - from);
    Tensor x = slice_rows(data.inputs, from, count);
    std::vector<int> y(data.labels.begin() + static_cast<std::ptrdiff_t>(from),
                       data.labels.begin() + static_cast<std::ptrdiff_t>(from + count));
    Tensor adv = pgd(net, x, y, spec);
    std::copy(adv.values().begin(), adv.values().end(), out.values().begin() + from * d);
  }
  return out;
}

Tensor penultimate_features(const Network& net, const Tensor& inputs) {
  Tensor out;
  for (std::size_t from = 0; from < inputs.dim(0); from += kEvalChunk) {
    std::size_t count = std::min(kEvalChunk, inputs.dim(0) - from);
    Tensor h = net.forward(slice_rows(inputs, from, count)).penultimate;
    if (!out.defined()) out = Tensor::zeros({inputs.dim(0), h.dim(1)});
    std::copy(h.values().begin(), h.values().end(), out.values().begin() + from * h.dim(1));
  }
  return out;
}

double lookup_accuracy(const MetricsReport& rep, const std::string& name) {
  for (const auto& [attack, acc] : rep.robust_accuracy) {
    if (attack == name) return acc;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

RunOutcome execute_run(const ExperimentConfig& cfg, const RunPlan& plan, const Dataset& train_set,
                       const Dataset& test_set, const std::string& snapshot) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RunOutcome out;
  out.run_id = plan.run_id;
  out.method = plan.train.method;
  out.lambda = plan.train.projection.lambda;
  out.beta = plan.train.projection.beta;
  out.seed = plan.train.seed;
  out.failed = true;
  out.clean_acc = out.fgsm_acc = out.pgd20_acc = nan;
  out.fisher = out.silhouette = out.spectral_norm = nan;

  std::string dir = cfg.output_dir + "/" + plan.run_id;
  try {
    std::filesystem::create_directories(dir);
    write_text(dir + "/config.snapshot", snapshot);
    Network net = Network::init(plan.network);
    TrainResult tr = train(net, train_set, plan.train);
    tr.model.save(dir + "/model.ckpt");
    write_epochs_csv(tr.records, dir + "/epochs.csv");
    MetricsReport rep = evaluate_model(tr.model, test_set, cfg.eval_attacks, dir);
    out.clean_acc = rep.clean_accuracy;
    out.fgsm_acc = lookup_accuracy(rep, "fgsm");
    out.pgd20_acc = lookup_accuracy(rep, "pgd20");
    out.fisher = rep.fisher_ratio;
    out.silhouette = rep.silhouette;
    out.spectral_norm = rep.last_layer_spectral_norm;
    out.failed = false;
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

struct Aggregate {
  std::size_t n = 0;
  std::array<double, 6> mean{};
  std::array<double, 6> stdev{};
};

}  // namespace

std::pair<Dataset, Dataset> build_datasets(const DatasetConfig& cfg) {
  Dataset train, test;
  if (cfg.kind == "gaussian") {
    Dataset all = gen_gaussian(cfg.gaussian);
    if (!cfg.classes.empty()) all = subset_classes(all, cfg.classes);
    auto parts = split_dataset(all, cfg.test_fraction, mix_seed(cfg.gaussian.seed, kSplitSalt));
    train = std::move(parts.first);
    test = std::move(parts.second);
  } else if (cfg.kind == "synth-digits") {
    Dataset all = gen_synth_digits(cfg.digits);
    if (!cfg.classes.empty()) all = subset_classes(all, cfg.classes);
    auto parts = split_dataset(all, cfg.test_fraction, mix_seed(cfg.digits.seed, kSplitSalt));
    train = std::move(parts.first);
    test = std::move(parts.second);
  } else if (cfg.kind == "idx") {
    train = load_idx(cfg.train_images, cfg.train_labels);
    test = load_idx(cfg.test_images, cfg.test_labels);
    test.split = "test";
    // A subset drawn from one file could miss the top label of the other;
    // align the class counts before remapping.
    std::size_t classes = std::max(train.num_classes, test.num_classes);
    train.num_classes = classes;
    test.num_classes = classes;
    if (!cfg.classes.empty()) {
      train = subset_classes(train, cfg.classes);
      test = subset_classes(test, cfg.classes);
    }
  } else {
    throw ContractError("unknown dataset kind '" + cfg.kind + "'");
  }
  keep_first_rows(train, cfg.train_cap);
  keep_first_rows(test, cfg.test_cap);
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

std::vector<RunPlan> expand_grid(const ExperimentConfig& cfg, const Dataset& train_set) {
  std::vector<double> lams = cfg.ablation.lambdas;
  if (lams.empty()) lams.push_back(cfg.train.projection.lambda);
  std::vector<double> betas = cfg.ablation.betas;
  if (betas.empty()) betas.push_back(cfg.train.projection.beta);
  std::vector<std::uint64_t> seeds = cfg.ablation.seeds;
  if (seeds.empty()) seeds.push_back(cfg.train.seed);

  std::vector<RunPlan> plans;
  std::size_t index = 0;
  for (double lam : lams) {
    for (double beta : betas) {
      for (std::uint64_t seed : seeds) {
        RunPlan p;
        p.index = index;
        p.train = cfg.train;
        p.train.projection.lambda = lam;
        p.train.projection.beta = beta;
        p.train.seed = seed;
        p.network = cfg.network;
        p.network.num_classes = train_set.num_classes;
        p.network.input_shape = (cfg.network.kind == "cnn-small")
                                    ? train_set.sample_shape
                                    : Shape{train_set.input_size()};
        if (!cfg.network_seed_set) p.network.seed = seed;
        p.run_id = make_run_id(index, p.train);
        plans.push_back(std::move(p));
        ++index;
      }
    }
  }
  return plans;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t jobs) {
  ExperimentConfig cfg = config;
  if (cfg.eval_attacks.empty()) cfg.eval_attacks = default_eval_attacks(cfg.train.attack);
  cfg.validate();
  auto [train_set, test_set] = build_datasets(cfg.dataset);
  std::vector<RunPlan> plans = expand_grid(cfg, train_set);
  try {
    plans.front().network.validate();
  } catch (const SpecError& e) {
    throw ValidationError({std::string("network does not fit the dataset: ") + e.what()});
  }

  std::filesystem::create_directories(cfg.output_dir);
  const std::string snapshot = serialize_config(cfg);
  std::vector<RunOutcome> outcomes(plans.size());

  if (jobs <= 1 || plans.size() <= 1) {
    for (const auto& plan : plans) {
      outcomes[plan.index] = execute_run(cfg, plan, train_set, test_set, snapshot);
    }
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= plans.size()) break;
        outcomes[i] = execute_run(cfg, plans[i], train_set, test_set, snapshot);
      }
    };
    std::vector<std::thread> pool;
    std::size_t n = std::min(jobs, plans.size());
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::string summary = summary_header() + "\n";
  for (const auto& out : outcomes) summary += summary_row(out) + "\n";
  std::string path = cfg.output_dir + "/summary.csv";
  write_text(path, summary);
  return {std::move(outcomes), std::move(path)};
}

MetricsReport evaluate_model(const Network& model, const Dataset& test,
                             const std::vector<NamedAttack>& attacks,
                             const std::string& out_dir) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  MetricsReport rep;
  rep.clean_accuracy = clean_accuracy(model, test);
  for (const auto& na : attacks) {
    rep.robust_accuracy.emplace_back(na.name, robust_accuracy(model, test, na.spec));
  }

  // Feature geometry is measured under attack (the named 20-step budget when
  // present, otherwise the last configured attack).
  const AttackSpec* feat_attack = nullptr;
  for (const auto& na : attacks) {
    if (na.name == "pgd20") feat_attack = &na.spec;
  }
  if (!feat_attack && !attacks.empty()) feat_attack = &attacks.back().spec;

  Tensor feats_clean = penultimate_features(model, test.inputs);
  Tensor feats_adv = feat_attack
                         ? penultimate_features(model, attacked_inputs(model, test, *feat_attack))
                         : feats_clean;

  try {
    rep.fisher_ratio = fisher_ratio(feats_adv, test.labels);
  } catch (const UndefinedMetricError&) {
    rep.fisher_ratio = nan;
  }
  try {
    rep.silhouette = silhouette(feats_adv, test.labels);
  } catch (const UndefinedMetricError&) {
    rep.silhouette = nan;
  }
  rep.last_layer_spectral_norm = spectral_norm(model.last_layer_weights());

  NeighborProfile profile;
  if (test.size() >= 2) {
    profile = interclass_neighbor_profile(feats_adv, test.labels,
                                          std::min(kProfileK, test.size() - 1));
    rep.interclass_neighbor_fraction = profile.aggregate;
  } else {
    rep.interclass_neighbor_fraction = nan;
  }

  if (!out_dir.empty()) {
    write_metrics_json(rep, out_dir + "/metrics.json");
    std::string rows = "index,label,interclass_fraction\n";
    char buf[96];
    for (std::size_t i = 0; i < profile.per_sample.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%d,%.17g\n", i, test.labels[i], profile.per_sample[i]);
      rows += buf;
    }
    write_text(out_dir + "/neighbors.csv", rows);
    if (feats_clean.dim(1) >= 2 && test.size() >= 2) {
      try {
        write_pca_csv(pca_project(feats_clean, 2), test.labels, out_dir + "/pca_clean.csv");
      } catch (const UndefinedMetricError&) {
      }
      try {
        write_pca_csv(pca_project(feats_adv, 2), test.labels, out_dir + "/pca_adv.csv");
      } catch (const UndefinedMetricError&) {
      }
    }
  }
  return rep;
}

MetricsReport evaluate_checkpoint(const std::string& ckpt_path, const ExperimentConfig& cfg) {
  Network model = Network::load(ckpt_path);
  Dataset test = build_datasets(cfg.dataset).second;
  if (model.spec().input_size() != test.input_size()) {
    throw ContractError("checkpoint expects input size " +
                        std::to_string(model.spec().input_size()) + ", dataset provides " +
                        std::to_string(test.input_size()));
  }
  return evaluate_model(model, test,
                        cfg.eval_attacks.empty() ? default_eval_attacks(cfg.train.attack)
                                                 : cfg.eval_attacks,
                        "");
}

std::string format_metrics_text(const MetricsReport& r) {
  std::ostringstream out;
  auto row = [&](const std::string& label, double v) {
    out << label;
    for (std::size_t i = label.size(); i < 28; ++i) out << ' ';
    out << fmt4(v) << "\n";
  };
  row("clean accuracy", r.clean_accuracy);
  for (const auto& [name, acc] : r.robust_accuracy) row("robust accuracy (" + name + ")", acc);
  row("fisher ratio", r.fisher_ratio);
  row("silhouette", r.silhouette);
  row("spectral norm (last layer)", r.last_layer_spectral_norm);
  row("interclass neighbor frac", r.interclass_neighbor_fraction);
  return out.str();
}

std::string summary_header() {
  return "run_id,method,lambda,beta,seed,clean_acc,fgsm_acc,pgd20_acc,fisher,silhouette,"
         "spectral_norm";
}

std::string summary_row(const RunOutcome& r) {
  std::string row = r.run_id + "," + r.method + "," + fmt6(r.lambda) + "," + fmt6(r.beta) + "," +
                    std::to_string(r.seed);
  for (double v : {r.clean_acc, r.fgsm_acc, r.pgd20_acc, r.fisher, r.silhouette, r.spectral_norm}) {
    row += "," + fmt6(v);
  }
  return row;
}

CompareReport compare_summaries(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ContractError("compare needs at least one summary file");
  std::map<std::string, std::vector<std::array<double, 6>>> groups;
  for (const auto& path : paths) {
    auto lines = read_lines(path);
    if (lines.empty() || lines[0] != summary_header()) {
      throw SchemaError("summary schema mismatch in " + path);
    }
    for (std::size_t li = 1; li < lines.size(); ++li) {
      if (lines[li].empty()) continue;
      std::vector<std::string> fields;
      std::stringstream ss(lines[li]);
      std::string f;
      while (std::getline(ss, f, ',')) fields.push_back(f);
      if (fields.size() != 11) {
        throw SchemaError("row " + std::to_string(li + 1) + " in " + path + " has " +
                          std::to_string(fields.size()) + " fields, expected 11");
      }
      std::array<double, 6> vals{};
      for (std::size_t j = 0; j < 6; ++j) {
        char* end = nullptr;
        vals[j] = std::strtod(fields[5 + j].c_str(), &end);
        if (end != fields[5 + j].c_str() + fields[5 + j].size()) {
          throw SchemaError("row " + std::to_string(li + 1) + " in " + path +
                            ": cannot parse metric '" + fields[5 + j] + "'");
        }
      }
      groups[fields[1]].push_back(vals);
    }
  }

  std::vector<std::pair<std::string, Aggregate>> table;
  for (const auto& [method, rows] : groups) {
    Aggregate agg;
    agg.n = rows.size();
    for (std::size_t j = 0; j < 6; ++j) {
      double sum = 0;
      for (const auto& r : rows) sum += r[j];
      agg.mean[j] = sum / static_cast<double>(rows.size());
      double sq = 0;
      for (const auto& r : rows) sq += (r[j] - agg.mean[j]) * (r[j] - agg.mean[j]);
      agg.stdev[j] = rows.size() > 1 ? std::sqrt(sq / static_cast<double>(rows.size() - 1)) : 0.0;
    }
    table.emplace_back(method, agg);
  }

  static const char* kCols[] = {"clean_acc", "fgsm_acc",   "pgd20_acc",
                                "fisher",    "silhouette", "spectral_norm"};

  CompareReport rep;
  rep.csv = "method,runs";
  for (const char* c : kCols) rep.csv += std::string(",") + c + "_mean," + c + "_std";
  rep.csv += "\n";
  for (const auto& [method, agg] : table) {
    rep.csv += method + "," + std::to_string(agg.n);
    for (std::size_t j = 0; j < 6; ++j) {
      rep.csv += "," + fmt6(agg.mean[j]) + "," + fmt6(agg.stdev[j]);
    }
    rep.csv += "\n";
  }

  std::vector<std::vector<std::string>> cells;
  cells.push_back({"method", "runs"});
  for (const char* c : kCols) cells.back().push_back(c);
  for (const auto& [method, agg] : table) {
    std::vector<std::string> row = {method, std::to_string(agg.n)};
    for (std::size_t j = 0; j < 6; ++j) {
      row.push_back(fmt4(agg.mean[j]) + "±" + fmt4(agg.stdev[j]));
    }
    cells.push_back(std::move(row));
  }
  // Column widths in display characters, not bytes ("±" is two bytes wide).
  auto display_width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) {
      if ((c & 0xC0) != 0x80) ++w;
    }
    return w;
  };
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      width[j] = std::max(width[j], display_width(row[j]));
    }
  }
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) line += "  ";
      line += row[j];
      if (j + 1 < row.size()) line.append(width[j] - display_width(row[j]), ' ');
    }
    rep.text += line + "\n";
  }
  return rep;
}

}  // namespace nnprat
