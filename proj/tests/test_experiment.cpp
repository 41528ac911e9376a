#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nnprat/config.hpp"
#include "nnprat/data.hpp"
#include "nnprat/errors.hpp"
#include "nnprat/experiment.hpp"
#include "nnprat/metrics.hpp"
#include "nnprat/models.hpp"

using namespace nnprat;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "nnprat_experiment_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(bool(out));
  out << text;
}

std::string tiny_text(const std::string& out_dir) {
  return "[dataset]\nkind = gaussian\nsamples_per_class = 40\nseed = 3\ntest_fraction = 0.25\n"
         "[network]\nkind = mlp\nhidden = 8\n"
         "[train]\nepochs = 2\nbatch_size = 16\nlr = 0.05\nmethod = nnprat\neval_cap = 32\n"
         "[attack]\nepsilon = 0.1\nalpha = 0.04\nsteps = 3\n"
         "[projection]\nlambda = 0.001\nbeta = 6\n"
         "[output]\ndir = " +
         out_dir + "\n";
}

std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  return fields;
}

std::vector<std::string> file_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// All-zero images force every feature row to the zero vector, which the
// projection rejects; with two labels every epoch must skip a batch and the
// run aborts.
void write_zero_idx(const fs::path& img, const fs::path& lab) {
  Dataset d;
  d.inputs = Tensor::zeros({40, 4});
  d.labels.resize(40);
  for (std::size_t i = 0; i < 40; ++i) d.labels[i] = static_cast<int>(i % 2);
  d.num_classes = 2;
  d.sample_shape = {2, 2};
  write_idx(d, img.string(), lab.string());
}

}  // namespace

TEST_SUITE("dataset assembly") {
  TEST_CASE("gaussian config yields a deterministic split") {
    DatasetConfig cfg;
    cfg.kind = "gaussian";
    cfg.gaussian.samples_per_class = 40;
    cfg.gaussian.seed = 3;
    cfg.test_fraction = 0.25;
    auto [train, test] = build_datasets(cfg);
    CHECK(train.size() == 60);
    CHECK(test.size() == 20);
    CHECK(train.split == "train");
    CHECK(test.split == "test");
    CHECK(train.num_classes == 2);
    auto [train2, test2] = build_datasets(cfg);
    CHECK(train.inputs.values() == train2.inputs.values());
    CHECK(test.labels == test2.labels);
  }

  TEST_CASE("digit subsets are carved out before the split") {
    DatasetConfig cfg;
    cfg.kind = "synth-digits";
    cfg.digits.samples_per_class = 20;
    cfg.classes = {3, 5, 8};
    cfg.test_fraction = 0.25;
    auto [train, test] = build_datasets(cfg);
    CHECK(train.size() == 45);
    CHECK(test.size() == 15);
    CHECK(train.num_classes == 3);
    for (int y : train.labels) CHECK((y >= 0 && y <= 2));
  }

  TEST_CASE("caps keep the leading rows") {
    DatasetConfig cfg;
    cfg.kind = "gaussian";
    cfg.gaussian.samples_per_class = 40;
    cfg.test_fraction = 0.25;
    auto full = build_datasets(cfg);
    cfg.train_cap = 10;
    cfg.test_cap = 5;
    auto capped = build_datasets(cfg);
    CHECK(capped.first.size() == 10);
    CHECK(capped.second.size() == 5);
    for (std::size_t i = 0; i < 10 * 2; ++i) {
      CHECK(capped.first.inputs.at(i) == full.first.inputs.at(i));
    }
    CHECK(std::equal(capped.second.labels.begin(), capped.second.labels.end(),
                     full.second.labels.begin()));
  }

  TEST_CASE("idx files load as train and test splits") {
    auto dir = fresh_dir("idx_load");
    SynthDigitsSpec spec;
    spec.samples_per_class = 4;
    Dataset source = gen_synth_digits(spec);
    write_idx(source, (dir / "ti.idx").string(), (dir / "tl.idx").string());
    DatasetConfig cfg;
    cfg.kind = "idx";
    cfg.train_images = (dir / "ti.idx").string();
    cfg.train_labels = (dir / "tl.idx").string();
    cfg.test_images = (dir / "ti.idx").string();
    cfg.test_labels = (dir / "tl.idx").string();
    auto [train, test] = build_datasets(cfg);
    CHECK(train.size() == 40);
    CHECK(test.size() == 40);
    CHECK(train.split == "train");
    CHECK(test.split == "test");
    CHECK(train.num_classes == 10);
    CHECK(train.labels == source.labels);
  }

  TEST_CASE("class counts align across mismatched idx label files") {
    auto dir = fresh_dir("idx_align");
    Dataset lo;
    lo.inputs = Tensor::full({4, 4}, 0.5);
    lo.labels = {0, 1, 0, 1};
    lo.num_classes = 2;
    lo.sample_shape = {2, 2};
    Dataset hi = lo;
    hi.labels = {0, 1, 2, 2};
    hi.num_classes = 3;
    write_idx(lo, (dir / "lo_i").string(), (dir / "lo_l").string());
    write_idx(hi, (dir / "hi_i").string(), (dir / "hi_l").string());
    DatasetConfig cfg;
    cfg.kind = "idx";
    cfg.train_images = (dir / "lo_i").string();
    cfg.train_labels = (dir / "lo_l").string();
    cfg.test_images = (dir / "hi_i").string();
    cfg.test_labels = (dir / "hi_l").string();
    auto [train, test] = build_datasets(cfg);
    CHECK(train.num_classes == 3);
    CHECK(test.num_classes == 3);
  }
}

TEST_SUITE("grid expansion") {
  TEST_CASE("axes expand lambda-major, then beta, then seed") {
    ExperimentConfig cfg = parse_config(tiny_text("unused") +
                                        "[ablation]\nlambda = 0.1 0.001\nbeta = 1 6\n"
                                        "seeds = 0 1\ncap = 8\n");
    auto [train, test] = build_datasets(cfg.dataset);
    auto plans = expand_grid(cfg, train);
    REQUIRE(plans.size() == 8);
    CHECK(plans[0].run_id == "000_nnprat_lam0.1_beta1_seed0");
    CHECK(plans[1].run_id == "001_nnprat_lam0.1_beta1_seed1");
    CHECK(plans[2].train.projection.beta == 6.0);
    CHECK(plans[4].train.projection.lambda == 0.001);
    CHECK(plans[7].run_id == "007_nnprat_lam0.001_beta6_seed1");
    for (const auto& p : plans) CHECK(p.network.input_shape == Shape{2});
  }

  TEST_CASE("the run seed drives the network unless the config pins one") {
    ExperimentConfig cfg = parse_config(tiny_text("unused") + "[ablation]\nseeds = 5 9\n");
    auto train = build_datasets(cfg.dataset).first;
    auto plans = expand_grid(cfg, train);
    REQUIRE(plans.size() == 2);
    CHECK(plans[0].network.seed == 5);
    CHECK(plans[1].network.seed == 9);
    CHECK(plans[0].train.seed == 5);

    ExperimentConfig pinned = cfg;
    pinned.network.seed = 77;
    pinned.network_seed_set = true;
    auto fixed = expand_grid(pinned, train);
    CHECK(fixed[0].network.seed == 77);
    CHECK(fixed[1].network.seed == 77);
    CHECK(fixed[1].train.seed == 9);
  }

  TEST_CASE("a config without sweep axes is a single grid point") {
    ExperimentConfig cfg = parse_config(tiny_text("unused"));
    auto train = build_datasets(cfg.dataset).first;
    auto plans = expand_grid(cfg, train);
    REQUIRE(plans.size() == 1);
    CHECK(plans[0].train.projection.lambda == 0.001);
    CHECK(plans[0].train.projection.beta == 6.0);
    CHECK(plans[0].network.num_classes == 2);
  }

  TEST_CASE("cnn plans keep the image shape") {
    std::string text =
        "[dataset]\nkind = synth-digits\nsamples_per_class = 6\nclasses = 0 1\n"
        "test_fraction = 0.25\n[network]\nkind = cnn-small\n[train]\nepochs = 1\n"
        "batch_size = 2\n";
    ExperimentConfig cfg = parse_config(text);
    auto train = build_datasets(cfg.dataset).first;
    auto plans = expand_grid(cfg, train);
    CHECK(plans[0].network.input_shape == Shape{1, 28, 28});
    CHECK(plans[0].network.num_classes == 2);
  }
}

TEST_SUITE("experiment execution") {
  TEST_CASE("a two-seed grid writes every artifact and a grid-ordered summary") {
    auto out = fresh_dir("grid_run");
    ExperimentConfig cfg = parse_config(tiny_text(out.string()) + "[ablation]\nseeds = 0 1\n");
    ExperimentResult result = run_experiment(cfg);
    REQUIRE(result.runs.size() == 2);
    CHECK_FALSE(result.runs[0].failed);
    CHECK_FALSE(result.runs[1].failed);
    CHECK(result.runs[0].run_id.rfind("000_", 0) == 0);
    CHECK(result.runs[1].run_id.rfind("001_", 0) == 0);

    auto lines = file_lines(result.summary_path);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == summary_header());
    CHECK(lines[1].rfind("000_nnprat_lam0.001_beta6_seed0,nnprat,0.001000,6.000000,0,", 0) == 0);

    for (const auto& run : result.runs) {
      auto dir = out / run.run_id;
      for (const char* name : {"config.snapshot", "model.ckpt", "epochs.csv", "metrics.json",
                               "pca_clean.csv", "pca_adv.csv", "neighbors.csv"}) {
        CAPTURE(name);
        CHECK(fs::exists(dir / name));
      }
      MetricsReport rep = read_metrics_json((dir / "metrics.json").string());
      CHECK(rep.clean_accuracy >= 0.0);
      CHECK(rep.clean_accuracy <= 1.0);
      CHECK(std::isfinite(rep.last_layer_spectral_norm));
      auto rows = file_lines(dir / "neighbors.csv");
      CHECK(rows.size() == 21);  // header + one row per test sample
      CHECK(rows[0] == "index,label,interclass_fraction");
    }
  }

  TEST_CASE("the run-dir snapshot re-parses to the exact config") {
    auto out = fresh_dir("snapshot");
    ExperimentConfig cfg = parse_config(tiny_text(out.string()));
    ExperimentResult result = run_experiment(cfg);
    auto snap_path = out / result.runs[0].run_id / "config.snapshot";
    ExperimentConfig back = load_config(snap_path.string());
    CHECK(serialize_config(back) == serialize_config(cfg));
    back.validate();
  }

  TEST_CASE("parallel workers produce the byte-identical summary") {
    auto out1 = fresh_dir("jobs_seq");
    auto out2 = fresh_dir("jobs_par");
    std::string grid = "[ablation]\nlambda = 0.01 0.001\nseeds = 0 1\n";
    ExperimentConfig seq = parse_config(tiny_text(out1.string()) + grid);
    ExperimentConfig par = parse_config(tiny_text(out2.string()) + grid);
    run_experiment(seq, 1);
    run_experiment(par, 4);
    CHECK(slurp(out1 / "summary.csv") == slurp(out2 / "summary.csv"));
  }

  TEST_CASE("a run that keeps collapsing is marked failed and the grid continues") {
    auto out = fresh_dir("failed_runs");
    auto data = fresh_dir("failed_runs_data");
    write_zero_idx(data / "i.idx", data / "l.idx");
    std::string text =
        "[dataset]\nkind = idx\ntrain_images = " + (data / "i.idx").string() +
        "\ntrain_labels = " + (data / "l.idx").string() +
        "\ntest_images = " + (data / "i.idx").string() +
        "\ntest_labels = " + (data / "l.idx").string() +
        "\n[network]\nkind = mlp\nhidden = 8\n"
        "[train]\nepochs = 1\nbatch_size = 16\nlr = 0.05\nmethod = nnprat\n"
        "[attack]\nepsilon = 0.1\nalpha = 0.04\nsteps = 2\n"
        "[ablation]\nseeds = 0 1\n"
        "[output]\ndir = " + out.string() + "\n";
    ExperimentConfig cfg = parse_config(text);
    ExperimentResult result = run_experiment(cfg);
    REQUIRE(result.runs.size() == 2);
    CHECK(result.runs[0].failed);
    CHECK(result.runs[1].failed);
    CHECK(result.runs[0].error.find("skipped") != std::string::npos);
    CHECK(std::isnan(result.runs[0].clean_acc));

    auto lines = file_lines(result.summary_path);
    REQUIRE(lines.size() == 3);
    auto fields = csv_fields(lines[1]);
    REQUIRE(fields.size() == 11);
    for (std::size_t j = 5; j < 11; ++j) CHECK(fields[j] == "nan");
    CHECK(fs::exists(out / result.runs[0].run_id / "config.snapshot"));
  }

  TEST_CASE("summary accuracy columns follow the attack names") {
    auto out = fresh_dir("named_attacks");
    ExperimentConfig cfg = parse_config(tiny_text(out.string()) +
                                        "[eval.custom]\nkind = fgsm\nepsilon = 0.1\n");
    ExperimentResult result = run_experiment(cfg);
    REQUIRE(result.runs.size() == 1);
    CHECK_FALSE(result.runs[0].failed);
    CHECK(std::isnan(result.runs[0].fgsm_acc));
    CHECK(std::isnan(result.runs[0].pgd20_acc));
    MetricsReport rep =
        read_metrics_json((out / result.runs[0].run_id / "metrics.json").string());
    REQUIRE(rep.robust_accuracy.size() == 1);
    CHECK(rep.robust_accuracy[0].first == "custom");
    CHECK(rep.robust_accuracy[0].second >= 0.0);
  }

  TEST_CASE("a checkpoint re-evaluates to the summary's numbers") {
    auto out = fresh_dir("ckpt_eval");
    ExperimentConfig cfg = parse_config(tiny_text(out.string()));
    ExperimentResult result = run_experiment(cfg);
    REQUIRE_FALSE(result.runs[0].failed);
    auto ckpt = out / result.runs[0].run_id / "model.ckpt";
    MetricsReport rep = evaluate_checkpoint(ckpt.string(), cfg);
    CHECK(rep.clean_accuracy == doctest::Approx(result.runs[0].clean_acc).epsilon(1e-9));
    double pgd20 = -1;
    for (const auto& [name, acc] : rep.robust_accuracy) {
      if (name == "pgd20") pgd20 = acc;
    }
    CHECK(pgd20 == doctest::Approx(result.runs[0].pgd20_acc).epsilon(1e-9));
    std::string text = format_metrics_text(rep);
    CHECK(text.find("clean accuracy") != std::string::npos);
    CHECK(text.find("robust accuracy (pgd20)") != std::string::npos);
  }

  TEST_CASE("a checkpoint refuses a dataset of the wrong width") {
    auto out = fresh_dir("ckpt_mismatch");
    ExperimentConfig cfg = parse_config(tiny_text(out.string()));
    ExperimentResult result = run_experiment(cfg);
    auto ckpt = out / result.runs[0].run_id / "model.ckpt";
    ExperimentConfig digits = parse_config(
        "[dataset]\nkind = synth-digits\nsamples_per_class = 4\ntest_fraction = 0.25\n"
        "[network]\nkind = mlp\n");
    CHECK_THROWS_AS(evaluate_checkpoint(ckpt.string(), digits), ContractError);
  }

  TEST_CASE("evaluation without attacks measures clean features only") {
    DatasetConfig dc;
    dc.kind = "gaussian";
    dc.gaussian.samples_per_class = 20;
    dc.test_fraction = 0.25;
    Dataset test = build_datasets(dc).second;
    NetworkSpec spec;
    spec.kind = "mlp";
    spec.input_shape = {2};
    spec.hidden = {8};
    spec.num_classes = 2;
    spec.seed = 1;
    Network net = Network::init(spec);
    MetricsReport rep = evaluate_model(net, test, {}, "");
    CHECK(rep.robust_accuracy.empty());
    CHECK(std::isfinite(rep.clean_accuracy));
    CHECK(std::isfinite(rep.last_layer_spectral_norm));
  }
}

TEST_SUITE("comparison reports") {
  TEST_CASE("per-method mean and two-point standard deviation") {
    auto dir = fresh_dir("compare_two");
    std::string header = summary_header();
    spit(dir / "s.csv",
         header +
             "\n"
             "000_vanilla-at_lam0_beta0_seed0,vanilla-at,0.000000,0.000000,0,0.900000,0.800000,"
             "0.700000,1.000000,0.100000,3.000000\n"
             "001_vanilla-at_lam0_beta0_seed1,vanilla-at,0.000000,0.000000,1,0.940000,0.820000,"
             "0.740000,1.400000,0.140000,3.400000\n"
             "002_nnprat_lam0.001_beta6_seed0,nnprat,0.001000,6.000000,0,0.950000,0.850000,"
             "0.780000,2.000000,0.200000,2.500000\n");
    CompareReport rep = compare_summaries({(dir / "s.csv").string()});

    std::istringstream csv(rep.csv);
    std::string line;
    std::getline(csv, line);
    CHECK(line ==
          "method,runs,clean_acc_mean,clean_acc_std,fgsm_acc_mean,fgsm_acc_std,pgd20_acc_mean,"
          "pgd20_acc_std,fisher_mean,fisher_std,silhouette_mean,silhouette_std,"
          "spectral_norm_mean,spectral_norm_std");
    std::getline(csv, line);
    auto nn = csv_fields(line);
    CHECK(nn[0] == "nnprat");  // alphabetical before vanilla-at
    CHECK(nn[1] == "1");
    CHECK(nn[2] == "0.950000");
    CHECK(nn[3] == "0.000000");
    std::getline(csv, line);
    auto va = csv_fields(line);
    CHECK(va[0] == "vanilla-at");
    CHECK(va[1] == "2");
    CHECK(va[2] == "0.920000");
    double two_point = std::abs(0.94 - 0.90) / std::sqrt(2.0);
    CHECK(std::stod(va[3]) == doctest::Approx(two_point).epsilon(1e-6));
    CHECK(va[9] == "0.282843");  // fisher std: |1.4-1.0|/sqrt(2)

    CHECK(rep.text.find("nnprat") != std::string::npos);
    CHECK(rep.text.find("0.9200±0.0283") != std::string::npos);
  }

  TEST_CASE("one row aggregates to itself") {
    auto dir = fresh_dir("compare_one");
    spit(dir / "s.csv", summary_header() +
                            "\n"
                            "000_clean_lam0.001_beta6_seed0,clean,0.001000,6.000000,0,0.990000,"
                            "0.500000,0.300000,5.000000,0.400000,4.200000\n");
    CompareReport rep = compare_summaries({(dir / "s.csv").string()});
    std::istringstream csv(rep.csv);
    std::string line;
    std::getline(csv, line);
    std::getline(csv, line);
    auto f = csv_fields(line);
    CHECK(f[0] == "clean");
    CHECK(f[1] == "1");
    CHECK(f[2] == "0.990000");
    CHECK(f[3] == "0.000000");
    CHECK(f[12] == "4.200000");
    CHECK(f[13] == "0.000000");
  }

  TEST_CASE("groups merge across files") {
    auto dir = fresh_dir("compare_merge");
    std::string row0 =
        "000_nnprat_lam0.001_beta6_seed0,nnprat,0.001000,6.000000,0,0.900000,0.800000,0.700000,"
        "1.000000,0.100000,3.000000\n";
    std::string row1 =
        "000_nnprat_lam0.001_beta6_seed1,nnprat,0.001000,6.000000,1,0.920000,0.820000,0.720000,"
        "1.200000,0.120000,3.200000\n";
    spit(dir / "a.csv", summary_header() + "\n" + row0);
    spit(dir / "b.csv", summary_header() + "\n" + row1);
    CompareReport rep = compare_summaries({(dir / "a.csv").string(), (dir / "b.csv").string()});
    std::istringstream csv(rep.csv);
    std::string line;
    std::getline(csv, line);
    std::getline(csv, line);
    auto f = csv_fields(line);
    CHECK(f[1] == "2");
    CHECK(f[2] == "0.910000");
  }

  TEST_CASE("failed-run nans poison only their method's aggregate") {
    auto dir = fresh_dir("compare_nan");
    spit(dir / "s.csv", summary_header() +
                            "\n"
                            "000_nnprat_lam0.001_beta6_seed0,nnprat,0.001000,6.000000,0,nan,nan,"
                            "nan,nan,nan,nan\n"
                            "001_clean_lam0.001_beta6_seed0,clean,0.001000,6.000000,0,0.990000,"
                            "0.500000,0.300000,5.000000,0.400000,4.200000\n");
    CompareReport rep = compare_summaries({(dir / "s.csv").string()});
    std::istringstream csv(rep.csv);
    std::string line;
    std::getline(csv, line);
    std::getline(csv, line);
    auto clean_row = csv_fields(line);
    CHECK(clean_row[0] == "clean");
    CHECK(clean_row[2] == "0.990000");
    std::getline(csv, line);
    auto nn = csv_fields(line);
    CHECK(nn[0] == "nnprat");
    CHECK(nn[2] == "nan");
  }

  TEST_CASE("schema drift is rejected") {
    auto dir = fresh_dir("compare_schema");
    spit(dir / "bad_header.csv", "run_id,method,lambda\nx,nnprat,0.1\n");
    CHECK_THROWS_AS(compare_summaries({(dir / "bad_header.csv").string()}), SchemaError);
    spit(dir / "bad_row.csv", summary_header() + "\nonly,three,fields\n");
    CHECK_THROWS_AS(compare_summaries({(dir / "bad_row.csv").string()}), SchemaError);
    spit(dir / "bad_cell.csv",
         summary_header() +
             "\n000_nnprat_lam0_beta0_seed0,nnprat,0.001000,6.000000,0,zero,0.500000,0.300000,"
             "5.000000,0.400000,4.200000\n");
    CHECK_THROWS_AS(compare_summaries({(dir / "bad_cell.csv").string()}), SchemaError);
    CHECK_THROWS_AS(compare_summaries({(dir / "missing.csv").string()}), FormatError);
    CHECK_THROWS_AS(compare_summaries({}), ContractError);
  }
}
