#include "nnprat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "json.hpp"
#include "nnprat/errors.hpp"
#include "nnprat/rng.hpp"

namespace nnprat {

namespace {

constexpr std::size_t kEvalChunk = 512;

int argmax_row(const double* row, std::size_t c) {
  int best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (row[j] > row[best]) best = static_cast<int>(j);
  }
  return best;
}

Tensor slice_rows(const Tensor& m, std::size_t from, std::size_t count) {
  Tensor out = Tensor::zeros({count, m.dim(1)});
  std::copy(m.values().data() + from * m.dim(1), m.values().data() + (from + count) * m.dim(1),
            out.values().data());
  return out;
}

}  // namespace

std::vector<int> predict(const Network& net, const Tensor& inputs) {
  if (!inputs.defined() || inputs.rank() != 2) {
    throw ContractError("predict expects [n x d] inputs, got " +
                        (inputs.defined() ? shape_str(inputs.shape()) : "undefined"));
  }
  std::vector<int> out;
  out.reserve(inputs.dim(0));
  for (std::size_t from = 0; from < inputs.dim(0); from += kEvalChunk) {
    std::size_t count = std::min(kEvalChunk, inputs.dim(0) - from);
    Tensor logits = net.forward(slice_rows(inputs, from, count)).logits;
    const auto* v = logits.values().data();
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(argmax_row(v + i * c, c));
    }
  }
  return out;
}

double clean_accuracy(const Network& net, const Dataset& data) {
  data.validate();
  std::vector<int> pred = predict(net, data.inputs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double robust_accuracy(const Network& net, const Dataset& data, const AttackSpec& attack) {
  data.validate();
  attack.validate();
  std::size_t hits = 0;
  for (std::size_t from = 0; from < data.size(); from += kEvalChunk) {
    std::size_t count = std::min(kEvalChunk, data.size() - from);
    Tensor x = slice_rows(data.inputs, from, count);
    std::vector<int> y(data.labels.begin() + static_cast<std::ptrdiff_t>(from),
                       data.labels.begin() + static_cast<std::ptrdiff_t>(from + count));
    Tensor x_adv = pgd(net, x, y, attack);
    Tensor logits = net.forward(x_adv).logits;
    const auto* v = logits.values().data();
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      if (argmax_row(v + i * c, c) == y[i]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

void check_features(const Tensor& features, const std::vector<int>& labels,
                    const char* who) {
  if (!features.defined() || features.rank() != 2) {
    throw ContractError(std::string(who) + " expects [n x k] features");
  }
  if (features.dim(0) != labels.size()) {
    throw ContractError(std::string(who) + ": " + std::to_string(features.dim(0)) +
                        " rows vs " + std::to_string(labels.size()) + " labels");
  }
  if (features.dim(0) < 2) {
    throw ContractError(std::string(who) + " needs at least 2 samples");
  }
}

}  // namespace

double fisher_ratio(const Tensor& features, const std::vector<int>& labels) {
  check_features(features, labels, "fisher_ratio");
  const std::size_t n = features.dim(0);
  const std::size_t k = features.dim(1);
  const auto* x = features.values().data();

  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) {
    throw UndefinedMetricError("fisher_ratio needs >= 2 classes, got " +
                               std::to_string(counts.size()));
  }

  std::vector<double> global_mean(k, 0.0);
  std::map<int, std::vector<double>> class_mean;
  for (auto& [c, cnt] : counts) class_mean[c].assign(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& cm = class_mean[labels[i]];
    for (std::size_t j = 0; j < k; ++j) {
      cm[j] += x[i * k + j];
      global_mean[j] += x[i * k + j];
    }
  }
  for (std::size_t j = 0; j < k; ++j) global_mean[j] /= static_cast<double>(n);
  for (auto& [c, cm] : class_mean) {
    for (std::size_t j = 0; j < k; ++j) cm[j] /= static_cast<double>(counts[c]);
  }

  double between = 0.0;
  for (auto& [c, cm] : class_mean) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double d = cm[j] - global_mean[j];
      d2 += d * d;
    }
    between += static_cast<double>(counts[c]) * d2;
  }
  double within = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cm = class_mean[labels[i]];
    for (std::size_t j = 0; j < k; ++j) {
      double d = x[i * k + j] - cm[j];
      within += d * d;
    }
  }
  if (within == 0.0) return std::numeric_limits<double>::infinity();
  return between / (within + 1e-12);
}

double silhouette(const Tensor& features, const std::vector<int>& labels) {
  check_features(features, labels, "silhouette");
  const std::size_t n = features.dim(0);
  const std::size_t k = features.dim(1);
  const auto* x = features.values().data();

  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) {
    throw UndefinedMetricError("silhouette needs >= 2 classes, got " +
                               std::to_string(counts.size()));
  }

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t f = 0; f < k; ++f) {
        double d = x[i * k + f] - x[j * k + f];
        d2 += d * d;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(d2);
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[labels[i]] == 1) continue;  // singleton contributes 0
    std::map<int, double> sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum[labels[j]] += dist[i * n + j];
    }
    double a = sum[labels[i]] / static_cast<double>(counts[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (auto& [c, s] : sum) {
      if (c != labels[i]) b = std::min(b, s / static_cast<double>(counts[c]));
    }
    double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

namespace {

// One symmetric power iteration: v <- M v (normalized); returns the
// eigenvalue estimate v^T M v, iterating to `tol` relative change. When
// vec_tol is positive the vector itself must also settle to that bound, which
// costs extra sweeps but is what eigenvector consumers need: the eigenvalue
// stabilizes quadratically faster than the direction.
double power_iteration(const std::vector<double>& m, std::size_t dim, std::vector<double>& v,
                       double tol, double vec_tol, std::size_t max_iter, const char* who) {
  Rng rng(0x706f776572ULL);  // fixed start vector, independent of callers
  auto randomize = [&] {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      v[i] = rng.normal();
      norm2 += v[i] * v[i];
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < dim; ++i) v[i] *= inv;
  };
  v.assign(dim, 0.0);
  randomize();

  std::vector<double> mv(dim);
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t it = 0; it < max_iter; ++it) {
    double lambda = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += m[i * dim + j] * v[j];
      mv[i] = s;
      lambda += v[i] * s;
    }
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) norm2 += mv[i] * mv[i];
    if (norm2 == 0.0) {
      // v landed exactly in the null space: either the matrix is (numerically)
      // zero and 0 is the top eigenvalue, or the start vector was unlucky.
      if (lambda == 0.0 && it == 0) {
        randomize();
        continue;
      }
      return 0.0;
    }
    double inv = 1.0 / std::sqrt(norm2);
    if (lambda < 0.0) inv = -inv;  // keep successive iterates sign-aligned
    double vec_delta = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double next = mv[i] * inv;
      vec_delta = std::max(vec_delta, std::abs(next - v[i]));
      v[i] = next;
    }
    if (it > 0 && std::abs(lambda - prev) <= tol * std::max(std::abs(lambda), 1e-300) &&
        (vec_tol <= 0.0 || vec_delta <= vec_tol)) {
      return lambda;
    }
    prev = lambda;
  }
  throw NumericError(std::string(who) + ": power iteration did not converge within " +
                     std::to_string(max_iter) + " iterations");
}

}  // namespace

double spectral_norm(const Tensor& w) {
  if (!w.defined() || w.rank() != 2) {
    throw ContractError("spectral_norm expects a rank-2 matrix");
  }
  const std::size_t r = w.dim(0);
  const std::size_t c = w.dim(1);
  const auto* a = w.values().data();
  bool nonzero = false;
  for (std::size_t i = 0; i < r * c && !nonzero; ++i) nonzero = a[i] != 0.0;
  if (!nonzero) throw ContractError("spectral_norm needs a nonzero matrix");

  // Gram matrix W^T W, [c x c].
  std::vector<double> g(c * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < c; ++p) {
      double aip = a[i * c + p];
      if (aip == 0.0) continue;
      for (std::size_t q = 0; q < c; ++q) {
        g[p * c + q] += aip * a[i * c + q];
      }
    }
  }

  std::vector<double> v;
  double lambda = power_iteration(g, c, v, 1e-10, 0.0, 10000, "spectral_norm");
  return std::sqrt(std::max(0.0, lambda));
}

PcaResult pca(const Tensor& features, std::size_t dims) {
  if (!features.defined() || features.rank() != 2) {
    throw ContractError("pca expects [n x k] features");
  }
  const std::size_t n = features.dim(0);
  const std::size_t k = features.dim(1);
  if (n < 2) throw ContractError("pca needs at least 2 samples");
  if (dims == 0 || dims > k) {
    throw ContractError("pca dims must be in [1, " + std::to_string(k) + "], got " +
                        std::to_string(dims));
  }

  const auto* x = features.values().data();
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) mean[j] += x[i * k + j];
  }
  for (std::size_t j = 0; j < k; ++j) mean[j] /= static_cast<double>(n);

  std::vector<double> centered(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) centered[i * k + j] = x[i * k + j] - mean[j];
  }

  // Covariance with the n-1 divisor.
  std::vector<double> cov(k * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double cip = centered[i * k + p];
      if (cip == 0.0) continue;
      for (std::size_t q = p; q < k; ++q) {
        cov[p * k + q] += cip * centered[i * k + q];
      }
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = p; q < k; ++q) {
      double v = cov[p * k + q] / static_cast<double>(n - 1);
      cov[p * k + q] = v;
      cov[q * k + p] = v;
    }
  }
  double total_variance = 0.0;
  for (std::size_t p = 0; p < k; ++p) total_variance += cov[p * k + p];
  if (total_variance <= 0.0) {
    throw UndefinedMetricError("pca on zero-variance data");
  }

  PcaResult out;
  out.components = Tensor::zeros({dims, k});
  out.eigenvalues.resize(dims);
  out.explained_variance_ratio.resize(dims);
  auto* comp = out.components.values().data();

  std::vector<double> work = cov;
  std::vector<double> v;
  for (std::size_t d = 0; d < dims; ++d) {
    double lambda = power_iteration(work, k, v, 1e-12, 1e-13, 200000, "pca");
    lambda = std::max(0.0, lambda);

    // Orthogonalize against the components already extracted; deflation
    // leaves them as (numerically) zero directions but tiny residues drift.
    for (std::size_t prev = 0; prev < d; ++prev) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += v[j] * comp[prev * k + j];
      for (std::size_t j = 0; j < k; ++j) v[j] -= dot * comp[prev * k + j];
    }
    double norm2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) norm2 += v[j] * v[j];
    if (norm2 > 0.0) {
      double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t j = 0; j < k; ++j) v[j] *= inv;
    }

    // Deterministic orientation: first component above noise is positive.
    double flip = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (std::abs(v[j]) > 1e-12) {
        flip = v[j] > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    if (flip < 0.0) {
      for (std::size_t j = 0; j < k; ++j) v[j] = -v[j];
    }

    for (std::size_t j = 0; j < k; ++j) comp[d * k + j] = v[j];
    out.eigenvalues[d] = lambda;
    out.explained_variance_ratio[d] = lambda / total_variance;

    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t q = 0; q < k; ++q) {
        work[p * k + q] -= lambda * v[p] * v[q];
      }
    }
  }

  out.projected = Tensor::zeros({n, dims});
  auto* proj = out.projected.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += centered[i * k + j] * comp[d * k + j];
      proj[i * dims + d] = s;
    }
  }
  return out;
}

Tensor pca_project(const Tensor& features, std::size_t dims) {
  return pca(features, dims).projected;
}

NeighborProfile interclass_neighbor_profile(const Tensor& features,
                                            const std::vector<int>& labels, std::size_t k) {
  check_features(features, labels, "interclass_neighbor_profile");
  const std::size_t n = features.dim(0);
  const std::size_t dim = features.dim(1);
  if (k == 0) throw ContractError("interclass_neighbor_profile needs k >= 1");
  if (k >= n) {
    throw ContractError("interclass_neighbor_profile needs k < n (k=" + std::to_string(k) +
                        ", n=" + std::to_string(n) + ")");
  }
  const auto* x = features.values().data();

  NeighborProfile out;
  out.per_sample.resize(n);
  std::vector<std::pair<double, std::size_t>> order(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::size_t f = 0; f < dim; ++f) {
        double d = x[i * dim + f] - x[j * dim + f];
        d2 += d * d;
      }
      order[m++] = {d2, j};
    }
    std::sort(order.begin(), order.end());  // distance, then lowest index
    std::size_t differ = 0;
    for (std::size_t t = 0; t < k; ++t) {
      if (labels[order[t].second] != labels[i]) ++differ;
    }
    out.per_sample[i] = static_cast<double>(differ) / static_cast<double>(k);
    out.aggregate += out.per_sample[i];
  }
  out.aggregate /= static_cast<double>(n);
  return out;
}

namespace {

nlohmann::json num_or_string(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double parse_num(const nlohmann::json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto& s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw FormatError("metrics key '" + key + "' holds neither a number nor inf/nan");
}

}  // namespace

void write_metrics_json(const MetricsReport& report, const std::string& path) {
  nlohmann::json j;
  j["clean_accuracy"] = num_or_string(report.clean_accuracy);
  for (const auto& [name, acc] : report.robust_accuracy) {
    j["robust_accuracy." + name] = num_or_string(acc);
  }
  j["fisher_ratio"] = num_or_string(report.fisher_ratio);
  j["silhouette"] = num_or_string(report.silhouette);
  j["last_layer_spectral_norm"] = num_or_string(report.last_layer_spectral_norm);
  j["interclass_neighbor_fraction"] = num_or_string(report.interclass_neighbor_fraction);

  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error("write to '" + path + "' failed");
}

MetricsReport read_metrics_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw FormatError("'" + path + "' must hold a JSON object");

  MetricsReport report;
  for (const auto& [key, value] : j.items()) {
    const std::string prefix = "robust_accuracy.";
    if (key == "clean_accuracy") {
      report.clean_accuracy = parse_num(value, key);
    } else if (key == "fisher_ratio") {
      report.fisher_ratio = parse_num(value, key);
    } else if (key == "silhouette") {
      report.silhouette = parse_num(value, key);
    } else if (key == "last_layer_spectral_norm") {
      report.last_layer_spectral_norm = parse_num(value, key);
    } else if (key == "interclass_neighbor_fraction") {
      report.interclass_neighbor_fraction = parse_num(value, key);
    } else if (key.rfind(prefix, 0) == 0) {
      report.robust_accuracy.emplace_back(key.substr(prefix.size()), parse_num(value, key));
    } else {
      throw FormatError("unknown metrics key '" + key + "' in '" + path + "'");
    }
  }
  return report;
}

void write_pca_csv(const Tensor& projected, const std::vector<int>& labels,
                   const std::string& path) {
  if (!projected.defined() || projected.rank() != 2 || projected.dim(1) != 2) {
    throw ContractError("pca csv expects an [n x 2] projection");
  }
  if (projected.dim(0) != labels.size()) {
    throw ContractError("pca csv: row/label count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "x,y,label\n";
  const auto* v = projected.values().data();
  char num[40];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::snprintf(num, sizeof(num), "%.17g", v[i * 2]);
    out << num << ",";
    std::snprintf(num, sizeof(num), "%.17g", v[i * 2 + 1]);
    out << num << "," << labels[i] << "\n";
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace nnprat
