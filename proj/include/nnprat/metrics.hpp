#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nnprat/attacks.hpp"
#include "nnprat/data.hpp"
#include "nnprat/models.hpp"
#include "nnprat/tensor.hpp"

namespace nnprat {

struct MetricsReport {
  double clean_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> robust_accuracy;  // attack name -> accuracy
  double fisher_ratio = 0.0;
  double silhouette = 0.0;
  double last_layer_spectral_norm = 0.0;
  double interclass_neighbor_fraction = 0.0;
};

// Argmax class per row, ties broken by lowest index.
std::vector<int> predict(const Network& net, const Tensor& inputs);

// Fraction of samples classified correctly, no attack.
double clean_accuracy(const Network& net, const Dataset& data);

// Fraction classified correctly after running the attack on each sample.
double robust_accuracy(const Network& net, const Dataset& data, const AttackSpec& attack);

// trace(between-class scatter) / (trace(within-class scatter) + 1e-12);
// returns +inf when the within-class scatter is exactly zero.
double fisher_ratio(const Tensor& features, const std::vector<int>& labels);

// Mean silhouette score; singleton-class points contribute 0.
double silhouette(const Tensor& features, const std::vector<int>& labels);

// Largest singular value via power iteration on W^T W (relative tolerance
// 1e-10, at most 10,000 iterations, fixed seeded start vector).
double spectral_norm(const Tensor& w);

struct PcaResult {
  Tensor projected;                             // [n x dims]
  Tensor components;                            // [dims x k], rows are eigenvectors
  std::vector<double> eigenvalues;              // covariance eigenvalues, descending
  std::vector<double> explained_variance_ratio; // eigenvalue / total variance
};

// Centered PCA by power iteration with deflation; each eigenvector's first
// nonzero component is made positive so the output is deterministic.
PcaResult pca(const Tensor& features, std::size_t dims);
Tensor pca_project(const Tensor& features, std::size_t dims);

struct NeighborProfile {
  std::vector<double> per_sample;  // fraction of k nearest neighbors with a different label
  double aggregate = 0.0;          // mean over samples
};

// k nearest Euclidean neighbors per sample (self excluded, ties by lowest
// index); reports the fraction with a different label.
NeighborProfile interclass_neighbor_profile(const Tensor& features,
                                            const std::vector<int>& labels, std::size_t k);

// Flat JSON document; non-finite values are written as the strings
// "inf" / "-inf" / "nan".
void write_metrics_json(const MetricsReport& report, const std::string& path);
MetricsReport read_metrics_json(const std::string& path);

// CSV dump `x,y,label` of a 2-D projection.
void write_pca_csv(const Tensor& projected, const std::vector<int>& labels,
                   const std::string& path);

}  // namespace nnprat
