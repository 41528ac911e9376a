#pragma once

// Reference implementations used to cross-check the library. Everything here
// is deliberately naive and written against plain buffers so a bug in the
// library cannot hide in its own oracle.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace oracle {

// C[m x n] = A[m x k] * B[k x n], textbook triple loop.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t m, std::size_t k, std::size_t n);

// Mean cross-entropy of logits[n x c] against labels, accumulated in long
// double without the max-shift trick.
double naive_cross_entropy(const std::vector<double>& logits, const std::vector<int>& labels,
                           std::size_t n, std::size_t c);

// Central finite differences of f at x with step h.
std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f,
                            std::vector<double> x, double h = 1e-5);

// Largest relative mismatch between an analytic and a numeric gradient.
// Entries where both magnitudes stay below `floor` are ignored.
double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                   double floor = 1e-7);

// Eigenvalues of a symmetric matrix via the cyclic Jacobi method, sorted
// descending. Also fills eigenvectors (column i of `vecs`, row-major) when
// requested.
std::vector<double> jacobi_eigen(std::vector<double> a, std::size_t n,
                                 std::vector<double>* vecs = nullptr);

// Largest singular value of w[r x c] from the eigenvalues of w^T w.
double naive_spectral_norm(const std::vector<double>& w, std::size_t r, std::size_t c);

// trace(S_B) / (trace(S_W) + eps) from definition: S_W sums squared distances
// to class means, S_B sums class sizes times squared distance of class mean
// to the global mean.
double naive_fisher_ratio(const std::vector<double>& x, const std::vector<int>& y,
                          std::size_t n, std::size_t d, double eps = 1e-12);

// Mean silhouette over all points, O(n^2) by definition; singleton clusters
// score 0.
double naive_silhouette(const std::vector<double>& x, const std::vector<int>& y,
                        std::size_t n, std::size_t d);

// Index of the euclidean-nearest row with a different label, lowest index on
// ties; nullopt when every other row shares the label.
std::optional<std::size_t> naive_nearest_interclass(const std::vector<double>& x,
                                                    const std::vector<int>& y, std::size_t n,
                                                    std::size_t d, std::size_t i);

// For each row, the fraction of its k nearest rows (self excluded, ties by
// lowest index) whose label differs — full sort per row.
std::vector<double> naive_knn_differing_fraction(const std::vector<double>& x,
                                                 const std::vector<int>& y, std::size_t n,
                                                 std::size_t d, std::size_t k);

}  // namespace oracle
