#include "nnprat/nnprat.hpp"

#include <cmath>
#include <limits>

#include "nnprat/errors.hpp"

namespace nnprat {

void ProjectionSpec::validate() const {
  std::vector<std::string> issues;
  if (!(lambda >= 0.0)) issues.push_back("lambda must be >= 0");
  if (!(beta >= 0.0)) issues.push_back("beta must be >= 0");
  if (stage != "logits" && stage != "penultimate") {
    issues.push_back("stage must be 'logits' or 'penultimate', got '" + stage + "'");
  }
  if (norm_exponent != "squared" && norm_exponent != "unsquared") {
    issues.push_back("norm_exponent must be 'squared' or 'unsquared', got '" +
                     norm_exponent + "'");
  }
  if (neighbor_source != "adversarial-features") {
    issues.push_back("neighbor_source must be 'adversarial-features', got '" +
                     neighbor_source + "'");
  }
  if (!issues.empty()) {
    std::string msg = "projection spec invalid:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw SpecError(msg);
  }
}

std::size_t NeighborAssignment::assigned_count() const {
  std::size_t n = 0;
  for (const auto& a : neighbor) {
    if (a) ++n;
  }
  return n;
}

NeighborAssignment nearest_interclass(const Tensor& features, const std::vector<int>& labels) {
  if (features.rank() != 2) {
    throw ShapeError("nearest_interclass: features must be [batch x k], got " +
                     shape_str(features.shape()));
  }
  const std::size_t n = features.dim(0), k = features.dim(1);
  if (n == 0) throw ContractError("nearest_interclass: empty batch");
  if (labels.size() != n) {
    throw ContractError("nearest_interclass: " + std::to_string(n) + " rows vs " +
                        std::to_string(labels.size()) + " labels");
  }

  const auto& v = features.values();
  NeighborAssignment out;
  out.neighbor.assign(n, std::nullopt);
  out.distance.assign(n, std::numeric_limits<double>::infinity());

  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> who;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || labels[j] == labels[i]) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dv = v[i * k + c] - v[j * k + c];
        d2 += dv * dv;
      }
      if (d2 < best) {  // strict: lowest index wins ties
        best = d2;
        who = j;
      }
    }
    if (who) {
      out.neighbor[i] = who;
      out.distance[i] = std::sqrt(best);
    }
  }
  return out;
}

Tensor projection_removal(const Tensor& z, const NeighborAssignment& assignment,
                          const Tensor& neighbor_pool, const ProjectionSpec& spec) {
  spec.validate();
  if (z.rank() != 2) {
    throw ShapeError("projection_removal: z must be [batch x k], got " +
                     shape_str(z.shape()));
  }
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (assignment.neighbor.size() != n) {
    throw ContractError("projection_removal: assignment covers " +
                        std::to_string(assignment.neighbor.size()) + " rows, z has " +
                        std::to_string(n));
  }
  if (neighbor_pool.rank() != 2 || neighbor_pool.dim(1) != k) {
    throw ShapeError("projection_removal: neighbor pool " +
                     shape_str(neighbor_pool.shape()) + " does not match z " +
                     shape_str(z.shape()));
  }

  // Zero-norm check on assigned rows (raw values; the graph is built after).
  const auto& zv = z.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (!assignment.neighbor[i]) continue;
    double norm2 = 0.0;
    for (std::size_t c = 0; c < k; ++c) norm2 += zv[i * k + c] * zv[i * k + c];
    if (norm2 == 0.0) {
      throw DegenerateFeatureError("projection_removal: feature row " + std::to_string(i) +
                                   " is the zero vector");
    }
  }

  // Assigned rows get scale 1 - lambda * <z,z*>/||z||^p; unassigned rows pass
  // through with scale exactly 1. The mask zeroes the numerator and the guard
  // keeps the denominator nonzero for unassigned rows.
  std::vector<std::size_t> idx(n, 0);
  Tensor mask({n});
  Tensor guard({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (assignment.neighbor[i]) {
      idx[i] = *assignment.neighbor[i];
      if (idx[i] >= neighbor_pool.dim(0)) {
        throw IndexError("projection_removal: neighbor index " + std::to_string(idx[i]) +
                         " outside the pool");
      }
      mask.mut(i) = 1.0;
    } else {
      guard.mut(i) = 1.0;
    }
  }

  Tensor zstar = gather_rows(neighbor_pool, idx);
  Tensor num = hadamard(row_dot(z, zstar), mask);
  Tensor denom = add(row_dot(z, z), guard);
  if (spec.norm_exponent == "unsquared") denom = sqrt_ew(denom);
  Tensor s = affine_ew(div_ew(num, denom), -spec.lambda, 1.0);
  return scale_rows(z, s);
}

double effective_scale_factor(const Tensor& z_row, const Tensor& zstar_row, double lambda,
                              const std::string& norm_exponent) {
  if (z_row.rank() != 1 || zstar_row.rank() != 1 || z_row.size() != zstar_row.size()) {
    throw ShapeError("effective_scale_factor: rows must be equal-length vectors");
  }
  if (norm_exponent != "squared" && norm_exponent != "unsquared") {
    throw SpecError("effective_scale_factor: bad norm_exponent '" + norm_exponent + "'");
  }
  double dot = 0.0, norm2 = 0.0;
  for (std::size_t i = 0; i < z_row.size(); ++i) {
    dot += z_row.at(i) * zstar_row.at(i);
    norm2 += z_row.at(i) * z_row.at(i);
  }
  if (norm2 == 0.0) {
    throw DegenerateFeatureError("effective_scale_factor: zero-norm feature row");
  }
  const double denom = norm_exponent == "squared" ? norm2 : std::sqrt(norm2);
  return 1.0 - lambda * dot / denom;
}

Tensor nnprat_loss(const Network& net, const Tensor& x, const Tensor& x_adv,
                   const std::vector<int>& y, const ProjectionSpec& spec) {
  spec.validate();
  if (x.shape() != x_adv.shape()) {
    throw ShapeError("nnprat_loss: x " + shape_str(x.shape()) + " and x_adv " +
                     shape_str(x_adv.shape()) + " differ");
  }

  const bool at_logits = spec.stage == "logits";
  const auto& params = net.parameters();

  auto to_logits = [&](const Tensor& corrected) {
    if (at_logits) return corrected;
    return add_bias_row(matmul(corrected, params[params.size() - 2]), params.back());
  };

  ForwardResult adv = net.forward(x_adv);
  Tensor z_adv = at_logits ? adv.logits : adv.penultimate;

  NeighborAssignment assignment = nearest_interclass(z_adv, y);
  Tensor pool = spec.detach_neighbor ? z_adv.detach() : z_adv;

  Tensor adv_corrected = projection_removal(z_adv, assignment, pool, spec);
  Tensor loss = cross_entropy(to_logits(adv_corrected), y);

  if (spec.beta > 0.0) {
    ForwardResult cln = net.forward(x);
    Tensor z_cln = at_logits ? cln.logits : cln.penultimate;
    Tensor cln_corrected = projection_removal(z_cln, assignment, pool, spec);
    loss = add(loss, scalar_mul(cross_entropy(to_logits(cln_corrected), y), spec.beta));
  }
  return loss;
}

}  // namespace nnprat
