#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nnprat/models.hpp"
#include "nnprat/tensor.hpp"

namespace nnprat {

// Controls projection removal and the joint loss.
//   z~ = (1 - lambda * <z, z*> / ||z||^p) * z
// with p=2 for norm_exponent="squared" and p=1 for "unsquared". The clean and
// adversarial terms share one neighbor assignment computed from the
// adversarial features; beta weights the clean term.
struct ProjectionSpec {
  double lambda = 0.001;
  double beta = 6.0;
  std::string stage = "logits";           // "logits" | "penultimate"
  std::string norm_exponent = "squared";  // "squared" | "unsquared"
  std::string neighbor_source = "adversarial-features";
  bool detach_neighbor = true;

  void validate() const;  // throws SpecError listing every violation
};

// Per-row nearest differing-label batch member. `neighbor[i]` is empty when
// no other class occurs in the batch; `distance[i]` is the Euclidean distance
// to the winner (+inf when unassigned).
struct NeighborAssignment {
  std::vector<std::optional<std::size_t>> neighbor;
  std::vector<double> distance;

  std::size_t assigned_count() const;
};

// Exhaustive O(batch^2) search for the closest row with a different label;
// ties break to the lowest index.
NeighborAssignment nearest_interclass(const Tensor& features, const std::vector<int>& labels);

// Applies the scale factor row-wise. Rows without an assignment pass through
// unchanged. neighbor_pool supplies the z* rows (indexed by the assignment);
// gradients flow into the pool only if it is a tracked tensor, so passing a
// detached pool realizes detach_neighbor. Zero-norm rows that have an
// assignment raise DegenerateFeatureError.
Tensor projection_removal(const Tensor& z, const NeighborAssignment& assignment,
                          const Tensor& neighbor_pool, const ProjectionSpec& spec);

// s = 1 - lambda * <z, z*> / ||z||^p for one feature row.
double effective_scale_factor(const Tensor& z_row, const Tensor& zstar_row, double lambda,
                              const std::string& norm_exponent);

// Joint objective: CE(corrected z_adv, y) + beta * CE(corrected z_clean, y),
// both corrections using the neighbor assignment found among the adversarial
// features. stage=penultimate corrects h and re-applies the final layer
// before the cross-entropy.
Tensor nnprat_loss(const Network& net, const Tensor& x, const Tensor& x_adv,
                   const std::vector<int>& y, const ProjectionSpec& spec);

}  // namespace nnprat
