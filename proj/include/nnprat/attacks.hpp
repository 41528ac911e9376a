#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnprat/models.hpp"
#include "nnprat/tensor.hpp"

namespace nnprat {

// L-infinity attack parameters. The iterate is
//   x_{t+1} = Proj( x_t + dir * alpha * sign(grad_x CE(f(x_t), y)) )
// where Proj clamps into the epsilon box around x intersected with
// [clamp_lo, clamp_hi]. direction=ascent maximizes the loss (the standard
// attack); descent applies the update with a minus sign instead.
struct AttackSpec {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  std::size_t steps = 20;
  std::string init = "zero";         // "zero" | "uniform-random"
  std::string direction = "ascent";  // "ascent" | "descent"
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws SpecError listing every violation
};

// Multi-step projected sign-gradient attack. Parameters receive no gradient
// and are never modified; exactly spec.steps gradient evaluations run.
Tensor pgd(const Network& net, const Tensor& x, const std::vector<int>& y,
           const AttackSpec& spec);

// Single sign-gradient step of size epsilon: pgd with steps=1, zero init,
// alpha=epsilon, ascent. epsilon=0 returns x unchanged.
Tensor fgsm(const Network& net, const Tensor& x, const std::vector<int>& y, double epsilon,
            double clamp_lo = 0.0, double clamp_hi = 1.0);

}  // namespace nnprat
