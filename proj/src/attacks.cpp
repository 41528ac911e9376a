#include "nnprat/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "nnprat/errors.hpp"
#include "nnprat/rng.hpp"

namespace nnprat {

void AttackSpec::validate() const {
  std::vector<std::string> issues;
  if (!(alpha > 0.0)) issues.push_back("alpha must be > 0");
  if (!(epsilon >= 0.0)) issues.push_back("epsilon must be >= 0");
  if (!(clamp_lo < clamp_hi)) issues.push_back("clamp range must satisfy lo < hi");
  if (epsilon > clamp_hi - clamp_lo) {
    issues.push_back("epsilon must not exceed the clamp range width");
  }
  if (init != "zero" && init != "uniform-random") {
    issues.push_back("init must be 'zero' or 'uniform-random', got '" + init + "'");
  }
  if (direction != "ascent" && direction != "descent") {
    issues.push_back("direction must be 'ascent' or 'descent', got '" + direction + "'");
  }
  if (!issues.empty()) {
    std::string msg = "attack spec invalid:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw SpecError(msg);
  }
}

namespace {

// Clamp every coordinate into [x - eps, x + eps] intersected with [lo, hi].
void project(std::vector<double>& v, const std::vector<double>& x, double eps, double lo,
             double hi) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::min(std::max(v[i], x[i] - eps), x[i] + eps);
    v[i] = std::min(std::max(v[i], lo), hi);
  }
}

}  // namespace

Tensor pgd(const Network& net, const Tensor& x, const std::vector<int>& y,
           const AttackSpec& spec) {
  spec.validate();
  for (double v : x.values()) {
    if (v < spec.clamp_lo - 1e-12 || v > spec.clamp_hi + 1e-12) {
      throw ContractError("pgd: input outside the clamp range");
    }
  }

  const Network frozen = net.frozen_view();
  const std::vector<double>& x0 = x.values();
  const double dir = (spec.direction == "descent") ? -1.0 : 1.0;

  Tensor xa = x.clone();
  if (spec.init == "uniform-random" && spec.epsilon > 0.0) {
    Rng rng(spec.seed);
    auto& v = xa.values();
    for (auto& e : v) e += rng.uniform(-spec.epsilon, spec.epsilon);
    project(v, x0, spec.epsilon, spec.clamp_lo, spec.clamp_hi);
  }

  for (std::size_t t = 0; t < spec.steps; ++t) {
    Tensor step_in = xa;  // fresh leaf each iteration
    step_in.set_requires_grad(true);
    std::vector<double> g;
    {
      GradTape tape;
      Tensor loss = cross_entropy(frozen.forward(step_in).logits, y);
      tape.backward(loss);
      g = step_in.grad();
    }
    Tensor next = step_in.clone();
    auto& v = next.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      v[i] += dir * spec.alpha * s;
    }
    project(v, x0, spec.epsilon, spec.clamp_lo, spec.clamp_hi);
    xa = next;
  }
  return xa;
}

Tensor fgsm(const Network& net, const Tensor& x, const std::vector<int>& y, double epsilon,
            double clamp_lo, double clamp_hi) {
  if (epsilon == 0.0) return x.clone();
  AttackSpec spec;
  spec.epsilon = epsilon;
  spec.alpha = epsilon;
  spec.steps = 1;
  spec.init = "zero";
  spec.direction = "ascent";
  spec.clamp_lo = clamp_lo;
  spec.clamp_hi = clamp_hi;
  return pgd(net, x, y, spec);
}

}  // namespace nnprat
