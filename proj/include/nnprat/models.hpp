#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnprat/tensor.hpp"

namespace nnprat {

// Architecture descriptor. `mlp` stacks relu hidden layers of the given
// widths over a flat input; `cnn-small` is a fixed plan
//   conv(in->8, 3x3) relu pool2  conv(8->16, 3x3) relu pool2  flatten
//   linear(->64) relu  linear(->C)
// whose 64-wide relu output is the penultimate representation.
struct NetworkSpec {
  std::string kind;                 // "mlp" or "cnn-small"
  Shape input_shape;                // mlp: {d}; cnn-small: {channels, h, w}
  std::vector<std::size_t> hidden;  // mlp hidden widths; empty for cnn-small
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;

  void validate() const;  // throws SpecError listing every violation
  std::size_t input_size() const;
  std::size_t penultimate_size() const;
};

struct ForwardResult {
  Tensor penultimate;  // [batch x m]
  Tensor logits;       // [batch x C]
};

class Network {
 public:
  Network() = default;

  static Network init(const NetworkSpec& spec);

  const NetworkSpec& spec() const { return spec_; }

  // Runs the net. Records on the active tape; gradients flow to both the
  // parameters and x.
  ForwardResult forward(const Tensor& x) const;

  // Final classification weights as [C x m] (rows are class vectors). The
  // returned tensor is a plain copy outside any tape.
  Tensor last_layer_weights() const;
  Tensor last_layer_bias() const;

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  void set_trainable(bool b);

  // Shares the parameter buffers but drops the requires_grad marks, so a
  // forward through the view never propagates gradients into the weights.
  // Attacks differentiate w.r.t. the input through such a view.
  Network frozen_view() const;

  // Deep copy with independent buffers.
  Network clone() const;

  void save(const std::string& path) const;
  static Network load(const std::string& path);

 private:
  NetworkSpec spec_;
  std::vector<Tensor> params_;
};

}  // namespace nnprat
