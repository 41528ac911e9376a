#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace nnprat {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

class Tape;

namespace detail {
// Gradient storage shared by every copy of a tensor. Allocated with the data
// buffer so that a gradient written through one handle (e.g. the tape's) is
// visible through all others; the vector itself stays empty until a backward
// pass touches it.
struct GradSlot {
  std::vector<double> g;
  bool set = false;
};
}  // namespace detail

// Dense row-major f64 array. Copies are shallow: they share the value and
// gradient buffers. Gradients accumulate into the shared slot, so every
// handle to a parameter sees the same grad.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const;
  bool defined() const { return data_ != nullptr; }

  std::vector<double>& values();
  const std::vector<double>& values() const;

  double value() const;                     // scalar tensors only
  double at(std::size_t i) const;           // flat index
  double at(std::size_t r, std::size_t c) const;  // rank-2
  double& mut(std::size_t i);

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b);

  bool has_grad() const { return grad_ && grad_->set; }
  const std::vector<double>& grad() const;  // throws if no grad accumulated
  Tensor grad_tensor() const;               // detached copy of the gradient
  void zero_grad();
  void accumulate_grad(const std::vector<double>& g);

  Tensor detach() const;  // shares data, drops graph link
  Tensor clone() const;   // deep copy of data, no graph link

  bool all_finite() const;

  // Graph linkage (managed by the op layer).
  std::uint64_t tape_id() const { return tape_id_; }
  std::int64_t node() const { return node_; }
  void bind_node(std::uint64_t tape_id, std::int64_t node) const {
    tape_id_ = tape_id;
    node_ = node;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<detail::GradSlot> grad_;
  bool requires_grad_ = false;
  mutable std::uint64_t tape_id_ = 0;
  mutable std::int64_t node_ = -1;
};

enum class OpKind {
  leaf,
  add,
  sub,
  scalar_mul,
  hadamard,
  div_ew,
  sqrt_ew,
  affine_ew,
  matmul,
  transpose2,
  relu,
  clamp,
  reshape,
  sum_all,
  mean_all,
  inner,
  l2_norm_sq,
  add_bias_row,
  gather_rows,
  row_dot,
  scale_rows,
  conv2d,
  maxpool2,
  cross_entropy,
};

struct TapeNode {
  OpKind op;
  std::vector<std::int64_t> inputs;  // node ids; -1 marks an untracked slot
  Tensor out;
  std::vector<Tensor> saved;  // cached values needed by the backward rule
  double c0 = 0.0;
  double c1 = 0.0;
  std::vector<std::size_t> aux;  // labels, pool argmax, gather indices, dims
};

// Recording scope for reverse-mode differentiation. Ops executed while a
// GradTape is alive record nodes; without one they are pure evaluations.
// Node ids increase in creation order and backward walks them in strictly
// decreasing order.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void backward(const Tensor& loss);
  std::size_t node_count() const;

 private:
  std::unique_ptr<Tape> tape_;
  Tape* prev_;
};

// Backpropagates from a scalar loss recorded on the active tape. Gradients
// of every requires_grad ancestor accumulate into its grad buffer; repeated
// calls without zero_grad() add up.
void backward(const Tensor& loss);

// --- Operations. All record onto the active tape when an input is tracked.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor div_ew(const Tensor& a, const Tensor& b);
Tensor sqrt_ew(const Tensor& a);
// a * scale + shift, elementwise.
Tensor affine_ew(const Tensor& a, double scale, double shift);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2(const Tensor& a);
Tensor relu(const Tensor& a);
// Elementwise sign in {-1, 0, +1}. Gradient defined as zero: the result is
// detached from the graph.
Tensor sign(const Tensor& a);
// Subgradient 1 on [lo, hi], 0 outside.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor reshape(const Tensor& a, Shape shape);
// Collapses all trailing dims: [n, d1, d2, ...] -> [n, d1*d2*...].
Tensor flatten_rows(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor inner(const Tensor& a, const Tensor& b);  // rank-1 dot product
Tensor l2_norm_sq(const Tensor& a);
// a: [n x k], bias: [k]; adds bias to every row.
Tensor add_bias_row(const Tensor& a, const Tensor& bias);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
// Per-row dot product of two [n x k] tensors -> [n].
Tensor row_dot(const Tensor& a, const Tensor& b);
// out[i,:] = a[i,:] * s[i].
Tensor scale_rows(const Tensor& a, const Tensor& s);
// x: [n, ci, h, w], w: [co, ci, kh, kw], bias: [co]; stride 1, valid padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
// 2x2 max pool, stride 2, floor semantics (odd edge dropped).
Tensor maxpool2(const Tensor& x);
// Mean over the batch of -log softmax(logits)[label], max-stabilized.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace nnprat
