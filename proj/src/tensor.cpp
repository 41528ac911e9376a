#include "nnprat/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>

#include "nnprat/errors.hpp"

namespace nnprat {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_size(shape_), 0.0)),
      grad_(std::make_shared<detail::GradSlot>()) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_size(shape_) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(values));
  grad_ = std::make_shared<detail::GradSlot>();
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }
Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

std::size_t Tensor::size() const { return data_ ? data_->size() : 0; }

std::vector<double>& Tensor::values() {
  if (!data_) throw ContractError("tensor: undefined");
  return *data_;
}

const std::vector<double>& Tensor::values() const {
  if (!data_) throw ContractError("tensor: undefined");
  return *data_;
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("tensor: value() needs a scalar, got " + shape_str(shape_));
  }
  return (*data_)[0];
}

double Tensor::at(std::size_t i) const { return (*data_)[i]; }

double Tensor::at(std::size_t r, std::size_t c) const {
  return (*data_)[r * shape_[1] + c];
}

double& Tensor::mut(std::size_t i) { return (*data_)[i]; }

Tensor& Tensor::set_requires_grad(bool b) {
  requires_grad_ = b;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor: no gradient accumulated");
  return grad_->g;
}

Tensor Tensor::grad_tensor() const { return Tensor(shape_, grad()); }

void Tensor::zero_grad() {
  if (grad_ && grad_->set) {
    std::fill(grad_->g.begin(), grad_->g.end(), 0.0);
  }
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
  if (!grad_ || g.size() != size()) {
    throw ShapeError("tensor: gradient length mismatch");
  }
  if (grad_->g.empty()) grad_->g.assign(size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) grad_->g[i] += g[i];
  grad_->set = true;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  t.grad_ = grad_;
  return t;
}

Tensor Tensor::clone() const {
  if (!data_) return Tensor();
  return Tensor(shape_, *data_);
}

bool Tensor::all_finite() const {
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape

class Tape {
 public:
  Tape() : id_(next_id()) {}

  std::uint64_t id() const { return id_; }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

  void backward_from(const Tensor& loss);

  std::vector<TapeNode> nodes;

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::uint64_t id_;
};

GradTape::GradTape() : tape_(std::make_unique<Tape>()), prev_(Tape::active()) {
  Tape::active() = tape_.get();
}

GradTape::~GradTape() { Tape::active() = prev_; }

void GradTape::backward(const Tensor& loss) { tape_->backward_from(loss); }

std::size_t GradTape::node_count() const { return tape_->nodes.size(); }

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw ContractError("backward: no active tape");
  t->backward_from(loss);
}

namespace {

// Node id of x on tape t; registers a leaf when x requires grad.
std::int64_t track(Tape* t, const Tensor& x) {
  if (!t) return -1;
  if (x.tape_id() == t->id() && x.node() >= 0) return x.node();
  if (!x.requires_grad()) return -1;
  TapeNode leaf;
  leaf.op = OpKind::leaf;
  leaf.out = x;
  t->nodes.push_back(std::move(leaf));
  auto id = static_cast<std::int64_t>(t->nodes.size()) - 1;
  x.bind_node(t->id(), id);
  return id;
}

void record(Tape* t, OpKind op, std::vector<std::int64_t> inputs, Tensor& out,
            std::vector<Tensor> saved, double c0 = 0.0, double c1 = 0.0,
            std::vector<std::size_t> aux = {}) {
  TapeNode n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.out = out;
  n.saved = std::move(saved);
  n.c0 = c0;
  n.c1 = c1;
  n.aux = std::move(aux);
  t->nodes.push_back(std::move(n));
  out.bind_node(t->id(), static_cast<std::int64_t>(t->nodes.size()) - 1);
  out.set_requires_grad(true);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

}  // namespace

void Tape::backward_from(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (loss.tape_id() != id_ || loss.node() < 0 ||
      loss.node() >= static_cast<std::int64_t>(nodes.size())) {
    throw ContractError("backward: loss is not connected to the active tape");
  }

  std::vector<std::vector<double>> adj(nodes.size());
  adj[loss.node()] = {1.0};

  auto sink = [&](std::int64_t input_id, std::size_t n) -> std::vector<double>& {
    auto& v = adj[input_id];
    if (v.empty()) v.assign(n, 0.0);
    return v;
  };

  for (std::int64_t id = loss.node(); id >= 0; --id) {
    if (adj[id].empty()) continue;
    const TapeNode& nd = nodes[id];
    const std::vector<double>& g = adj[id];
    auto tracked = [&](std::size_t slot) { return nd.inputs[slot] >= 0; };

    switch (nd.op) {
      case OpKind::leaf:
        break;

      case OpKind::add: {
        for (std::size_t s = 0; s < 2; ++s) {
          if (!tracked(s)) continue;
          auto& da = sink(nd.inputs[s], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        break;
      }

      case OpKind::sub: {
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (tracked(1)) {
          auto& db = sink(nd.inputs[1], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
        break;
      }

      case OpKind::scalar_mul:
      case OpKind::affine_ew: {
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += nd.c0 * g[i];
        }
        break;
      }

      case OpKind::hadamard: {
        const auto& av = nd.saved[0].values();
        const auto& bv = nd.saved[1].values();
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (tracked(1)) {
          auto& db = sink(nd.inputs[1], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
        }
        break;
      }

      case OpKind::div_ew: {
        const auto& av = nd.saved[0].values();
        const auto& bv = nd.saved[1].values();
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / bv[i];
        }
        if (tracked(1)) {
          auto& db = sink(nd.inputs[1], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) {
            db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
          }
        }
        break;
      }

      case OpKind::sqrt_ew: {
        const auto& ov = nd.out.values();
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += 0.5 * g[i] / ov[i];
        }
        break;
      }

      case OpKind::matmul: {
        const auto& av = nd.saved[0].values();
        const auto& bv = nd.saved[1].values();
        const std::size_t m = nd.saved[0].dim(0);
        const std::size_t k = nd.saved[0].dim(1);
        const std::size_t n = nd.saved[1].dim(1);
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], m * k);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              for (std::size_t p = 0; p < k; ++p) da[i * k + p] += gij * bv[p * n + j];
            }
          }
        }
        if (tracked(1)) {
          auto& db = sink(nd.inputs[1], k * n);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
            }
          }
        }
        break;
      }

      case OpKind::transpose2: {
        if (tracked(0)) {
          const std::size_t c0 = nd.out.dim(0);  // input cols
          const std::size_t r0 = nd.out.dim(1);  // input rows
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < c0; ++i) {
            for (std::size_t j = 0; j < r0; ++j) da[j * c0 + i] += g[i * r0 + j];
          }
        }
        break;
      }

      case OpKind::relu: {
        const auto& av = nd.saved[0].values();
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (av[i] > 0.0) da[i] += g[i];
          }
        }
        break;
      }

      case OpKind::clamp: {
        const auto& av = nd.saved[0].values();
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (av[i] >= nd.c0 && av[i] <= nd.c1) da[i] += g[i];
          }
        }
        break;
      }

      case OpKind::reshape: {
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], g.size());
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        break;
      }

      case OpKind::sum_all: {
        if (tracked(0)) {
          const std::size_t n = nd.saved[0].size();
          auto& da = sink(nd.inputs[0], n);
          for (std::size_t i = 0; i < n; ++i) da[i] += g[0];
        }
        break;
      }

      case OpKind::mean_all: {
        if (tracked(0)) {
          const std::size_t n = nd.saved[0].size();
          auto& da = sink(nd.inputs[0], n);
          const double s = g[0] / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) da[i] += s;
        }
        break;
      }

      case OpKind::inner: {
        const auto& av = nd.saved[0].values();
        const auto& bv = nd.saved[1].values();
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], av.size());
          for (std::size_t i = 0; i < av.size(); ++i) da[i] += g[0] * bv[i];
        }
        if (tracked(1)) {
          auto& db = sink(nd.inputs[1], bv.size());
          for (std::size_t i = 0; i < bv.size(); ++i) db[i] += g[0] * av[i];
        }
        break;
      }

      case OpKind::l2_norm_sq: {
        const auto& av = nd.saved[0].values();
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], av.size());
          for (std::size_t i = 0; i < av.size(); ++i) da[i] += 2.0 * g[0] * av[i];
        }
        break;
      }

      case OpKind::add_bias_row: {
        const std::size_t n = nd.out.dim(0);
        const std::size_t k = nd.out.dim(1);
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], n * k);
          for (std::size_t i = 0; i < n * k; ++i) da[i] += g[i];
        }
        if (tracked(1)) {
          auto& db = sink(nd.inputs[1], k);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) db[j] += g[i * k + j];
          }
        }
        break;
      }

      case OpKind::gather_rows: {
        if (tracked(0)) {
          const std::size_t k = nd.out.dim(1);
          auto& da = sink(nd.inputs[0], nd.saved[0].size());
          for (std::size_t r = 0; r < nd.aux.size(); ++r) {
            const std::size_t src = nd.aux[r];
            for (std::size_t j = 0; j < k; ++j) da[src * k + j] += g[r * k + j];
          }
        }
        break;
      }

      case OpKind::row_dot: {
        const auto& av = nd.saved[0].values();
        const auto& bv = nd.saved[1].values();
        const std::size_t n = nd.saved[0].dim(0);
        const std::size_t k = nd.saved[0].dim(1);
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], n * k);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) da[i * k + j] += g[i] * bv[i * k + j];
          }
        }
        if (tracked(1)) {
          auto& db = sink(nd.inputs[1], n * k);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) db[i * k + j] += g[i] * av[i * k + j];
          }
        }
        break;
      }

      case OpKind::scale_rows: {
        const auto& av = nd.saved[0].values();
        const auto& sv = nd.saved[1].values();
        const std::size_t n = nd.saved[0].dim(0);
        const std::size_t k = nd.saved[0].dim(1);
        if (tracked(0)) {
          auto& da = sink(nd.inputs[0], n * k);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) da[i * k + j] += sv[i] * g[i * k + j];
          }
        }
        if (tracked(1)) {
          auto& ds = sink(nd.inputs[1], n);
          for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += g[i * k + j] * av[i * k + j];
            ds[i] += acc;
          }
        }
        break;
      }

      case OpKind::conv2d: {
        const Tensor& x = nd.saved[0];
        const Tensor& w = nd.saved[1];
        const std::size_t nb = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
        const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const std::size_t oh = h - kh + 1, ow = wd - kw + 1;
        const auto& xv = x.values();
        const auto& wv = w.values();
        if (tracked(0)) {
          auto& dx = sink(nd.inputs[0], x.size());
          for (std::size_t n0 = 0; n0 < nb; ++n0) {
            for (std::size_t oc = 0; oc < co; ++oc) {
              const double* gp = g.data() + ((n0 * co + oc) * oh) * ow;
              for (std::size_t icn = 0; icn < ci; ++icn) {
                double* dxp = dx.data() + ((n0 * ci + icn) * h) * wd;
                const double* wp = wv.data() + ((oc * ci + icn) * kh) * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv0 = wp[ky * kw + kx];
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                      double* drow = dxp + (oy + ky) * wd + kx;
                      const double* grow = gp + oy * ow;
                      for (std::size_t ox = 0; ox < ow; ++ox) drow[ox] += wv0 * grow[ox];
                    }
                  }
                }
              }
            }
          }
        }
        if (tracked(1)) {
          auto& dw = sink(nd.inputs[1], w.size());
          for (std::size_t n0 = 0; n0 < nb; ++n0) {
            for (std::size_t oc = 0; oc < co; ++oc) {
              const double* gp = g.data() + ((n0 * co + oc) * oh) * ow;
              for (std::size_t icn = 0; icn < ci; ++icn) {
                const double* xp = xv.data() + ((n0 * ci + icn) * h) * wd;
                double* dwp = dw.data() + ((oc * ci + icn) * kh) * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                      const double* xrow = xp + (oy + ky) * wd + kx;
                      const double* grow = gp + oy * ow;
                      for (std::size_t ox = 0; ox < ow; ++ox) acc += xrow[ox] * grow[ox];
                    }
                    dwp[ky * kw + kx] += acc;
                  }
                }
              }
            }
          }
        }
        if (tracked(2)) {
          auto& db = sink(nd.inputs[2], co);
          for (std::size_t n0 = 0; n0 < nb; ++n0) {
            for (std::size_t oc = 0; oc < co; ++oc) {
              const double* gp = g.data() + ((n0 * co + oc) * oh) * ow;
              double acc = 0.0;
              for (std::size_t i = 0; i < oh * ow; ++i) acc += gp[i];
              db[oc] += acc;
            }
          }
        }
        break;
      }

      case OpKind::maxpool2: {
        if (tracked(0)) {
          auto& dx = sink(nd.inputs[0], nd.saved[0].size());
          for (std::size_t o = 0; o < g.size(); ++o) dx[nd.aux[o]] += g[o];
        }
        break;
      }

      case OpKind::cross_entropy: {
        if (tracked(0)) {
          const Tensor& probs = nd.saved[0];
          const std::size_t n = probs.dim(0), c = probs.dim(1);
          const auto& pv = probs.values();
          auto& dl = sink(nd.inputs[0], n * c);
          const double s = g[0] / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              double delta = (j == nd.aux[i]) ? 1.0 : 0.0;
              dl[i * c + j] += s * (pv[i * c + j] - delta);
            }
          }
        }
        break;
      }
    }
  }

  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (!adj[id].empty() && nodes[id].out.requires_grad()) {
      nodes[id].out.accumulate_grad(adj[id]);
    }
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace {

template <typename F>
Tensor elementwise2(const Tensor& a, const Tensor& b, OpKind op, const char* name, F f,
                    bool save_inputs) {
  check_same_shape(a, b, name);
  Tensor out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(av[i], bv[i]);
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a), ib = track(t, b);
    if (ia >= 0 || ib >= 0) {
      std::vector<Tensor> saved;
      if (save_inputs) saved = {a.detach(), b.detach()};
      record(t, op, {ia, ib}, out, std::move(saved));
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise2(a, b, OpKind::add, "add", [](double x, double y) { return x + y; },
                      false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise2(a, b, OpKind::sub, "sub", [](double x, double y) { return x - y; },
                      false);
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return elementwise2(a, b, OpKind::hadamard, "hadamard",
                      [](double x, double y) { return x * y; }, true);
}

Tensor div_ew(const Tensor& a, const Tensor& b) {
  Tensor out = elementwise2(a, b, OpKind::div_ew, "div_ew",
                            [](double x, double y) { return x / y; }, true);
  if (!out.all_finite()) {
    throw NumericError("div_ew: division produced a non-finite value");
  }
  return out;
}

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c * av[i];
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::scalar_mul, {ia}, out, {}, c);
  }
  return out;
}

Tensor affine_ew(const Tensor& a, double scale, double shift) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = scale * av[i] + shift;
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::affine_ew, {ia}, out, {}, scale, shift);
  }
  return out;
}

Tensor sqrt_ew(const Tensor& a) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    if (av[i] < 0.0) throw NumericError("sqrt_ew: negative input");
    ov[i] = std::sqrt(av[i]);
  }
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::sqrt_ew, {ia}, out, {});
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      double* orow = ov.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a), ib = track(t, b);
    if (ia >= 0 || ib >= 0) {
      record(t, OpKind::matmul, {ia, ib}, out, {a.detach(), b.detach()});
    }
  }
  return out;
}

Tensor transpose2(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose2: need rank-2, got " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];
  }
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::transpose2, {ia}, out, {});
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::relu, {ia}, out, {a.detach()});
  }
  return out;
}

Tensor sign(const Tensor& a) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
  }
  return out;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(std::max(av[i], lo), hi);
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::clamp, {ia}, out, {a.detach()}, lo, hi);
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor out(std::move(shape), a.values());
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::reshape, {ia}, out, {});
  }
  return out;
}

Tensor flatten_rows(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("flatten_rows: need rank >= 2");
  return reshape(a, {a.dim(0), a.size() / a.dim(0)});
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s);
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::sum_all, {ia}, out, {a.detach()});
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean_all: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s / static_cast<double>(a.size()));
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::mean_all, {ia}, out, {a.detach()});
  }
  return out;
}

Tensor inner(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size()) {
    throw ShapeError("inner: need equal-length vectors, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  double s = 0.0;
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  Tensor out = Tensor::scalar(s);
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a), ib = track(t, b);
    if (ia >= 0 || ib >= 0) record(t, OpKind::inner, {ia, ib}, out, {a.detach(), b.detach()});
  }
  return out;
}

Tensor l2_norm_sq(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  Tensor out = Tensor::scalar(s);
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::l2_norm_sq, {ia}, out, {a.detach()});
  }
  return out;
}

Tensor add_bias_row(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || a.dim(1) != bias.dim(0)) {
    throw ShapeError("add_bias_row: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(bias.shape()) + " do not match");
  }
  const std::size_t n = a.dim(0), k = a.dim(1);
  Tensor out({n, k});
  const auto& av = a.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) ov[i * k + j] = av[i * k + j] + bv[j];
  }
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a), ib = track(t, bias);
    if (ia >= 0 || ib >= 0) record(t, OpKind::add_bias_row, {ia, ib}, out, {});
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() != 2) throw ShapeError("gather_rows: need rank-2");
  const std::size_t k = a.dim(1);
  for (auto r : idx) {
    if (r >= a.dim(0)) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " out of range");
    }
  }
  Tensor out({idx.size(), k});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::memcpy(ov.data() + r * k, av.data() + idx[r] * k, k * sizeof(double));
  }
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a);
    if (ia >= 0) record(t, OpKind::gather_rows, {ia}, out, {a.detach()}, 0, 0, idx);
  }
  return out;
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "row_dot");
  if (a.rank() != 2) throw ShapeError("row_dot: need rank-2");
  const std::size_t n = a.dim(0), k = a.dim(1);
  Tensor out({n});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += av[i * k + j] * bv[i * k + j];
    ov[i] = s;
  }
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a), ib = track(t, b);
    if (ia >= 0 || ib >= 0) {
      record(t, OpKind::row_dot, {ia, ib}, out, {a.detach(), b.detach()});
    }
  }
  return out;
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  if (a.rank() != 2 || s.rank() != 1 || s.dim(0) != a.dim(0)) {
    throw ShapeError("scale_rows: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(s.shape()) + " do not match");
  }
  const std::size_t n = a.dim(0), k = a.dim(1);
  Tensor out({n, k});
  const auto& av = a.values();
  const auto& sv = s.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) ov[i * k + j] = sv[i] * av[i * k + j];
  }
  Tape* t = Tape::active();
  if (t) {
    auto ia = track(t, a), is = track(t, s);
    if (ia >= 0 || is >= 0) {
      record(t, OpKind::scale_rows, {ia, is}, out, {a.detach(), s.detach()});
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: need rank-4 input and kernel");
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match");
  }
  const std::size_t nb = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (h < kh || wd < kw) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel " +
                     shape_str(w.shape()));
  }
  const std::size_t oh = h - kh + 1, ow = wd - kw + 1;
  Tensor out({nb, co, oh, ow});
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (std::size_t n0 = 0; n0 < nb; ++n0) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      double* op = ov.data() + ((n0 * co + oc) * oh) * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) op[i] = bv[oc];
      for (std::size_t icn = 0; icn < ci; ++icn) {
        const double* xp = xv.data() + ((n0 * ci + icn) * h) * wd;
        const double* wp = wv.data() + ((oc * ci + icn) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv0 = wp[ky * kw + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const double* xrow = xp + (oy + ky) * wd + kx;
              double* orow = op + oy * ow;
              for (std::size_t ox = 0; ox < ow; ++ox) orow[ox] += wv0 * xrow[ox];
            }
          }
        }
      }
    }
  }
  Tape* t = Tape::active();
  if (t) {
    auto ix = track(t, x), iw = track(t, w), ib = track(t, bias);
    if (ix >= 0 || iw >= 0 || ib >= 0) {
      record(t, OpKind::conv2d, {ix, iw, ib}, out, {x.detach(), w.detach()});
    }
  }
  return out;
}

Tensor maxpool2(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("maxpool2: need rank-4 input");
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) {
    throw ShapeError("maxpool2: spatial dims too small in " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({nb, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const auto& xv = x.values();
  auto& ov = out.values();
  std::size_t o = 0;
  for (std::size_t n0 = 0; n0 < nb; ++n0) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = ((n0 * c + ch) * h) * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = base + (2 * oy) * w + 2 * ox;
          double bv = xv[best];
          const std::size_t cand[3] = {base + (2 * oy) * w + 2 * ox + 1,
                                       base + (2 * oy + 1) * w + 2 * ox,
                                       base + (2 * oy + 1) * w + 2 * ox + 1};
          for (std::size_t ci2 = 0; ci2 < 3; ++ci2) {
            if (xv[cand[ci2]] > bv) {
              bv = xv[cand[ci2]];
              best = cand[ci2];
            }
          }
          ov[o] = bv;
          argmax[o] = best;
          ++o;
        }
      }
    }
  }
  Tape* t = Tape::active();
  if (t) {
    auto ix = track(t, x);
    if (ix >= 0) {
      record(t, OpKind::maxpool2, {ix}, out, {x.detach()}, 0, 0, std::move(argmax));
    }
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [batch x classes], got " +
                     shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (c < 2) {
    throw ContractError("cross_entropy: need at least 2 classes, got " + std::to_string(c));
  }
  if (n == 0 || labels.size() != n) {
    throw ContractError("cross_entropy: batch of " + std::to_string(n) + " rows vs " +
                        std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> ylab(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range [0, " + std::to_string(c) + ")");
    }
    ylab[i] = static_cast<std::size_t>(labels[i]);
  }

  const auto& lv = logits.values();
  Tensor probs({n, c});
  auto& pv = probs.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      pv[i * c + j] = std::exp(row[j] - m);
      sum += pv[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) pv[i * c + j] /= sum;
    total += (m + std::log(sum)) - row[ylab[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  Tape* t = Tape::active();
  if (t) {
    auto il = track(t, logits);
    if (il >= 0) {
      record(t, OpKind::cross_entropy, {il}, out, {probs}, 0, 0, std::move(ylab));
    }
  }
  return out;
}

}  // namespace nnprat
