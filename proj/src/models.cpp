#include "nnprat/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "nnprat/errors.hpp"
#include "nnprat/rng.hpp"

namespace nnprat {

namespace {

constexpr std::size_t kConv1Out = 8;
constexpr std::size_t kConv2Out = 16;
constexpr std::size_t kKernel = 3;
constexpr std::size_t kFcWidth = 64;

struct ConvPlanDims {
  std::size_t h1, w1, h2, w2, h3, w3, h4, w4, flat;
};

ConvPlanDims conv_plan(const Shape& in) {
  ConvPlanDims d{};
  const std::size_t h = in[1], w = in[2];
  d.h1 = h >= kKernel ? h - kKernel + 1 : 0;
  d.w1 = w >= kKernel ? w - kKernel + 1 : 0;
  d.h2 = d.h1 / 2;
  d.w2 = d.w1 / 2;
  d.h3 = d.h2 >= kKernel ? d.h2 - kKernel + 1 : 0;
  d.w3 = d.w2 >= kKernel ? d.w2 - kKernel + 1 : 0;
  d.h4 = d.h3 / 2;
  d.w4 = d.w3 / 2;
  d.flat = kConv2Out * d.h4 * d.w4;
  return d;
}

Tensor he_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = std * rng.normal();
  return t;
}

}  // namespace

void NetworkSpec::validate() const {
  std::vector<std::string> issues;
  if (kind != "mlp" && kind != "cnn-small") {
    issues.push_back("kind must be 'mlp' or 'cnn-small', got '" + kind + "'");
  }
  if (num_classes < 2) {
    issues.push_back("num_classes must be >= 2, got " + std::to_string(num_classes));
  }
  if (kind == "mlp") {
    if (input_shape.size() != 1 || input_shape[0] == 0) {
      issues.push_back("mlp input_shape must be a single positive extent, got " +
                       shape_str(input_shape));
    }
    for (std::size_t w : hidden) {
      if (w == 0) issues.push_back("hidden widths must be >= 1");
    }
  } else if (kind == "cnn-small") {
    if (input_shape.size() != 3 || input_shape[0] == 0 || input_shape[1] == 0 ||
        input_shape[2] == 0) {
      issues.push_back("cnn-small input_shape must be {channels, h, w}, got " +
                       shape_str(input_shape));
    } else if (conv_plan(input_shape).flat == 0) {
      issues.push_back("cnn-small input " + shape_str(input_shape) +
                       " is too small for the conv/pool plan");
    }
    if (!hidden.empty()) {
      issues.push_back("cnn-small uses a fixed plan; hidden widths must be empty");
    }
  }
  if (!issues.empty()) {
    std::string msg = "network spec invalid:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw SpecError(msg);
  }
}

std::size_t NetworkSpec::input_size() const { return shape_size(input_shape); }

std::size_t NetworkSpec::penultimate_size() const {
  if (kind == "cnn-small") return kFcWidth;
  return hidden.empty() ? input_size() : hidden.back();
}

Network Network::init(const NetworkSpec& spec) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  Rng rng(spec.seed);

  auto push_linear = [&](std::size_t in, std::size_t out) {
    net.params_.push_back(he_tensor({in, out}, in, rng));
    net.params_.push_back(Tensor({out}));
  };

  if (spec.kind == "mlp") {
    std::size_t in = spec.input_size();
    for (std::size_t w : spec.hidden) {
      push_linear(in, w);
      in = w;
    }
    push_linear(in, spec.num_classes);
  } else {
    const std::size_t ci = spec.input_shape[0];
    net.params_.push_back(
        he_tensor({kConv1Out, ci, kKernel, kKernel}, ci * kKernel * kKernel, rng));
    net.params_.push_back(Tensor({kConv1Out}));
    net.params_.push_back(he_tensor({kConv2Out, kConv1Out, kKernel, kKernel},
                                    kConv1Out * kKernel * kKernel, rng));
    net.params_.push_back(Tensor({kConv2Out}));
    const std::size_t flat = conv_plan(spec.input_shape).flat;
    push_linear(flat, kFcWidth);
    push_linear(kFcWidth, spec.num_classes);
  }

  net.set_trainable(true);
  return net;
}

ForwardResult Network::forward(const Tensor& x) const {
  if (params_.empty()) throw ContractError("network: not initialized");

  if (spec_.kind == "mlp") {
    if (x.rank() != 2 || x.dim(1) != spec_.input_size()) {
      throw ShapeError("network: expected [batch x " + std::to_string(spec_.input_size()) +
                       "], got " + shape_str(x.shape()));
    }
    Tensor h = x;
    const std::size_t layers = params_.size() / 2;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      h = relu(add_bias_row(matmul(h, params_[2 * l]), params_[2 * l + 1]));
    }
    Tensor logits =
        add_bias_row(matmul(h, params_[2 * (layers - 1)]), params_[2 * layers - 1]);
    return {h, logits};
  }

  // cnn-small
  const std::size_t ci = spec_.input_shape[0];
  const std::size_t ih = spec_.input_shape[1];
  const std::size_t iw = spec_.input_shape[2];
  Tensor img;
  if (x.rank() == 2 && x.dim(1) == spec_.input_size()) {
    img = reshape(x, {x.dim(0), ci, ih, iw});
  } else if (x.rank() == 4 && x.dim(1) == ci && x.dim(2) == ih && x.dim(3) == iw) {
    img = x;
  } else {
    throw ShapeError("network: input " + shape_str(x.shape()) + " does not match " +
                     shape_str(spec_.input_shape));
  }
  Tensor h = maxpool2(relu(conv2d(img, params_[0], params_[1])));
  h = maxpool2(relu(conv2d(h, params_[2], params_[3])));
  h = flatten_rows(h);
  Tensor pen = relu(add_bias_row(matmul(h, params_[4]), params_[5]));
  Tensor logits = add_bias_row(matmul(pen, params_[6]), params_[7]);
  return {pen, logits};
}

Tensor Network::last_layer_weights() const {
  if (params_.size() < 2) throw ContractError("network: not initialized");
  const Tensor& w = params_[params_.size() - 2];  // [m x C]
  const std::size_t m = w.dim(0), c = w.dim(1);
  Tensor out({c, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.mut(j * m + i) = w.at(i * c + j);
  }
  return out;
}

Tensor Network::last_layer_bias() const {
  if (params_.empty()) throw ContractError("network: not initialized");
  return params_.back().clone();
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void Network::set_trainable(bool b) {
  for (auto& p : params_) p.set_requires_grad(b);
}

Network Network::frozen_view() const {
  Network net;
  net.spec_ = spec_;
  net.params_ = params_;  // shallow copies sharing the buffers
  net.set_trainable(false);
  return net;
}

Network Network::clone() const {
  Network net;
  net.spec_ = spec_;
  net.params_.reserve(params_.size());
  for (const auto& p : params_) {
    net.params_.push_back(p.clone());
    net.params_.back().set_requires_grad(p.requires_grad());
  }
  return net;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "NNPR", u32 version, spec descriptor, then each
// parameter tensor (rank, extents, raw values). All integers and doubles
// little-endian.

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw TruncatedFileError("checkpoint: unexpected end of file");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw TruncatedFileError("checkpoint: unexpected end of file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) {
    throw TruncatedFileError("checkpoint: unexpected end of file");
  }
  return s;
}

}  // namespace

void Network::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");

  os.write("NNPR", 4);
  put_u32(os, kVersion);
  put_string(os, spec_.kind);
  put_u32(os, static_cast<std::uint32_t>(spec_.input_shape.size()));
  for (auto d : spec_.input_shape) put_u64(os, d);
  put_u32(os, static_cast<std::uint32_t>(spec_.hidden.size()));
  for (auto d : spec_.hidden) put_u64(os, d);
  put_u64(os, spec_.num_classes);
  put_u64(os, spec_.seed);

  put_u32(os, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    put_u32(os, static_cast<std::uint32_t>(p.rank()));
    for (std::size_t i = 0; i < p.rank(); ++i) put_u64(os, p.dim(i));
    for (double v : p.values()) put_f64(os, v);
  }
  if (!os) throw FormatError("checkpoint: write to '" + path + "' failed");
}

Network Network::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");

  char magic[4];
  if (!is.read(magic, 4)) throw TruncatedFileError("checkpoint: unexpected end of file");
  if (std::memcmp(magic, "NNPR", 4) != 0) {
    throw BadMagicError("checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }

  NetworkSpec spec;
  spec.kind = get_string(is);
  spec.input_shape.resize(get_u32(is));
  for (auto& d : spec.input_shape) d = get_u64(is);
  spec.hidden.resize(get_u32(is));
  for (auto& d : spec.hidden) d = get_u64(is);
  spec.num_classes = get_u64(is);
  spec.seed = get_u64(is);

  Network net = Network::init(spec);
  const std::uint32_t count = get_u32(is);
  if (count != net.params_.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(net.params_.size()) +
                      " parameter tensors, file has " + std::to_string(count));
  }
  for (auto& p : net.params_) {
    const std::uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(is);
    if (shape != p.shape()) {
      throw FormatError("checkpoint: tensor shape " + shape_str(shape) +
                        " does not match spec shape " + shape_str(p.shape()));
    }
    for (auto& v : p.values()) v = get_f64(is);
  }
  return net;
}

}  // namespace nnprat
