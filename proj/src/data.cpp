#include "nnprat/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "nnprat/errors.hpp"
#include "nnprat/rng.hpp"

namespace nnprat {

namespace {

std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

}  // namespace

void Dataset::validate() const {
  if (!inputs.defined() || inputs.rank() != 2) {
    throw ContractError("dataset inputs must be a defined [n x d] tensor");
  }
  if (labels.size() != inputs.dim(0)) {
    throw ContractError("dataset has " + std::to_string(inputs.dim(0)) + " rows but " +
                        std::to_string(labels.size()) + " labels");
  }
  if (num_classes == 0) throw ContractError("dataset num_classes must be >= 1");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " at row " +
                          std::to_string(i) + " is outside [0, " +
                          std::to_string(num_classes) + ")");
    }
  }
  if (split != "train" && split != "test") {
    throw ContractError("dataset split must be 'train' or 'test', got '" + split + "'");
  }
  if (!sample_shape.empty() && shape_product(sample_shape) != inputs.dim(1)) {
    throw ContractError("sample_shape " + shape_str(sample_shape) + " does not flatten to " +
                        std::to_string(inputs.dim(1)));
  }
  const auto& v = inputs.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0 && v[i] <= 1.0)) {
      throw ContractError("input value " + std::to_string(v[i]) + " at flat index " +
                          std::to_string(i) + " is outside [0,1]");
    }
  }
}

void GaussianSpec::validate() const {
  std::vector<std::string> issues;
  if (num_classes < 2) {
    issues.push_back("num_classes must be >= 2, got " + std::to_string(num_classes));
  }
  if (means.size() != num_classes) {
    issues.push_back("means must list one 2-D point per class (" +
                     std::to_string(means.size()) + " given for " +
                     std::to_string(num_classes) + " classes)");
  }
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      if (means[a] == means[b]) {
        issues.push_back("means for classes " + std::to_string(a) + " and " +
                         std::to_string(b) + " coincide");
      }
    }
  }
  if (!(sigma > 0.0)) issues.push_back("sigma must be > 0");
  if (samples_per_class == 0) issues.push_back("samples_per_class must be >= 1");
  if (!issues.empty()) {
    std::string msg = "invalid gaussian spec:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw SpecError(msg);
  }
}

Dataset gen_gaussian(const GaussianSpec& spec) {
  spec.validate();
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  Dataset out;
  out.inputs = Tensor::zeros({n, 2});
  out.labels.resize(n);
  out.num_classes = spec.num_classes;
  out.sample_shape = {2};

  Rng rng(spec.seed);
  auto* buf = out.inputs.values().data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++row) {
      buf[row * 2 + 0] = spec.means[c][0] + spec.sigma * rng.normal();
      buf[row * 2 + 1] = spec.means[c][1] + spec.sigma * rng.normal();
      out.labels[row] = static_cast<int>(c);
    }
  }

  out.rescale_lo.assign(2, 0.0);
  out.rescale_range.assign(2, 0.0);
  for (std::size_t d = 0; d < 2; ++d) {
    double lo = buf[d];
    double hi = buf[d];
    for (std::size_t r = 1; r < n; ++r) {
      lo = std::min(lo, buf[r * 2 + d]);
      hi = std::max(hi, buf[r * 2 + d]);
    }
    double range = hi - lo;
    out.rescale_lo[d] = lo;
    out.rescale_range[d] = range;
    for (std::size_t r = 0; r < n; ++r) {
      double& v = buf[r * 2 + d];
      v = range > 0.0 ? (v - lo) / range : 0.5;
      v = std::min(1.0, std::max(0.0, v));  // shave one-ulp overshoot
    }
  }
  return out;
}

void SynthDigitsSpec::validate() const {
  std::vector<std::string> issues;
  if (num_classes < 2 || num_classes > 10) {
    issues.push_back("num_classes must be in [2,10], got " + std::to_string(num_classes));
  }
  if (samples_per_class == 0) issues.push_back("samples_per_class must be >= 1");
  if (!(noise >= 0.0 && noise <= 0.5)) issues.push_back("noise must be in [0, 0.5]");
  if (!issues.empty()) {
    std::string msg = "invalid synth digits spec:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw SpecError(msg);
  }
}

namespace {

struct Seg {
  double x0, y0, x1, y1;
};

// Seven-segment endpoints in glyph coordinates ([0,1] square).
constexpr Seg kSegments[7] = {
    {0.25, 0.12, 0.75, 0.12},  // A: top
    {0.75, 0.12, 0.75, 0.50},  // B: upper right
    {0.75, 0.50, 0.75, 0.88},  // C: lower right
    {0.25, 0.88, 0.75, 0.88},  // D: bottom
    {0.25, 0.50, 0.25, 0.88},  // E: lower left
    {0.25, 0.12, 0.25, 0.50},  // F: upper left
    {0.25, 0.50, 0.75, 0.50},  // G: middle
};

// Segment masks (bit i = segment i above) for digits 0..9.
constexpr unsigned kDigitSegs[10] = {
    0b0111111,  // 0: ABCDEF
    0b0000110,  // 1: BC
    0b1011011,  // 2: ABDEG
    0b1001111,  // 3: ABCDG
    0b1100110,  // 4: BCFG
    0b1101101,  // 5: ACDFG
    0b1111101,  // 6: ACDEFG
    0b0000111,  // 7: ABC
    0b1111111,  // 8: all
    0b1101111,  // 9: ABCDFG
};

double point_segment_dist(double px, double py, const Seg& s) {
  double vx = s.x1 - s.x0;
  double vy = s.y1 - s.y0;
  double wx = px - s.x0;
  double wy = py - s.y0;
  double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? std::min(1.0, std::max(0.0, (wx * vx + wy * vy) / len2)) : 0.0;
  double dx = px - (s.x0 + t * vx);
  double dy = py - (s.y0 + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset gen_synth_digits(const SynthDigitsSpec& spec) {
  spec.validate();
  constexpr std::size_t kSide = 28;
  constexpr double kStroke = 0.055;  // half-width of a stroke, glyph units
  constexpr double kSoft = 0.03;     // linear falloff band beyond the stroke

  const std::size_t n = spec.num_classes * spec.samples_per_class;
  Dataset out;
  out.inputs = Tensor::zeros({n, kSide * kSide});
  out.labels.resize(n);
  out.num_classes = spec.num_classes;
  out.sample_shape = {1, kSide, kSide};

  Rng rng(spec.seed);
  auto* buf = out.inputs.values().data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    unsigned mask = kDigitSegs[c];
    for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++row) {
      double scale = rng.uniform(0.85, 1.15);
      double dx = rng.uniform(-0.07, 0.07);
      double dy = rng.uniform(-0.07, 0.07);
      // Strokes stay near-saturated like scanned ink; geometry, not contrast,
      // carries the per-sample variation.
      double brightness = rng.uniform(0.92, 1.0);
      double* img = buf + row * kSide * kSide;
      for (std::size_t py = 0; py < kSide; ++py) {
        for (std::size_t px = 0; px < kSide; ++px) {
          // Map the pixel center back into glyph coordinates.
          double ux = ((px + 0.5) / kSide - 0.5 - dx) / scale + 0.5;
          double uy = ((py + 0.5) / kSide - 0.5 - dy) / scale + 0.5;
          double dist = 1e30;
          for (int s = 0; s < 7; ++s) {
            if (mask & (1u << s)) {
              dist = std::min(dist, point_segment_dist(ux, uy, kSegments[s]));
            }
          }
          double v = brightness * std::min(1.0, std::max(0.0, (kStroke + kSoft - dist) / kSoft));
          if (spec.noise > 0.0) v += rng.uniform(-spec.noise, spec.noise);
          img[py * kSide + px] = std::min(1.0, std::max(0.0, v));
        }
      }
      out.labels[row] = static_cast<int>(c);
    }
  }
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t be_u32(const std::vector<unsigned char>& buf, std::size_t off,
                     const std::string& path) {
  if (off + 4 > buf.size()) {
    throw TruncatedFileError("'" + path + "' ends inside a header field at byte " +
                             std::to_string(off));
  }
  return (std::uint32_t(buf[off]) << 24) | (std::uint32_t(buf[off + 1]) << 16) |
         (std::uint32_t(buf[off + 2]) << 8) | std::uint32_t(buf[off + 3]);
}

void put_be_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto img = read_file(images_path);
  auto lab = read_file(labels_path);

  std::uint32_t img_magic = be_u32(img, 0, images_path);
  if (img_magic != kImagesMagic) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "0x%08x", img_magic);
    throw BadMagicError("'" + images_path + "' has magic " + hex +
                        ", expected 0x00000803 (idx images)");
  }
  std::uint32_t lab_magic = be_u32(lab, 0, labels_path);
  if (lab_magic != kLabelsMagic) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "0x%08x", lab_magic);
    throw BadMagicError("'" + labels_path + "' has magic " + hex +
                        ", expected 0x00000801 (idx labels)");
  }

  std::uint32_t n_img = be_u32(img, 4, images_path);
  std::uint32_t rows = be_u32(img, 8, images_path);
  std::uint32_t cols = be_u32(img, 12, images_path);
  std::uint32_t n_lab = be_u32(lab, 4, labels_path);
  if (n_img != n_lab) {
    throw CountMismatchError("'" + images_path + "' holds " + std::to_string(n_img) +
                             " images but '" + labels_path + "' holds " +
                             std::to_string(n_lab) + " labels");
  }
  std::size_t pixels = std::size_t(n_img) * rows * cols;
  if (img.size() < 16 + pixels) {
    throw TruncatedFileError("'" + images_path + "' holds " + std::to_string(img.size() - 16) +
                             " pixel bytes, header promises " + std::to_string(pixels));
  }
  if (lab.size() < 8 + n_lab) {
    throw TruncatedFileError("'" + labels_path + "' holds " + std::to_string(lab.size() - 8) +
                             " label bytes, header promises " + std::to_string(n_lab));
  }

  Dataset out;
  out.inputs = Tensor::zeros({n_img, std::size_t(rows) * cols});
  out.labels.resize(n_img);
  out.sample_shape = {1, rows, cols};
  auto* buf = out.inputs.values().data();
  for (std::size_t i = 0; i < pixels; ++i) {
    buf[i] = img[16 + i] / 255.0;
  }
  int max_label = 0;
  for (std::size_t i = 0; i < n_lab; ++i) {
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = static_cast<std::size_t>(max_label) + 1;
  return out;
}

void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path) {
  data.validate();
  std::size_t rows = 0, cols = 0;
  if (data.sample_shape.size() == 3 && data.sample_shape[0] == 1) {
    rows = data.sample_shape[1];
    cols = data.sample_shape[2];
  } else if (data.sample_shape.size() == 2) {
    rows = data.sample_shape[0];
    cols = data.sample_shape[1];
  } else {
    throw ContractError("idx output needs a single-channel image sample_shape, got " +
                        shape_str(data.sample_shape));
  }

  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw Error("cannot open '" + images_path + "' for writing");
  put_be_u32(img, kImagesMagic);
  put_be_u32(img, static_cast<std::uint32_t>(data.size()));
  put_be_u32(img, static_cast<std::uint32_t>(rows));
  put_be_u32(img, static_cast<std::uint32_t>(cols));
  const auto& v = data.inputs.values();
  std::vector<unsigned char> bytes(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    long b = std::lround(v[i] * 255.0);
    bytes[i] = static_cast<unsigned char>(std::min(255L, std::max(0L, b)));
  }
  img.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!img) throw Error("write to '" + images_path + "' failed");

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw Error("cannot open '" + labels_path + "' for writing");
  put_be_u32(lab, kLabelsMagic);
  put_be_u32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) {
    unsigned char b = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!lab) throw Error("write to '" + labels_path + "' failed");
}

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                           std::size_t epoch) {
  data.validate();
  if (batch_size == 0) throw ContractError("batch_size must be >= 1");

  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(perm);

  const std::size_t d = data.input_size();
  const auto* src = data.inputs.values().data();
  std::vector<Batch> out;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    std::size_t count = std::min(batch_size, perm.size() - start);
    Batch b;
    b.inputs = Tensor::zeros({count, d});
    b.labels.resize(count);
    auto* dst = b.inputs.values().data();
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t r = perm[start + i];
      std::copy(src + r * d, src + (r + 1) * d, dst + i * d);
      b.labels[i] = data.labels[r];
    }
    out.push_back(std::move(b));
  }
  return out;
}

Dataset subset_classes(const Dataset& data, const std::vector<int>& classes) {
  data.validate();
  if (classes.empty()) throw ContractError("subset_classes needs at least one class");
  std::set<int> seen;
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= data.num_classes) {
      throw ContractError("class " + std::to_string(c) + " is outside [0, " +
                          std::to_string(data.num_classes) + ")");
    }
    if (!seen.insert(c).second) {
      throw ContractError("class " + std::to_string(c) + " listed twice");
    }
  }

  std::vector<int> remap(data.num_classes, -1);
  for (std::size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = static_cast<int>(i);

  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (remap[data.labels[r]] >= 0) keep.push_back(r);
  }

  const std::size_t d = data.input_size();
  Dataset out;
  out.inputs = Tensor::zeros({keep.size(), d});
  out.labels.resize(keep.size());
  out.num_classes = classes.size();
  out.split = data.split;
  out.sample_shape = data.sample_shape;
  const auto* src = data.inputs.values().data();
  auto* dst = out.inputs.values().data();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy(src + keep[i] * d, src + (keep[i] + 1) * d, dst + i * d);
    out.labels[i] = remap[data.labels[keep[i]]];
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction,
                                          std::uint64_t seed) {
  data.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ContractError("test_fraction must be in (0,1)");
  }
  std::size_t n_test = static_cast<std::size_t>(std::llround(data.size() * test_fraction));
  if (n_test == 0 || n_test >= data.size()) {
    throw ContractError("split would leave an empty part (n=" + std::to_string(data.size()) +
                        ", test_fraction=" + std::to_string(test_fraction) + ")");
  }

  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(perm);

  const std::size_t d = data.input_size();
  const auto* src = data.inputs.values().data();
  auto take = [&](std::size_t from, std::size_t count, const std::string& split) {
    Dataset part;
    part.inputs = Tensor::zeros({count, d});
    part.labels.resize(count);
    part.num_classes = data.num_classes;
    part.split = split;
    part.sample_shape = data.sample_shape;
    part.rescale_lo = data.rescale_lo;
    part.rescale_range = data.rescale_range;
    auto* dst = part.inputs.values().data();
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t r = perm[from + i];
      std::copy(src + r * d, src + (r + 1) * d, dst + i * d);
      part.labels[i] = data.labels[r];
    }
    return part;
  };
  std::size_t n_train = data.size() - n_test;
  return {take(0, n_train, "train"), take(n_train, n_test, "test")};
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const std::size_t d = data.input_size();
  for (std::size_t j = 0; j < d; ++j) out << "x" << j << ",";
  out << "label\n";
  const auto* v = data.inputs.values().data();
  char num[40];
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(num, sizeof(num), "%.17g", v[r * d + j]);
      out << num << ",";
    }
    out << data.labels[r] << "\n";
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace nnprat
