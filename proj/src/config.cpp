#include "nnprat/config.hpp"

#include <array>
#include <cctype>
#include <cerrno>
#include <climits>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "nnprat/errors.hpp"

namespace nnprat {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool to_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) return false;
  out = v;
  return true;
}

bool to_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s[0] == '-' || s[0] == '+') return false;
  errno = 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE) return false;
  out = v;
  return true;
}

bool to_size(const std::string& s, std::size_t& out) {
  std::uint64_t v = 0;
  if (!to_u64(s, v)) return false;
  out = static_cast<std::size_t>(v);
  return true;
}

bool to_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE) return false;
  if (v < INT_MIN || v > INT_MAX) return false;
  out = static_cast<int>(v);
  return true;
}

bool to_bool(const std::string& s, bool& out) {
  if (s == "true") {
    out = true;
    return true;
  }
  if (s == "false") {
    out = false;
    return true;
  }
  return false;
}

// Shortest decimal form that parses back to exactly the same double.
std::string fmt_double(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

struct RawKv {
  std::string key;
  std::string value;
  std::size_t line;
};

struct RawSection {
  std::string name;
  std::size_t line;
  std::vector<RawKv> kvs;
};

std::vector<RawSection> tokenize(const std::string& text, std::vector<std::string>& issues) {
  std::vector<RawSection> sections;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        issues.push_back("line " + std::to_string(lineno) + ": bad section header '" + line + "'");
        continue;
      }
      std::string name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) {
        issues.push_back("line " + std::to_string(lineno) + ": empty section name");
        continue;
      }
      sections.push_back({name, lineno, {}});
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      issues.push_back("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line +
                       "'");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      issues.push_back("line " + std::to_string(lineno) + ": missing key before '='");
      continue;
    }
    if (value.empty()) {
      issues.push_back("line " + std::to_string(lineno) + ": empty value for '" + key + "'");
      continue;
    }
    if (sections.empty()) {
      issues.push_back("line " + std::to_string(lineno) + ": key '" + key +
                       "' appears before any [section]");
      continue;
    }
    for (const auto& kv : sections.back().kvs) {
      if (kv.key == key) {
        issues.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "' in [" +
                         sections.back().name + "]");
      }
    }
    sections.back().kvs.push_back({key, value, lineno});
  }
  return sections;
}

// Typed key consumption for one section; unconsumed keys become issues.
class Fields {
 public:
  Fields(const RawSection& sec, std::vector<std::string>& issues)
      : sec_(sec), issues_(issues) {}

  bool get_str(const std::string& key, std::string& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    out = kv->value;
    return true;
  }

  bool get_double(const std::string& key, double& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    if (!to_double(kv->value, out)) return bad(*kv, "a number");
    return true;
  }

  bool get_size(const std::string& key, std::size_t& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    if (!to_size(kv->value, out)) return bad(*kv, "a non-negative integer");
    return true;
  }

  bool get_u64(const std::string& key, std::uint64_t& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    if (!to_u64(kv->value, out)) return bad(*kv, "a non-negative integer");
    return true;
  }

  bool get_bool(const std::string& key, bool& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    if (!to_bool(kv->value, out)) return bad(*kv, "true or false");
    return true;
  }

  bool get_doubles(const std::string& key, std::vector<double>& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    std::vector<double> vals;
    for (const auto& tok : split_ws(kv->value)) {
      double v = 0;
      if (!to_double(tok, v)) return bad(*kv, "numbers separated by spaces");
      vals.push_back(v);
    }
    out = std::move(vals);
    return true;
  }

  bool get_sizes(const std::string& key, std::vector<std::size_t>& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    std::vector<std::size_t> vals;
    for (const auto& tok : split_ws(kv->value)) {
      std::size_t v = 0;
      if (!to_size(tok, v)) return bad(*kv, "non-negative integers separated by spaces");
      vals.push_back(v);
    }
    out = std::move(vals);
    return true;
  }

  bool get_u64s(const std::string& key, std::vector<std::uint64_t>& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    std::vector<std::uint64_t> vals;
    for (const auto& tok : split_ws(kv->value)) {
      std::uint64_t v = 0;
      if (!to_u64(tok, v)) return bad(*kv, "non-negative integers separated by spaces");
      vals.push_back(v);
    }
    out = std::move(vals);
    return true;
  }

  bool get_ints(const std::string& key, std::vector<int>& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    std::vector<int> vals;
    for (const auto& tok : split_ws(kv->value)) {
      int v = 0;
      if (!to_int(tok, v)) return bad(*kv, "integers separated by spaces");
      vals.push_back(v);
    }
    out = std::move(vals);
    return true;
  }

  // "x y ; x y ; ..." — one 2-d point per semicolon-separated group.
  bool get_points(const std::string& key, std::vector<std::array<double, 2>>& out) {
    const RawKv* kv = find(key);
    if (!kv) return false;
    std::vector<std::array<double, 2>> pts;
    std::string group;
    std::istringstream in(kv->value);
    bool ok = true;
    while (std::getline(in, group, ';')) {
      auto toks = split_ws(group);
      double x = 0, y = 0;
      if (toks.size() != 2 || !to_double(toks[0], x) || !to_double(toks[1], y)) {
        ok = false;
        break;
      }
      pts.push_back({x, y});
    }
    if (!ok || pts.empty()) return bad(*kv, "points as 'x y ; x y'");
    out = std::move(pts);
    return true;
  }

  void finish() {
    for (const auto& kv : sec_.kvs) {
      if (!used_.count(kv.key)) {
        issues_.push_back("[" + sec_.name + "]: unknown key '" + kv.key + "' (line " +
                          std::to_string(kv.line) + ")");
      }
    }
  }

 private:
  const RawKv* find(const std::string& key) {
    used_.insert(key);
    for (const auto& kv : sec_.kvs) {
      if (kv.key == key) return &kv;
    }
    return nullptr;
  }

  bool bad(const RawKv& kv, const std::string& want) {
    issues_.push_back("[" + sec_.name + "]: '" + kv.key + "' must be " + want + ", got '" +
                      kv.value + "' (line " + std::to_string(kv.line) + ")");
    return false;
  }

  const RawSection& sec_;
  std::vector<std::string>& issues_;
  std::set<std::string> used_;
};

void read_dataset(const RawSection& sec, DatasetConfig& d, std::vector<std::string>& issues) {
  Fields f(sec, issues);
  f.get_str("kind", d.kind);
  bool g = d.kind == "gaussian";
  bool s = d.kind == "synth-digits";
  bool x = d.kind == "idx";
  if (!g && !s && !x) {
    issues.push_back("[dataset]: kind must be gaussian, synth-digits, or idx, got '" + d.kind +
                     "'");
  }
  f.get_ints("classes", d.classes);
  f.get_size("train_cap", d.train_cap);
  f.get_size("test_cap", d.test_cap);
  if (g || s || (!g && !s && !x)) {
    f.get_double("test_fraction", d.test_fraction);
  }
  if (g) {
    f.get_size("num_classes", d.gaussian.num_classes);
    f.get_points("means", d.gaussian.means);
    f.get_double("sigma", d.gaussian.sigma);
    f.get_size("samples_per_class", d.gaussian.samples_per_class);
    f.get_u64("seed", d.gaussian.seed);
  } else if (s) {
    f.get_size("num_classes", d.digits.num_classes);
    f.get_size("samples_per_class", d.digits.samples_per_class);
    f.get_double("noise", d.digits.noise);
    f.get_u64("seed", d.digits.seed);
  } else if (x) {
    f.get_str("train_images", d.train_images);
    f.get_str("train_labels", d.train_labels);
    f.get_str("test_images", d.test_images);
    f.get_str("test_labels", d.test_labels);
  }
  f.finish();
}

void read_network(const RawSection& sec, ExperimentConfig& cfg, std::vector<std::string>& issues) {
  Fields f(sec, issues);
  f.get_str("kind", cfg.network.kind);
  f.get_sizes("hidden", cfg.network.hidden);
  if (f.get_u64("seed", cfg.network.seed)) cfg.network_seed_set = true;
  f.finish();
}

void read_train(const RawSection& sec, TrainSpec& t, std::vector<std::string>& issues) {
  Fields f(sec, issues);
  f.get_size("epochs", t.epochs);
  f.get_size("batch_size", t.batch_size);
  f.get_double("lr", t.lr);
  f.get_double("momentum", t.momentum);
  f.get_double("weight_decay", t.weight_decay);
  f.get_str("method", t.method);
  f.get_u64("seed", t.seed);
  f.get_size("eval_cap", t.eval_cap);
  f.get_str("schedule", t.schedule.kind);
  f.get_sizes("milestones", t.schedule.milestones);
  f.get_double("factor", t.schedule.factor);
  f.finish();
}

void read_attack_keys(Fields& f, AttackSpec& a) {
  f.get_double("epsilon", a.epsilon);
  f.get_double("alpha", a.alpha);
  f.get_size("steps", a.steps);
  f.get_str("init", a.init);
  f.get_str("direction", a.direction);
  f.get_double("clamp_lo", a.clamp_lo);
  f.get_double("clamp_hi", a.clamp_hi);
  f.get_u64("seed", a.seed);
}

void read_attack(const RawSection& sec, AttackSpec& a, std::vector<std::string>& issues) {
  Fields f(sec, issues);
  read_attack_keys(f, a);
  f.finish();
}

void read_projection(const RawSection& sec, ProjectionSpec& p, std::vector<std::string>& issues) {
  Fields f(sec, issues);
  f.get_double("lambda", p.lambda);
  f.get_double("beta", p.beta);
  f.get_str("stage", p.stage);
  f.get_str("norm_exponent", p.norm_exponent);
  f.get_str("neighbor_source", p.neighbor_source);
  f.get_bool("detach_neighbor", p.detach_neighbor);
  f.finish();
}

void read_eval(const RawSection& sec, std::vector<NamedAttack>& out,
               std::vector<std::string>& issues) {
  std::string name = sec.name.substr(std::strlen("eval."));
  if (name.empty()) {
    issues.push_back("[" + sec.name + "]: attack name after 'eval.' is empty");
    return;
  }
  NamedAttack na;
  na.name = name;
  std::string kind = "pgd";
  Fields f(sec, issues);
  f.get_str("kind", kind);
  if (kind == "fgsm") {
    f.get_double("epsilon", na.spec.epsilon);
    f.get_double("clamp_lo", na.spec.clamp_lo);
    f.get_double("clamp_hi", na.spec.clamp_hi);
    na.spec.steps = 1;
    na.spec.alpha = na.spec.epsilon;
    na.spec.init = "zero";
    na.spec.direction = "ascent";
    na.spec.seed = 0;
  } else if (kind == "pgd") {
    read_attack_keys(f, na.spec);
  } else {
    issues.push_back("[" + sec.name + "]: kind must be pgd or fgsm, got '" + kind + "'");
  }
  f.finish();
  out.push_back(std::move(na));
}

void read_ablation(const RawSection& sec, AblationGrid& g, std::vector<std::string>& issues) {
  Fields f(sec, issues);
  f.get_doubles("lambda", g.lambdas);
  f.get_doubles("beta", g.betas);
  f.get_u64s("seeds", g.seeds);
  f.get_size("cap", g.cap);
  f.finish();
}

void read_output(const RawSection& sec, std::string& dir, std::vector<std::string>& issues) {
  Fields f(sec, issues);
  f.get_str("dir", dir);
  f.finish();
}

// Breaks a SpecError message ("invalid X spec:\n  - a\n  - b") into the
// individual items, re-prefixed for the merged report.
void merge_spec_issues(const std::string& prefix, const std::string& what,
                       std::vector<std::string>& issues) {
  std::size_t pos = what.find("\n  - ");
  if (pos == std::string::npos) {
    issues.push_back(prefix + ": " + what);
    return;
  }
  while (pos != std::string::npos) {
    std::size_t start = pos + 5;
    std::size_t next = what.find("\n  - ", start);
    std::size_t len = (next == std::string::npos) ? std::string::npos : next - start;
    issues.push_back(prefix + ": " + what.substr(start, len));
    pos = next;
  }
}

void emit(std::string& out, const std::string& key, const std::string& value) {
  out += key + " = " + value + "\n";
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += " ";
    s += fmt_double(v[i]);
  }
  return s;
}

void emit_attack(std::string& out, const AttackSpec& a) {
  emit(out, "epsilon", fmt_double(a.epsilon));
  emit(out, "alpha", fmt_double(a.alpha));
  emit(out, "steps", std::to_string(a.steps));
  emit(out, "init", a.init);
  emit(out, "direction", a.direction);
  emit(out, "clamp_lo", fmt_double(a.clamp_lo));
  emit(out, "clamp_hi", fmt_double(a.clamp_hi));
  emit(out, "seed", std::to_string(a.seed));
}

}  // namespace

std::size_t AblationGrid::cardinality() const {
  auto axis = [](std::size_t n) { return n == 0 ? std::size_t{1} : n; };
  return axis(lambdas.size()) * axis(betas.size()) * axis(seeds.size());
}

std::vector<NamedAttack> default_eval_attacks(const AttackSpec& training_attack) {
  NamedAttack one;
  one.name = "fgsm";
  one.spec = training_attack;
  one.spec.steps = 1;
  one.spec.alpha = one.spec.epsilon;
  one.spec.init = "zero";
  one.spec.direction = "ascent";
  one.spec.seed = 0;
  NamedAttack twenty;
  twenty.name = "pgd20";
  twenty.spec = training_attack;
  twenty.spec.steps = 20;
  twenty.spec.init = "zero";
  twenty.spec.direction = "ascent";
  twenty.spec.seed = 0;
  return {std::move(one), std::move(twenty)};
}

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::string> issues;
  auto sections = tokenize(text, issues);
  ExperimentConfig cfg;
  bool saw_eval = false;
  std::set<std::string> seen;
  for (const auto& sec : sections) {
    if (!seen.insert(sec.name).second) {
      issues.push_back("duplicate section [" + sec.name + "] (line " + std::to_string(sec.line) +
                       ")");
      continue;
    }
    if (sec.name == "dataset") {
      read_dataset(sec, cfg.dataset, issues);
    } else if (sec.name == "network") {
      read_network(sec, cfg, issues);
    } else if (sec.name == "train") {
      read_train(sec, cfg.train, issues);
    } else if (sec.name == "attack") {
      read_attack(sec, cfg.train.attack, issues);
    } else if (sec.name == "projection") {
      read_projection(sec, cfg.train.projection, issues);
    } else if (sec.name.rfind("eval.", 0) == 0) {
      saw_eval = true;
      read_eval(sec, cfg.eval_attacks, issues);
    } else if (sec.name == "ablation") {
      read_ablation(sec, cfg.ablation, issues);
    } else if (sec.name == "output") {
      read_output(sec, cfg.output_dir, issues);
    } else {
      issues.push_back("unknown section [" + sec.name + "] (line " + std::to_string(sec.line) +
                       ")");
    }
  }
  if (!saw_eval) cfg.eval_attacks = default_eval_attacks(cfg.train.attack);
  if (!issues.empty()) throw ValidationError(std::move(issues));
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  out += "[dataset]\n";
  emit(out, "kind", cfg.dataset.kind);
  if (cfg.dataset.kind == "gaussian") {
    emit(out, "num_classes", std::to_string(cfg.dataset.gaussian.num_classes));
    std::string pts;
    for (std::size_t i = 0; i < cfg.dataset.gaussian.means.size(); ++i) {
      if (i) pts += " ; ";
      pts += fmt_double(cfg.dataset.gaussian.means[i][0]) + " " +
             fmt_double(cfg.dataset.gaussian.means[i][1]);
    }
    emit(out, "means", pts);
    emit(out, "sigma", fmt_double(cfg.dataset.gaussian.sigma));
    emit(out, "samples_per_class", std::to_string(cfg.dataset.gaussian.samples_per_class));
    emit(out, "seed", std::to_string(cfg.dataset.gaussian.seed));
    emit(out, "test_fraction", fmt_double(cfg.dataset.test_fraction));
  } else if (cfg.dataset.kind == "synth-digits") {
    emit(out, "num_classes", std::to_string(cfg.dataset.digits.num_classes));
    emit(out, "samples_per_class", std::to_string(cfg.dataset.digits.samples_per_class));
    emit(out, "noise", fmt_double(cfg.dataset.digits.noise));
    emit(out, "seed", std::to_string(cfg.dataset.digits.seed));
    emit(out, "test_fraction", fmt_double(cfg.dataset.test_fraction));
  } else if (cfg.dataset.kind == "idx") {
    emit(out, "train_images", cfg.dataset.train_images);
    emit(out, "train_labels", cfg.dataset.train_labels);
    emit(out, "test_images", cfg.dataset.test_images);
    emit(out, "test_labels", cfg.dataset.test_labels);
  }
  if (!cfg.dataset.classes.empty()) {
    std::string cls;
    for (std::size_t i = 0; i < cfg.dataset.classes.size(); ++i) {
      if (i) cls += " ";
      cls += std::to_string(cfg.dataset.classes[i]);
    }
    emit(out, "classes", cls);
  }
  if (cfg.dataset.train_cap) emit(out, "train_cap", std::to_string(cfg.dataset.train_cap));
  if (cfg.dataset.test_cap) emit(out, "test_cap", std::to_string(cfg.dataset.test_cap));

  out += "\n[network]\n";
  emit(out, "kind", cfg.network.kind);
  if (!cfg.network.hidden.empty()) {
    std::string h;
    for (std::size_t i = 0; i < cfg.network.hidden.size(); ++i) {
      if (i) h += " ";
      h += std::to_string(cfg.network.hidden[i]);
    }
    emit(out, "hidden", h);
  }
  if (cfg.network_seed_set) emit(out, "seed", std::to_string(cfg.network.seed));

  out += "\n[train]\n";
  emit(out, "epochs", std::to_string(cfg.train.epochs));
  emit(out, "batch_size", std::to_string(cfg.train.batch_size));
  emit(out, "lr", fmt_double(cfg.train.lr));
  emit(out, "momentum", fmt_double(cfg.train.momentum));
  emit(out, "weight_decay", fmt_double(cfg.train.weight_decay));
  emit(out, "method", cfg.train.method);
  emit(out, "seed", std::to_string(cfg.train.seed));
  emit(out, "eval_cap", std::to_string(cfg.train.eval_cap));
  emit(out, "schedule", cfg.train.schedule.kind);
  if (!cfg.train.schedule.milestones.empty()) {
    std::string ms;
    for (std::size_t i = 0; i < cfg.train.schedule.milestones.size(); ++i) {
      if (i) ms += " ";
      ms += std::to_string(cfg.train.schedule.milestones[i]);
    }
    emit(out, "milestones", ms);
  }
  emit(out, "factor", fmt_double(cfg.train.schedule.factor));

  out += "\n[attack]\n";
  emit_attack(out, cfg.train.attack);

  out += "\n[projection]\n";
  emit(out, "lambda", fmt_double(cfg.train.projection.lambda));
  emit(out, "beta", fmt_double(cfg.train.projection.beta));
  emit(out, "stage", cfg.train.projection.stage);
  emit(out, "norm_exponent", cfg.train.projection.norm_exponent);
  emit(out, "neighbor_source", cfg.train.projection.neighbor_source);
  emit(out, "detach_neighbor", cfg.train.projection.detach_neighbor ? "true" : "false");

  for (const auto& na : cfg.eval_attacks) {
    out += "\n[eval." + na.name + "]\n";
    emit(out, "kind", "pgd");
    emit_attack(out, na.spec);
  }

  bool grid = !cfg.ablation.lambdas.empty() || !cfg.ablation.betas.empty() ||
              !cfg.ablation.seeds.empty() || cfg.ablation.cap != 64;
  if (grid) {
    out += "\n[ablation]\n";
    if (!cfg.ablation.lambdas.empty()) emit(out, "lambda", join_doubles(cfg.ablation.lambdas));
    if (!cfg.ablation.betas.empty()) emit(out, "beta", join_doubles(cfg.ablation.betas));
    if (!cfg.ablation.seeds.empty()) {
      std::string s;
      for (std::size_t i = 0; i < cfg.ablation.seeds.size(); ++i) {
        if (i) s += " ";
        s += std::to_string(cfg.ablation.seeds[i]);
      }
      emit(out, "seeds", s);
    }
    emit(out, "cap", std::to_string(cfg.ablation.cap));
  }

  out += "\n[output]\n";
  emit(out, "dir", cfg.output_dir);
  return out;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> issues;

  if (dataset.kind == "gaussian") {
    try {
      dataset.gaussian.validate();
    } catch (const SpecError& e) {
      merge_spec_issues("dataset", e.what(), issues);
    }
  } else if (dataset.kind == "synth-digits") {
    try {
      dataset.digits.validate();
    } catch (const SpecError& e) {
      merge_spec_issues("dataset", e.what(), issues);
    }
  } else if (dataset.kind == "idx") {
    if (dataset.train_images.empty()) issues.push_back("dataset: train_images path is empty");
    if (dataset.train_labels.empty()) issues.push_back("dataset: train_labels path is empty");
    if (dataset.test_images.empty()) issues.push_back("dataset: test_images path is empty");
    if (dataset.test_labels.empty()) issues.push_back("dataset: test_labels path is empty");
  } else {
    issues.push_back("dataset: kind must be gaussian, synth-digits, or idx, got '" + dataset.kind +
                     "'");
  }
  if (dataset.kind != "idx" &&
      !(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
    issues.push_back("dataset: test_fraction must be in (0, 1), got " +
                     fmt_double(dataset.test_fraction));
  }
  if (!dataset.classes.empty()) {
    std::set<int> uniq;
    std::size_t limit = 0;  // known class count for generated kinds
    if (dataset.kind == "gaussian") limit = dataset.gaussian.num_classes;
    if (dataset.kind == "synth-digits") limit = dataset.digits.num_classes;
    for (int c : dataset.classes) {
      if (c < 0) issues.push_back("dataset: classes entries must be >= 0");
      if (limit && c >= static_cast<int>(limit)) {
        issues.push_back("dataset: class " + std::to_string(c) + " is out of range (" +
                         std::to_string(limit) + " classes)");
      }
      if (!uniq.insert(c).second) {
        issues.push_back("dataset: classes lists " + std::to_string(c) + " twice");
      }
    }
  }

  if (network.kind != "mlp" && network.kind != "cnn-small") {
    issues.push_back("network: kind must be mlp or cnn-small, got '" + network.kind + "'");
  }
  if (network.kind == "cnn-small" && !network.hidden.empty()) {
    issues.push_back("network: cnn-small takes no hidden widths");
  }
  if (network.kind == "mlp") {
    for (std::size_t w : network.hidden) {
      if (w == 0) {
        issues.push_back("network: hidden widths must be >= 1");
        break;
      }
    }
  }

  try {
    train.validate();
  } catch (const SpecError& e) {
    merge_spec_issues("train", e.what(), issues);
  }

  std::set<std::string> names;
  for (const auto& na : eval_attacks) {
    if (na.name.empty()) issues.push_back("eval: attack name is empty");
    for (char c : na.name) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') {
        issues.push_back("eval." + na.name + ": name may use letters, digits, '_', '-' only");
        break;
      }
    }
    if (!names.insert(na.name).second) {
      issues.push_back("eval." + na.name + ": duplicate attack name");
    }
    try {
      na.spec.validate();
    } catch (const SpecError& e) {
      merge_spec_issues("eval." + na.name, e.what(), issues);
    }
  }

  for (double lam : ablation.lambdas) {
    ProjectionSpec p = train.projection;
    p.lambda = lam;
    try {
      p.validate();
    } catch (const SpecError& e) {
      merge_spec_issues("ablation: lambda " + fmt_double(lam), e.what(), issues);
    }
  }
  for (double b : ablation.betas) {
    ProjectionSpec p = train.projection;
    p.beta = b;
    try {
      p.validate();
    } catch (const SpecError& e) {
      merge_spec_issues("ablation: beta " + fmt_double(b), e.what(), issues);
    }
  }
  if (ablation.cap == 0) {
    issues.push_back("ablation: cap must be >= 1");
  } else if (ablation.cardinality() > ablation.cap) {
    issues.push_back("ablation: grid has " + std::to_string(ablation.cardinality()) +
                     " points, cap is " + std::to_string(ablation.cap));
  }

  if (output_dir.empty()) issues.push_back("output: dir is empty");

  if (!issues.empty()) throw ValidationError(std::move(issues));
}

}  // namespace nnprat
