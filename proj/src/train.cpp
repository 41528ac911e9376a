#include "nnprat/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "nnprat/errors.hpp"
#include "nnprat/metrics.hpp"

namespace nnprat {

double LrSchedule::at(std::size_t epoch, double base_lr) const {
  if (kind == "constant") return base_lr;
  double lr = base_lr;
  for (std::size_t m : milestones) {
    if (epoch >= m) lr *= factor;
  }
  return lr;
}

void TrainSpec::validate() const {
  std::vector<std::string> issues;
  if (epochs == 0) issues.push_back("epochs must be >= 1");
  if (batch_size < 2) issues.push_back("batch_size must be >= 2");
  if (!(lr >= 0.0)) issues.push_back("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) issues.push_back("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) issues.push_back("weight_decay must be >= 0");
  if (schedule.kind != "constant" && schedule.kind != "step-decay") {
    issues.push_back("lr schedule must be 'constant' or 'step-decay', got '" + schedule.kind +
                     "'");
  }
  if (schedule.kind == "step-decay") {
    if (!(schedule.factor > 0.0)) issues.push_back("step-decay factor must be > 0");
    for (std::size_t i = 0; i < schedule.milestones.size(); ++i) {
      if (schedule.milestones[i] == 0 ||
          (i > 0 && schedule.milestones[i] <= schedule.milestones[i - 1])) {
        issues.push_back("step-decay milestones must be strictly increasing 1-based epochs");
        break;
      }
    }
  }
  if (method != "nnprat" && method != "vanilla-at" && method != "clean") {
    issues.push_back("method must be 'nnprat', 'vanilla-at' or 'clean', got '" + method + "'");
  }
  // Nested spec messages are "invalid X spec:\n  - a\n  - b"; pull out the
  // individual items so the merged report stays one violation per line.
  auto absorb = [&issues](const std::string& prefix, const std::string& what) {
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
  };
  try {
    attack.validate();
  } catch (const SpecError& e) {
    absorb("attack", e.what());
  }
  try {
    projection.validate();
  } catch (const SpecError& e) {
    absorb("projection", e.what());
  }
  if (!issues.empty()) {
    std::string msg = "invalid train spec:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw SpecError(msg);
  }
}

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
              std::vector<std::vector<double>>& velocity, double lr, double momentum,
              double weight_decay) {
  if (params.size() != grads.size()) {
    throw ContractError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                        std::to_string(grads.size()) + " grads");
  }
  if (velocity.empty()) velocity.resize(params.size());
  if (velocity.size() != params.size()) {
    throw ContractError("sgd_step: velocity state does not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values();
    const auto& g = grads[i].values();
    if (g.size() != p.size() || grads[i].shape() != params[i].shape()) {
      throw ContractError("sgd_step: grad " + std::to_string(i) + " has shape " +
                          shape_str(grads[i].shape()) + ", param has " +
                          shape_str(params[i].shape()));
    }
    auto& v = velocity[i];
    if (v.empty()) v.assign(p.size(), 0.0);
    if (v.size() != p.size()) {
      throw ContractError("sgd_step: velocity " + std::to_string(i) + " size mismatch");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + g[j] + weight_decay * p[j];
      p[j] -= lr * v[j];
    }
  }
}

namespace {

Dataset eval_subset(const Dataset& data, std::size_t cap) {
  if (cap == 0 || cap >= data.size()) return data;
  Dataset out;
  const std::size_t d = data.input_size();
  out.inputs = Tensor::zeros({cap, d});
  std::copy(data.inputs.values().begin(), data.inputs.values().begin() + cap * d,
            out.inputs.values().begin());
  out.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(cap));
  out.num_classes = data.num_classes;
  out.split = data.split;
  out.sample_shape = data.sample_shape;
  return out;
}

}  // namespace

TrainResult train(const Network& net, const Dataset& data, const TrainSpec& spec) {
  spec.validate();
  data.validate();
  if (data.size() == 0) throw ContractError("train: empty dataset");
  if (data.num_classes != net.spec().num_classes) {
    throw ContractError("train: dataset has " + std::to_string(data.num_classes) +
                        " classes, network expects " + std::to_string(net.spec().num_classes));
  }
  if (data.input_size() != net.spec().input_size()) {
    throw ContractError("train: dataset rows have " + std::to_string(data.input_size()) +
                        " features, network expects " + std::to_string(net.spec().input_size()));
  }

  TrainResult result;
  result.model = net.clone();
  result.model.set_trainable(true);
  auto& params = result.model.parameters();
  std::vector<std::vector<double>> velocity(params.size());
  Dataset probe = eval_subset(data, spec.eval_cap);

  for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = spec.schedule.at(epoch, spec.lr);
    auto batch_list = batches(data, spec.batch_size, spec.seed, epoch - 1);

    double loss_sum = 0.0;
    std::size_t kept = 0;
    std::size_t skipped = 0;
    for (const auto& batch : batch_list) {
      for (auto& p : params) p.zero_grad();
      bool stepped = false;
      try {
        GradTape tape;
        Tensor loss;
        if (spec.method == "clean") {
          loss = cross_entropy(result.model.forward(batch.inputs).logits, batch.labels);
        } else {
          Tensor x_adv = pgd(result.model, batch.inputs, batch.labels, spec.attack);
          if (spec.method == "vanilla-at") {
            loss = cross_entropy(result.model.forward(x_adv).logits, batch.labels);
          } else {
            loss = nnprat_loss(result.model, batch.inputs, x_adv, batch.labels,
                               spec.projection);
          }
        }
        double value = loss.at(0);
        if (std::isfinite(value)) {
          tape.backward(loss);
          loss_sum += value;
          ++kept;
          stepped = true;
        }
      } catch (const DegenerateFeatureError&) {
        // zero-norm feature row inside projection removal: drop the batch
      }
      if (!stepped) {
        ++skipped;
        continue;
      }

      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (auto& p : params) grads.push_back(p.grad_tensor());
      sgd_step(params, grads, velocity, lr, spec.momentum, spec.weight_decay);
    }

    if (skipped * 10 > batch_list.size()) {
      throw RunAbortedError(
          "epoch " + std::to_string(epoch) + " skipped " + std::to_string(skipped) + " of " +
          std::to_string(batch_list.size()) +
          " batches (>10%): feature rows keep collapsing to zero norm; lower lambda/lr or "
          "inspect the data");
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(kept);
    rec.clean_acc = clean_accuracy(result.model, probe);
    rec.robust_acc = robust_accuracy(result.model, probe, spec.attack);
    rec.spectral_norm = spectral_norm(result.model.last_layer_weights());
    rec.skipped_batches = skipped;
    auto t1 = std::chrono::steady_clock::now();
    rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.records.push_back(rec);
  }
  return result;
}

void write_epochs_csv(const std::vector<EpochRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "epoch,loss,clean_acc,robust_acc,spectral_norm,skipped_batches,wall_ms\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%zu,%.3f\n", r.epoch,
                  r.loss, r.clean_acc, r.robust_acc, r.spectral_norm, r.skipped_batches,
                  r.wall_ms);
    out << line;
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace nnprat
