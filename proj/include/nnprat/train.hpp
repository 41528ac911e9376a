#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnprat/attacks.hpp"
#include "nnprat/data.hpp"
#include "nnprat/models.hpp"
#include "nnprat/nnprat.hpp"

namespace nnprat {

struct LrSchedule {
  std::string kind = "constant";        // "constant" | "step-decay"
  std::vector<std::size_t> milestones;  // 1-based epochs at which the rate drops
  double factor = 0.1;

  // Learning rate for a 1-based epoch: base_lr times factor^(milestones passed).
  double at(std::size_t epoch, double base_lr) const;
};

struct TrainSpec {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrSchedule schedule;
  std::string method = "nnprat";  // "nnprat" | "vanilla-at" | "clean"
  AttackSpec attack;
  ProjectionSpec projection;
  std::uint64_t seed = 0;
  // Per-epoch accuracy probes run on the first eval_cap training samples
  // (0 = the whole set); keeps the per-epoch PGD evaluation affordable.
  std::size_t eval_cap = 512;

  void validate() const;  // throws SpecError listing every violation
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean train loss over kept batches
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double spectral_norm = 0.0;  // last layer, bias excluded
  std::size_t skipped_batches = 0;
  double wall_ms = 0.0;
};

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// Velocity buffers are created on first use and must keep matching shapes.
void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
              std::vector<std::vector<double>>& velocity, double lr, double momentum,
              double weight_decay);

struct TrainResult {
  Network model;
  std::vector<EpochRecord> records;
};

// The joint training loop: per batch, craft x_adv, compute the method's loss,
// take one SGD step. Batches whose loss degenerates (zero-norm feature rows,
// non-finite loss) are skipped and counted; more than 10% skips in one epoch
// aborts the run. Deterministic per spec.seed, wall_ms aside.
TrainResult train(const Network& net, const Dataset& data, const TrainSpec& spec);

void write_epochs_csv(const std::vector<EpochRecord>& records, const std::string& path);

}  // namespace nnprat
