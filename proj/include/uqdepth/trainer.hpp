#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uqdepth/losses.hpp"
#include "uqdepth/metrics.hpp"
#include "uqdepth/model.hpp"
#include "uqdepth/synthdata.hpp"
#include "uqdepth/uq.hpp"

namespace uqd {

struct TrainConfig {
  double lr_base = 6e-5;
  // The from-scratch desk model needs a larger step than a fine-tune; the
  // effective rate is lr_base * lr_multiplier.
  double lr_multiplier = 100.0;
  double weight_decay = 0.01;
  std::size_t epochs = 25;
  std::size_t batch_size = 16;
  // Samples whose graphs are built concurrently; gradients are always
  // accumulated in sample order, so the value never changes results.
  std::size_t micro_batch = 1;
  double power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t crop = 32;
  double flip_prob = 0.5;
  // Validate every n epochs (0 disables validation).
  std::size_t val_every = 1;
  UQConfig uq;
  LossConfig loss;
  ModelConfig model;

  double effective_lr() const { return lr_base * lr_multiplier; }
  void validate() const;
};

// lr_base * (1 - iteration / total)^power
double poly_lr(std::size_t iteration, std::size_t total_iterations, double lr_base, double power);

struct AdamWHyper {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers and update counters per parameter block. Each block keeps
// its own counter so blocks updated intermittently (inactive sub-ensemble
// heads) get correct bias correction.
struct AdamWState {
  std::vector<Array> m;
  std::vector<Array> v;
  std::vector<std::uint64_t> steps;

  void init(const std::vector<Array*>& params);
};

// Decoupled weight decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// Only blocks listed in `active` are touched (all when empty). Throws
// NumericalError naming the block if a gradient is not finite.
void adamw_step(const std::vector<Array*>& params, const std::vector<Array>& grads, AdamWState& state,
                const AdamWHyper& hyper, const std::vector<std::size_t>& active = {},
                const std::vector<std::string>& names = {});

struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
  std::optional<std::size_t> head;  // trained head for SE
};

struct EpochRecord {
  std::size_t epoch = 0;
  double wall_ms = 0;
  std::optional<DepthMetrics> validation;
};

struct TrainLog {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  DepthNet net;
  TrainLog log;
};

// Per-sample loss graph for the configured method. Returns the loss node.
ad::Var method_loss(const TrainConfig& config, const NetGraph& forward, const ImageSample& sample);

// Mean over the batch of per-sample loss gradients, accumulated in sample
// order. `head` restricts the forward to one head (SE); `dropout_seed` is
// mixed with the sample index when the method trains with dropout.
struct BatchGradient {
  double loss = 0;
  std::vector<Array> grads;  // aligned with DepthNet::parameters()
};
BatchGradient batch_gradient(const TrainConfig& config, const DepthNet& net, std::span<const ImageSample> batch,
                             std::optional<std::size_t> head, std::uint64_t dropout_seed);

// Batch order for an epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

// Depth-only validation prediction: dropout off, heads averaged.
Array validation_depth(const DepthNet& net, const Array& image);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const TrainConfig& config, std::span<const ImageSample> train_data,
                  std::span<const ImageSample> val_data, const EpochCallback& on_epoch = {});

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);

}  // namespace uqd
