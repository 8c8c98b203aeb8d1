#include "uqdepth/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "uqdepth/errors.hpp"
#include "uqdepth/parallel.hpp"
#include "uqdepth/random.hpp"

namespace uqd {
namespace {

// Seed streams derived from TrainConfig::seed.
constexpr std::uint64_t kModelStream = 0x4d4f44454cULL;
constexpr std::uint64_t kShuffleStream = 0x53485546ULL;
constexpr std::uint64_t kAugmentStream = 0x41554730ULL;
constexpr std::uint64_t kDropoutStream = 0x44524f50ULL;

ModelConfig resolved_model(const TrainConfig& config) {
  ModelConfig mc = config.model;
  mc.head_out_channels = method_head_channels(config.uq.method);
  mc.num_heads = config.uq.method == Method::SE ? config.uq.heads : 1;
  mc.height = config.crop;
  mc.width = config.crop;
  mc.seed = mix_seed(config.seed, kModelStream);
  return mc;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (micro_batch < 1) throw ConfigError("micro_batch must be >= 1");
  if (!(power > 0)) throw ConfigError("schedule power must be positive");
  if (!(lr_base > 0) || !(lr_multiplier > 0)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("flip_prob must lie in [0, 1]");
  uq.validate();
  loss.validate();
  if (uq.method == Method::MCD && !(model.dropout_rate > 0)) {
    throw ConfigError("MCD training needs dropout_rate > 0");
  }
  resolved_model(*this).validate();
}

double poly_lr(std::size_t iteration, std::size_t total_iterations, double lr_base, double power) {
  if (total_iterations == 0) throw ContractError("poly_lr: total_iterations must be positive");
  if (iteration > total_iterations) {
    throw ContractError("poly_lr: iteration " + std::to_string(iteration) + " exceeds total " +
                        std::to_string(total_iterations));
  }
  const double frac = static_cast<double>(iteration) / static_cast<double>(total_iterations);
  return lr_base * std::pow(1.0 - frac, power);
}

void AdamWState::init(const std::vector<Array*>& params) {
  m.clear();
  v.clear();
  for (const Array* p : params) {
    m.emplace_back(p->shape());
    v.emplace_back(p->shape());
  }
  steps.assign(params.size(), 0);
}

void adamw_step(const std::vector<Array*>& params, const std::vector<Array>& grads, AdamWState& state,
                const AdamWHyper& h, const std::vector<std::size_t>& active, const std::vector<std::string>& names) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ContractError("adamw_step: parameter, gradient and state counts differ");
  }
  std::vector<std::size_t> blocks = active;
  if (blocks.empty()) {
    blocks.resize(params.size());
    std::iota(blocks.begin(), blocks.end(), std::size_t{0});
  }
  auto block_name = [&](std::size_t b) { return b < names.size() ? names[b] : "block " + std::to_string(b); };
  for (std::size_t b : blocks) {
    if (grads[b].shape() != params[b]->shape()) {
      throw ShapeError("adamw_step: gradient shape " + shape_str(grads[b].shape()) + " vs parameter " +
                       shape_str(params[b]->shape()) + " for " + block_name(b));
    }
    for (double g : grads[b].data()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter block " + block_name(b));
    }
  }
  for (std::size_t b : blocks) {
    Array& theta = *params[b];
    Array& m = state.m[b];
    Array& v = state.v[b];
    const std::uint64_t t = ++state.steps[b];
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads[b][i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= h.lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * theta[i]);
    }
  }
}

ad::Var method_loss(const TrainConfig& config, const NetGraph& forward, const ImageSample& sample) {
  const ad::Var out = forward.outputs.at(0);
  const std::size_t h = out.shape()[1], w = out.shape()[2];
  auto channel = [&](std::size_t c) { return ad::reshape(ad::slice(out, 0, c, c + 1), {h, w}); };
  const double max_depth = config.model.max_depth;
  const ad::Var y = decode_depth(channel(0), max_depth);
  switch (config.uq.method) {
    case Method::LC: {
      const ad::Var conf = ad::add(ad::exp(channel(1)), out.graph->constant(1.0));
      return lc_loss(y, conf, sample.depth, sample.mask, config.loss);
    }
    case Method::GNLL:
      return gnll_loss(y, ad::exp(channel(1)), sample.depth, sample.mask, config.loss);
    default:
      return si_loss(y, sample.depth, sample.mask, config.loss);
  }
}

BatchGradient batch_gradient(const TrainConfig& config, const DepthNet& net, std::span<const ImageSample> batch,
                             std::optional<std::size_t> head, std::uint64_t dropout_seed) {
  if (batch.empty()) throw ContractError("batch_gradient: empty batch");
  const auto params = net.parameters();
  BatchGradient out;
  for (const Array* p : params) out.grads.emplace_back(p->shape());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const bool dropout = config.uq.method == Method::MCD;

  struct PerSample {
    double loss = 0;
    ad::GradientMap grads;
    std::vector<ad::NodeId> ids;
  };
  for (std::size_t start = 0; start < batch.size(); start += config.micro_batch) {
    const std::size_t count = std::min(config.micro_batch, batch.size() - start);
    std::vector<PerSample> results(count);
    parallel_for(count, [&](std::size_t j) {
      const ImageSample& s = batch[start + j];
      ForwardOptions opts;
      opts.dropout_active = dropout;
      opts.rng_seed = mix_seed(dropout_seed, start + j);
      opts.heads = head ? HeadSelect::one(*head) : HeadSelect::all();
      auto fg = build_forward_graph(net, s.image, opts, true);
      const ad::Var loss = method_loss(config, *fg, s);
      results[j].loss = loss.item();
      results[j].grads = fg->graph.backward(loss);
      for (const ad::Var& p : fg->params) results[j].ids.push_back(p.id);
    });
    for (const PerSample& r : results) {
      out.loss += r.loss * inv_b;
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Array& g = r.grads.at(r.ids[k]);
        Array& acc = out.grads[k];
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * inv_b;
      }
    }
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(mix_seed(seed, kShuffleStream), epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Array validation_depth(const DepthNet& net, const Array& image) {
  const RawHeadOutput raw = forward_net(net, image, ForwardOptions{});
  SampleSet set;
  for (const Array& h : raw.heads) set.samples.push_back(decode_depth(h.channel(0), net.config.max_depth));
  return aggregate_mean(set);
}

TrainResult train(const TrainConfig& config, std::span<const ImageSample> train_data,
                  std::span<const ImageSample> val_data, const EpochCallback& on_epoch) {
  config.validate();
  if (train_data.empty()) throw ConfigError("training data is empty");
  for (const ImageSample& s : train_data) {
    if (s.height() < config.crop || s.width() < config.crop) {
      throw ConfigError("crop " + std::to_string(config.crop) + " exceeds training sample size " +
                        std::to_string(s.height()) + "x" + std::to_string(s.width()));
    }
  }
  TrainResult result{build_model(resolved_model(config)), {}};
  DepthNet& net = result.net;
  const auto params = net.parameters();
  const auto names = net.parameter_names();
  AdamWState state;
  state.init(params);

  const std::size_t n = train_data.size();
  const std::size_t iters_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = config.epochs * iters_per_epoch;
  const bool se = config.uq.method == Method::SE;

  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(config.seed, epoch, n);
    const std::uint64_t aug_seed = mix_seed(mix_seed(config.seed, kAugmentStream), epoch);
    for (std::size_t b = 0; b < iters_per_epoch; ++b, ++iteration) {
      std::vector<ImageSample> batch;
      for (std::size_t k = b * config.batch_size; k < std::min(n, (b + 1) * config.batch_size); ++k) {
        std::mt19937_64 rng(mix_seed(aug_seed, k));
        batch.push_back(augment(train_data[order[k]], config.crop, config.crop, config.flip_prob, rng));
      }
      std::optional<std::size_t> head;
      std::vector<std::size_t> active;
      if (se) {
        head = iteration % net.num_heads();
        for (std::size_t k = 0; k < 2 * net.encoder.size(); ++k) active.push_back(k);
        const auto [hb, he] = net.head_parameter_range(*head);
        for (std::size_t k = hb; k < he; ++k) active.push_back(k);
      }
      const BatchGradient bg =
          batch_gradient(config, net, batch, head, mix_seed(mix_seed(config.seed, kDropoutStream), iteration));
      if (!std::isfinite(bg.loss)) {
        throw NumericalError("loss is not finite at iteration " + std::to_string(iteration));
      }
      AdamWHyper hyper;
      hyper.lr = poly_lr(iteration, total, config.effective_lr(), config.power);
      hyper.weight_decay = config.weight_decay;
      hyper.beta1 = config.beta1;
      hyper.beta2 = config.beta2;
      hyper.eps = config.eps;
      adamw_step(params, bg.grads, state, hyper, active, names);
      result.log.iterations.push_back({iteration, epoch, hyper.lr, bg.loss, head});
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const bool last = epoch + 1 == config.epochs;
    if (!val_data.empty() && config.val_every > 0 && ((epoch + 1) % config.val_every == 0 || last)) {
      std::vector<DepthMetrics> per_image(val_data.size());
      parallel_for(val_data.size(), [&](std::size_t i) {
        const ImageSample& s = val_data[i];
        per_image[i] = depth_metrics(validation_depth(net, s.image), s.depth, s.mask);
      });
      rec.validation = mean_depth_metrics(per_image);
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,epoch,lr,loss,head\n";
  char buf[160];
  for (const IterationRecord& r : log.iterations) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,", r.iteration, r.epoch, r.lr, r.loss);
    out << buf << (r.head ? std::to_string(*r.head) : "") << '\n';
  }
  std::filesystem::path epochs = path;
  epochs.replace_filename("epochs.csv");
  std::ofstream eo(epochs);
  if (!eo) throw IoError("cannot write " + epochs.string());
  eo << "epoch,wall_ms,val_rmse,val_absrel,val_log10,val_delta1,val_delta2,val_delta3\n";
  for (const EpochRecord& r : log.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.3f", r.epoch, r.wall_ms);
    eo << buf;
    if (r.validation) {
      const DepthMetrics& d = *r.validation;
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", d.rmse, d.absrel, d.log10, d.delta1, d.delta2,
                    d.delta3);
      eo << buf;
    } else {
      eo << ",n/a,n/a,n/a,n/a,n/a,n/a";
    }
    eo << '\n';
  }
}

}  // namespace uqd
