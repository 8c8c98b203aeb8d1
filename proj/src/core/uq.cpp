#include "uqdepth/uq.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "uqdepth/errors.hpp"
#include "uqdepth/parallel.hpp"
#include "uqdepth/simd.hpp"

namespace uqd {
namespace {

void require_shape(const DepthNet& net, Method m, std::size_t k, bool single_head) {
  const auto& c = net.config;
  if (c.head_out_channels != k) {
    throw ConfigError(std::string(method_name(m)) + " prediction needs " + std::to_string(k) +
                      " head output channels, net has " + std::to_string(c.head_out_channels));
  }
  if (single_head && net.num_heads() != 1) {
    throw ConfigError(std::string(method_name(m)) + " prediction needs a single-head net, net has " +
                      std::to_string(net.num_heads()));
  }
}

Array depth_of(const DepthNet& net, const Array& head_out) {
  return decode_depth(head_out.channel(0), net.config.max_depth);
}

Array single_forward(const DepthNet& net, const Array& image) {
  return forward_net(net, image, ForwardOptions{}).heads.at(0);
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Baseline: return "baseline";
    case Method::LC: return "lc";
    case Method::GNLL: return "gnll";
    case Method::MCD: return "mcd";
    case Method::SE: return "se";
    case Method::TTA: return "tta";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  for (Method m : {Method::Baseline, Method::LC, Method::GNLL, Method::MCD, Method::SE, Method::TTA}) {
    if (lower == method_name(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "' (expected baseline|lc|gnll|mcd|se|tta)");
}

std::size_t method_head_channels(Method m) { return (m == Method::LC || m == Method::GNLL) ? 2 : 1; }

bool method_has_uncertainty(Method m) { return m != Method::Baseline; }

void UQConfig::validate() const {
  if (method == Method::MCD && samples < 2) throw ConfigError("MCD needs at least 2 samples (T >= 2)");
  if (method == Method::SE && heads < 2) throw ConfigError("SE needs at least 2 heads (M >= 2)");
  if (method == Method::TTA && flips.empty()) throw ConfigError("TTA needs a nonempty flip set");
  if (!(variance_floor > 0)) throw ConfigError("variance_floor must be positive");
}

Array aggregate_mean(const SampleSet& set) {
  if (set.samples.empty()) throw ContractError("aggregate: empty sample set");
  const Array& first = set.samples.front();
  const Shape& shape = first.shape();
  // Deviations from the first sample are summed, so identical samples give
  // a mean equal to that sample bit for bit.
  Array acc(shape);
  for (const Array& s : set.samples) {
    if (s.shape() != shape) {
      throw ShapeError("aggregate: sample shape " + shape_str(s.shape()) + " differs from " + shape_str(shape));
    }
    if (!s.all_finite()) throw DomainError("aggregate: non-finite sample value");
    simd::axpy(1.0, s.data(), acc.data());
    simd::axpy(-1.0, first.data(), acc.data());
  }
  const double t = static_cast<double>(set.samples.size());
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = first[i] + acc[i] / t;
  return acc;
}

MeanVariance aggregate(const SampleSet& set) {
  if (set.samples.size() < 2) {
    throw ContractError("aggregate: variance needs at least 2 samples, got " + std::to_string(set.samples.size()));
  }
  MeanVariance out{aggregate_mean(set), Array(set.samples.front().shape())};
  for (const Array& s : set.samples) simd::accumulate_sq_dev(s.data(), out.mean.data(), out.variance.data());
  const double dof = static_cast<double>(set.samples.size() - 1);
  for (double& v : out.variance.data()) v /= dof;
  return out;
}

Prediction predict_baseline(const DepthNet& net, const Array& image) {
  require_shape(net, Method::Baseline, 1, true);
  return Prediction{depth_of(net, single_forward(net, image)), std::nullopt, Method::Baseline, 1};
}

Prediction predict_lc(const DepthNet& net, const Array& image) {
  require_shape(net, Method::LC, 2, true);
  const Array out = single_forward(net, image);
  Array u = out.channel(1);
  // u = 1/C with C = 1 + exp(c)
  for (double& v : u.data()) v = 1.0 / (1.0 + std::exp(v));
  return Prediction{depth_of(net, out), std::move(u), Method::LC, 1};
}

Prediction predict_gnll(const DepthNet& net, const Array& image, double variance_floor) {
  require_shape(net, Method::GNLL, 2, true);
  const Array out = single_forward(net, image);
  Array s2 = out.channel(1);
  for (double& v : s2.data()) v = std::max(std::exp(v), variance_floor);
  return Prediction{depth_of(net, out), std::move(s2), Method::GNLL, 1};
}

Prediction predict_mcd(const DepthNet& net, const Array& image, std::size_t samples, std::uint64_t base_seed,
                       bool allow_degenerate) {
  require_shape(net, Method::MCD, 1, true);
  if (samples < 2) throw ConfigError("MCD needs at least 2 samples (T >= 2)");
  if (net.config.dropout_rate <= 0.0 && !allow_degenerate) {
    throw ConfigError("MCD sampling with dropout_rate 0 is degenerate (all samples identical)");
  }
  SampleSet set;
  set.samples.resize(samples);
  parallel_for(samples, [&](std::size_t t) {
    ForwardOptions opts;
    opts.dropout_active = true;
    opts.rng_seed = base_seed + t;
    set.samples[t] = depth_of(net, forward_net(net, image, opts).heads.at(0));
  });
  MeanVariance mv = aggregate(set);
  return Prediction{std::move(mv.mean), std::move(mv.variance), Method::MCD, samples};
}

Prediction predict_se(const DepthNet& net, const Array& image, bool reuse_encoder) {
  require_shape(net, Method::SE, 1, false);
  if (net.num_heads() < 2) throw ConfigError("SE prediction needs at least 2 heads (M >= 2)");
  SampleSet set;
  set.samples.resize(net.num_heads());
  if (reuse_encoder) {
    const EncoderFeatures features = encode(net, image, false, 0);
    parallel_for(net.num_heads(), [&](std::size_t m) {
      set.samples[m] = depth_of(net, decode_head(net, features, m));
    });
  } else {
    parallel_for(net.num_heads(), [&](std::size_t m) {
      ForwardOptions opts;
      opts.heads = HeadSelect::one(m);
      set.samples[m] = depth_of(net, forward_net(net, image, opts).heads.at(0));
    });
  }
  MeanVariance mv = aggregate(set);
  return Prediction{std::move(mv.mean), std::move(mv.variance), Method::SE, net.num_heads()};
}

Prediction predict_tta(const DepthNet& net, const Array& image, FlipSet flips) {
  require_shape(net, Method::TTA, 1, true);
  if (flips.empty()) throw ConfigError("TTA needs a nonempty flip set");
  // Each flipped prediction is mapped back to the input frame before fusion.
  enum class View { Identity, Horizontal, Vertical };
  std::vector<View> views{View::Identity};
  if (flips.horizontal) views.push_back(View::Horizontal);
  if (flips.vertical) views.push_back(View::Vertical);
  SampleSet set;
  set.samples.resize(views.size());
  parallel_for(views.size(), [&](std::size_t i) {
    switch (views[i]) {
      case View::Identity:
        set.samples[i] = depth_of(net, single_forward(net, image));
        break;
      case View::Horizontal:
        set.samples[i] = ad::flip_h(depth_of(net, single_forward(net, ad::flip_h(image))));
        break;
      case View::Vertical:
        set.samples[i] = ad::flip_v(depth_of(net, single_forward(net, ad::flip_v(image))));
        break;
    }
  });
  MeanVariance mv = aggregate(set);
  return Prediction{std::move(mv.mean), std::move(mv.variance), Method::TTA, views.size()};
}

Prediction predict(const DepthNet& net, const Array& image, const UQConfig& config) {
  config.validate();
  switch (config.method) {
    case Method::Baseline: return predict_baseline(net, image);
    case Method::LC: return predict_lc(net, image);
    case Method::GNLL: return predict_gnll(net, image, config.variance_floor);
    case Method::MCD: return predict_mcd(net, image, config.samples, config.base_seed);
    case Method::SE: return predict_se(net, image);
    case Method::TTA: return predict_tta(net, image, config.flips);
  }
  throw ConfigError("unhandled method");
}

ForwardCost forward_cost(const UQConfig& config, std::size_t net_heads) {
  switch (config.method) {
    case Method::MCD: return {config.samples, config.samples};
    case Method::SE: return {1, net_heads};
    case Method::TTA: return {1 + config.flips.count(), 1 + config.flips.count()};
    default: return {1, 1};
  }
}

}  // namespace uqd
