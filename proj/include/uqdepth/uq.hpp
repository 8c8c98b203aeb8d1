#pragma once

// Prediction-time fusion of depth samples into a depth map plus a per-pixel
// uncertainty map. Larger uncertainty always means less certain: variance
// (m^2) for GNLL, MCD, SE and TTA; u = 1/C for learned confidence.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uqdepth/array.hpp"
#include "uqdepth/model.hpp"

namespace uqd {

enum class Method { Baseline, LC, GNLL, MCD, SE, TTA };

std::string_view method_name(Method m);
// Accepts "baseline", "lc", "gnll", "mcd", "se", "tta" (any case).
Method parse_method(std::string_view name);

// Head output channels the method needs (2 for LC/GNLL).
std::size_t method_head_channels(Method m);

// False only for the baseline.
bool method_has_uncertainty(Method m);

struct FlipSet {
  bool horizontal = true;
  bool vertical = true;
  bool empty() const { return !horizontal && !vertical; }
  std::size_t count() const { return (horizontal ? 1 : 0) + (vertical ? 1 : 0); }
};

struct UQConfig {
  Method method = Method::Baseline;
  std::size_t samples = 10;  // T for MCD
  std::size_t heads = 10;    // M for SE
  FlipSet flips;
  std::uint64_t base_seed = 0;
  double variance_floor = 1e-6;

  void validate() const;
};

struct SampleSet {
  std::vector<Array> samples;
};

struct MeanVariance {
  Array mean;
  Array variance;
};

// Two-pass mean and unbiased (1/(T-1)) variance per pixel.
Array aggregate_mean(const SampleSet& set);
MeanVariance aggregate(const SampleSet& set);

struct Prediction {
  Array depth;
  std::optional<Array> uncertainty;  // absent for the baseline
  Method method = Method::Baseline;
  std::size_t sample_count = 1;
};

Prediction predict_baseline(const DepthNet& net, const Array& image);
Prediction predict_lc(const DepthNet& net, const Array& image);
Prediction predict_gnll(const DepthNet& net, const Array& image, double variance_floor = 1e-6);
// `allow_degenerate` lets tests sample a net whose dropout rate is zero.
Prediction predict_mcd(const DepthNet& net, const Array& image, std::size_t samples, std::uint64_t base_seed,
                       bool allow_degenerate = false);
// `reuse_encoder` false recomputes the shared encoder per head.
Prediction predict_se(const DepthNet& net, const Array& image, bool reuse_encoder = true);
Prediction predict_tta(const DepthNet& net, const Array& image, FlipSet flips = {});

Prediction predict(const DepthNet& net, const Array& image, const UQConfig& config);

// Number of full network forwards (encoder + one head) a prediction costs,
// with SE counted as one encoder plus M heads.
struct ForwardCost {
  std::size_t encoder_passes = 1;
  std::size_t head_passes = 1;
};
ForwardCost forward_cost(const UQConfig& config, std::size_t net_heads);

}  // namespace uqd
