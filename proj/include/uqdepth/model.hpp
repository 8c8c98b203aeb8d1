#pragma once

// Small U-shaped depth regressor. A shared encoder feeds M independent
// decoder+head parameter sets; each head ends in a 1x1 conv to K channels
// (channel 0 depth logits, channel 1 uncertainty logits when K == 2).
//
// Layout for enc_channels = [c0, c1, ...] and bottleneck B:
//   encoder stage i: conv3x3 s1 (prev -> ci) relu   -> skip_i
//                    conv3x3 s2 (ci -> ci) relu
//   bottleneck:      conv3x3 s1 (c_last -> B) relu, dropout site
//   head stage i (last to first): upsample x2, concat skip_i,
//                    conv3x3 s1 (prev + ci -> ci) relu
//   head output:     conv1x1 (c0 -> K)

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uqdepth/array.hpp"
#include "uqdepth/autodiff.hpp"

namespace uqd {

struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::size_t> enc_channels{16, 32};
  std::size_t bottleneck_channels = 64;
  double dropout_rate = 0.10;
  std::size_t num_heads = 1;
  std::size_t head_out_channels = 1;
  double max_depth = 10.0;
  std::uint64_t seed = 0;

  // Required divisor of H and W: 2^(number of encoder stages).
  std::size_t spatial_divisor() const { return std::size_t{1} << enc_channels.size(); }

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvParams {
  Array weight;  // Cout x Cin x k x k
  Array bias;    // Cout
};

// Architecture description of one conv layer, used for parameter and FLOP
// accounting without building a network.
struct ConvLayerSpec {
  std::string name;
  std::size_t cin = 0;
  std::size_t cout = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  // Output resolution is (H / out_divisor) x (W / out_divisor).
  std::size_t out_divisor = 1;
  bool in_head = false;

  std::size_t param_count() const { return kernel * kernel * cin * cout + cout; }
  // 2 * k^2 * Cin * Cout * Hout * Wout multiply-adds plus one add per output for bias.
  std::uint64_t flops(std::size_t height, std::size_t width) const;
};

std::vector<ConvLayerSpec> encoder_layer_specs(const ModelConfig& config);
std::vector<ConvLayerSpec> head_layer_specs(const ModelConfig& config);

struct DepthNet {
  ModelConfig config;
  std::vector<ConvParams> encoder;
  std::vector<std::vector<ConvParams>> heads;

  std::size_t num_heads() const { return heads.size(); }

  // Parameter arrays in declaration order: encoder layers, then each head.
  std::vector<Array*> parameters();
  std::vector<const Array*> parameters() const;
  std::vector<std::string> parameter_names() const;
  // Index range [begin, end) of head m's arrays within parameters().
  std::pair<std::size_t, std::size_t> head_parameter_range(std::size_t m) const;
};

DepthNet build_model(const ModelConfig& config);

std::size_t param_count(const DepthNet& net);
// Closed-form counts from the layer specs.
std::size_t encoder_param_count(const ModelConfig& config);
std::size_t head_param_count(const ModelConfig& config);

// Which heads a forward pass evaluates.
struct HeadSelect {
  std::optional<std::size_t> only;
  static HeadSelect all() { return {}; }
  static HeadSelect one(std::size_t m) { return {m}; }
};

struct ForwardOptions {
  bool dropout_active = false;
  std::uint64_t rng_seed = 0;
  HeadSelect heads = HeadSelect::all();
};

// Forward pass recorded on a graph. `params` is aligned with
// DepthNet::parameters(); only the selected heads' parameters appear as
// leaves reachable from `outputs`.
struct NetGraph {
  ad::Graph graph;
  std::vector<ad::Var> params;
  std::vector<std::size_t> head_ids;
  std::vector<ad::Var> outputs;  // one K x H x W node per selected head
};

// `trainable` marks parameter leaves as requiring gradients. The returned
// object owns the graph; Vars stay valid while it is alive and not moved.
std::unique_ptr<NetGraph> build_forward_graph(const DepthNet& net, const Array& image,
                                              const ForwardOptions& options, bool trainable);

// Encoder activations shared by all heads: skip features per stage plus the
// (possibly dropped-out) bottleneck.
struct EncoderFeatures {
  std::vector<Array> skips;
  Array bottleneck;
};

EncoderFeatures encode(const DepthNet& net, const Array& image, bool dropout_active, std::uint64_t rng_seed);
Array decode_head(const DepthNet& net, const EncoderFeatures& features, std::size_t m);

struct RawHeadOutput {
  std::vector<std::size_t> head_ids;
  std::vector<Array> heads;  // K x H x W each
};

// Inference entry point; encoder activations are computed once and reused
// across the selected heads.
RawHeadOutput forward_net(const DepthNet& net, const Array& image, const ForwardOptions& options);

// Inverted-dropout keep mask: 0 with probability `rate`, else 1/(1-rate).
Array dropout_mask(const Shape& shape, double rate, std::uint64_t seed);

// y = max_depth * sigmoid(raw)
Array decode_depth(const Array& raw, double max_depth);
ad::Var decode_depth(ad::Var raw, double max_depth);

// Checkpoint file: "UQDN", u32 version, config block, u32 array count,
// then per array u32 rank, u32 dims, little-endian f64 data.
void save_checkpoint(const DepthNet& net, const std::filesystem::path& path);
DepthNet load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const DepthNet& net, std::ostream& out);
DepthNet read_checkpoint(std::istream& in);

}  // namespace uqd
