#include "uqdepth/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "uqdepth/binio.hpp"
#include "uqdepth/errors.hpp"
#include "uqdepth/random.hpp"

namespace uqd {
namespace {

constexpr char kMagic[4] = {'U', 'Q', 'D', 'N'};
constexpr std::uint32_t kVersion = 1;

ConvParams init_conv(const ConvLayerSpec& spec, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(spec.cin * spec.kernel * spec.kernel);
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  ConvParams p{Array({spec.cout, spec.cin, spec.kernel, spec.kernel}), Array({spec.cout})};
  for (double& w : p.weight.data()) w = dist(rng);
  return p;
}

}  // namespace

void ModelConfig::validate() const {
  if (enc_channels.empty()) throw ConfigError("model needs at least one encoder stage (enc_channels is empty)");
  for (std::size_t c : enc_channels) {
    if (c == 0) throw ConfigError("encoder channel counts must be positive");
  }
  if (bottleneck_channels == 0) throw ConfigError("bottleneck_channels must be positive");
  if (num_heads < 1) throw ConfigError("num_heads must be >= 1");
  if (head_out_channels != 1 && head_out_channels != 2) throw ConfigError("head_out_channels must be 1 or 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (!(max_depth > 0.0)) throw ConfigError("max_depth must be positive");
  const std::size_t div = spatial_divisor();
  if (height == 0 || width == 0 || height % div != 0 || width % div != 0) {
    throw ConfigError("input height and width must be divisible by " + std::to_string(div) + ", got " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
}

std::uint64_t ConvLayerSpec::flops(std::size_t height, std::size_t width) const {
  const std::uint64_t outputs = static_cast<std::uint64_t>(cout) * (height / out_divisor) * (width / out_divisor);
  return 2ULL * kernel * kernel * cin * outputs + outputs;
}

std::vector<ConvLayerSpec> encoder_layer_specs(const ModelConfig& config) {
  std::vector<ConvLayerSpec> specs;
  std::size_t prev = 3;
  std::size_t div = 1;
  for (std::size_t i = 0; i < config.enc_channels.size(); ++i) {
    const std::size_t c = config.enc_channels[i];
    specs.push_back({"encoder." + std::to_string(i) + ".conv", prev, c, 3, 1, div, false});
    div *= 2;
    specs.push_back({"encoder." + std::to_string(i) + ".down", c, c, 3, 2, div, false});
    prev = c;
  }
  specs.push_back({"encoder.bottleneck", prev, config.bottleneck_channels, 3, 1, div, false});
  return specs;
}

std::vector<ConvLayerSpec> head_layer_specs(const ModelConfig& config) {
  std::vector<ConvLayerSpec> specs;
  std::size_t prev = config.bottleneck_channels;
  std::size_t div = config.spatial_divisor();
  for (std::size_t i = config.enc_channels.size(); i-- > 0;) {
    const std::size_t c = config.enc_channels[i];
    div /= 2;
    specs.push_back({"up." + std::to_string(i), prev + c, c, 3, 1, div, true});
    prev = c;
  }
  specs.push_back({"out", prev, config.head_out_channels, 1, 1, 1, true});
  return specs;
}

std::vector<Array*> DepthNet::parameters() {
  std::vector<Array*> out;
  for (ConvParams& p : encoder) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  for (auto& head : heads) {
    for (ConvParams& p : head) {
      out.push_back(&p.weight);
      out.push_back(&p.bias);
    }
  }
  return out;
}

std::vector<const Array*> DepthNet::parameters() const {
  std::vector<const Array*> out;
  for (Array* a : const_cast<DepthNet*>(this)->parameters()) out.push_back(a);
  return out;
}

std::vector<std::string> DepthNet::parameter_names() const {
  std::vector<std::string> names;
  for (const ConvLayerSpec& s : encoder_layer_specs(config)) {
    names.push_back(s.name + ".weight");
    names.push_back(s.name + ".bias");
  }
  const auto head_specs = head_layer_specs(config);
  for (std::size_t m = 0; m < heads.size(); ++m) {
    for (const ConvLayerSpec& s : head_specs) {
      names.push_back("head" + std::to_string(m) + "." + s.name + ".weight");
      names.push_back("head" + std::to_string(m) + "." + s.name + ".bias");
    }
  }
  return names;
}

std::pair<std::size_t, std::size_t> DepthNet::head_parameter_range(std::size_t m) const {
  const std::size_t per_head = 2 * heads.at(m).size();
  const std::size_t begin = 2 * encoder.size() + m * per_head;
  return {begin, begin + per_head};
}

DepthNet build_model(const ModelConfig& config) {
  config.validate();
  DepthNet net;
  net.config = config;
  std::mt19937_64 enc_rng(mix_seed(config.seed, 0));
  for (const ConvLayerSpec& s : encoder_layer_specs(config)) net.encoder.push_back(init_conv(s, enc_rng));
  const auto head_specs = head_layer_specs(config);
  for (std::size_t m = 0; m < config.num_heads; ++m) {
    std::mt19937_64 head_rng(mix_seed(config.seed, m + 1));
    std::vector<ConvParams> head;
    for (const ConvLayerSpec& s : head_specs) head.push_back(init_conv(s, head_rng));
    net.heads.push_back(std::move(head));
  }
  return net;
}

std::size_t param_count(const DepthNet& net) {
  std::size_t n = 0;
  for (const Array* a : net.parameters()) n += a->size();
  return n;
}

std::size_t encoder_param_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const ConvLayerSpec& s : encoder_layer_specs(config)) n += s.param_count();
  return n;
}

std::size_t head_param_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const ConvLayerSpec& s : head_layer_specs(config)) n += s.param_count();
  return n;
}

Array dropout_mask(const Shape& shape, double rate, std::uint64_t seed) {
  Array mask(shape, 1.0);
  if (rate <= 0.0) return mask;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution drop(rate);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask.data()) v = drop(rng) ? 0.0 : keep_scale;
  return mask;
}

namespace {

struct EncoderVars {
  std::vector<ad::Var> skips;
  ad::Var bottleneck;
};

void check_image(const DepthNet& net, const Array& image) {
  const std::size_t div = net.config.spatial_divisor();
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) % div != 0 || image.dim(2) % div != 0) {
    throw ShapeError("image must be 3xHxW with H, W divisible by " + std::to_string(div) + ", got " +
                     shape_str(image.shape()));
  }
}

EncoderVars encoder_vars(const DepthNet& net, ad::Var x, const std::vector<ad::Var>& params,
                         const ForwardOptions& options) {
  EncoderVars ev;
  std::size_t p = 0;
  auto conv = [&](ad::Var in, std::size_t stride) {
    ad::Var out = ad::relu(ad::conv2d(in, params[p], params[p + 1], stride));
    p += 2;
    return out;
  };
  for (std::size_t i = 0; i < net.config.enc_channels.size(); ++i) {
    ad::Var s = conv(x, 1);
    ev.skips.push_back(s);
    x = conv(s, 2);
  }
  ad::Var b = conv(x, 1);
  if (options.dropout_active && net.config.dropout_rate > 0.0) {
    ad::Var mask = b.graph->leaf(dropout_mask(b.shape(), net.config.dropout_rate, options.rng_seed));
    b = ad::mul(b, mask);
  }
  ev.bottleneck = b;
  return ev;
}

// `first` indexes head m's weight leaf within `params`.
ad::Var head_vars(const EncoderVars& ev, const std::vector<ad::Var>& params, std::size_t first) {
  std::size_t p = first;
  ad::Var x = ev.bottleneck;
  for (std::size_t i = ev.skips.size(); i-- > 0;) {
    const ad::Var parts[2] = {ad::upsample_nearest(x, 2), ev.skips[i]};
    x = ad::relu(ad::conv2d(ad::concat(parts, 0), params[p], params[p + 1], 1));
    p += 2;
  }
  return ad::conv2d(x, params[p], params[p + 1], 1);
}

std::vector<std::size_t> selected_heads(const DepthNet& net, const HeadSelect& sel) {
  if (sel.only) {
    if (*sel.only >= net.num_heads()) {
      throw ConfigError("head " + std::to_string(*sel.only) + " selected but net has " +
                        std::to_string(net.num_heads()) + " heads");
    }
    return {*sel.only};
  }
  std::vector<std::size_t> all(net.num_heads());
  for (std::size_t m = 0; m < all.size(); ++m) all[m] = m;
  return all;
}

}  // namespace

std::unique_ptr<NetGraph> build_forward_graph(const DepthNet& net, const Array& image, const ForwardOptions& options,
                                              bool trainable) {
  check_image(net, image);
  auto ng = std::make_unique<NetGraph>();
  ng->head_ids = selected_heads(net, options.heads);
  ad::Var x = ng->graph.leaf(image);
  for (const Array* a : net.parameters()) ng->params.push_back(ng->graph.leaf(*a, trainable));
  const EncoderVars ev = encoder_vars(net, x, ng->params, options);
  for (std::size_t m : ng->head_ids) {
    ng->outputs.push_back(head_vars(ev, ng->params, net.head_parameter_range(m).first));
  }
  return ng;
}

EncoderFeatures encode(const DepthNet& net, const Array& image, bool dropout_active, std::uint64_t rng_seed) {
  check_image(net, image);
  ad::Graph g;
  ad::Var x = g.leaf(image);
  std::vector<ad::Var> params;
  for (std::size_t i = 0; i < net.encoder.size(); ++i) {
    params.push_back(g.leaf(net.encoder[i].weight));
    params.push_back(g.leaf(net.encoder[i].bias));
  }
  ForwardOptions opts;
  opts.dropout_active = dropout_active;
  opts.rng_seed = rng_seed;
  const EncoderVars ev = encoder_vars(net, x, params, opts);
  EncoderFeatures f;
  for (const ad::Var& s : ev.skips) f.skips.push_back(s.value());
  f.bottleneck = ev.bottleneck.value();
  return f;
}

Array decode_head(const DepthNet& net, const EncoderFeatures& features, std::size_t m) {
  if (m >= net.num_heads()) throw ConfigError("head index out of range");
  ad::Graph g;
  EncoderVars ev;
  for (const Array& s : features.skips) ev.skips.push_back(g.leaf(s));
  ev.bottleneck = g.leaf(features.bottleneck);
  std::vector<ad::Var> params;
  for (const ConvParams& p : net.heads[m]) {
    params.push_back(g.leaf(p.weight));
    params.push_back(g.leaf(p.bias));
  }
  return head_vars(ev, params, 0).value();
}

RawHeadOutput forward_net(const DepthNet& net, const Array& image, const ForwardOptions& options) {
  RawHeadOutput out;
  out.head_ids = selected_heads(net, options.heads);
  const EncoderFeatures f = encode(net, image, options.dropout_active, options.rng_seed);
  for (std::size_t m : out.head_ids) out.heads.push_back(decode_head(net, f, m));
  return out;
}

Array decode_depth(const Array& raw, double max_depth) {
  Array y(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double x = raw[i];
    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    y[i] = max_depth * s;
  }
  return y;
}

ad::Var decode_depth(ad::Var raw, double max_depth) {
  return ad::mul(ad::sigmoid(raw), raw.graph->constant(max_depth));
}

void write_checkpoint(const DepthNet& net, std::ostream& out) {
  using binio::write_le;
  const ModelConfig& c = net.config;
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.height));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.width));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.enc_channels.size()));
  for (std::size_t ch : c.enc_channels) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ch));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.bottleneck_channels));
  write_le<double>(out, c.dropout_rate);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.num_heads));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.head_out_channels));
  write_le<double>(out, c.max_depth);
  write_le<std::uint64_t>(out, c.seed);
  const auto params = net.parameters();
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Array* a : params) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a->rank()));
    for (std::size_t d : a->shape()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : a->data()) write_le<double>(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint");
}

DepthNet read_checkpoint(std::istream& in) {
  using binio::read_le;
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw CorruptionError("checkpoint: bad magic bytes (expected UQDN)");
  }
  const auto version = read_le<std::uint32_t>(in, "checkpoint version");
  if (version != kVersion) throw CorruptionError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig c;
  c.height = read_le<std::uint32_t>(in, "height");
  c.width = read_le<std::uint32_t>(in, "width");
  const auto stages = read_le<std::uint32_t>(in, "stage count");
  if (stages > 16) throw CorruptionError("checkpoint: implausible stage count");
  c.enc_channels.clear();
  for (std::uint32_t i = 0; i < stages; ++i) c.enc_channels.push_back(read_le<std::uint32_t>(in, "enc channels"));
  c.bottleneck_channels = read_le<std::uint32_t>(in, "bottleneck");
  c.dropout_rate = read_le<double>(in, "dropout");
  c.num_heads = read_le<std::uint32_t>(in, "heads");
  c.head_out_channels = read_le<std::uint32_t>(in, "head channels");
  c.max_depth = read_le<double>(in, "max depth");
  c.seed = read_le<std::uint64_t>(in, "seed");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint: invalid config block: ") + e.what());
  }
  DepthNet net = build_model(c);
  const auto count = read_le<std::uint32_t>(in, "array count");
  auto params = net.parameters();
  if (count != params.size()) {
    throw CorruptionError("checkpoint: " + std::to_string(count) + " arrays, config implies " +
                          std::to_string(params.size()));
  }
  for (Array* a : params) {
    const auto rank = read_le<std::uint32_t>(in, "array rank");
    Shape s;
    for (std::uint32_t i = 0; i < rank; ++i) s.push_back(read_le<std::uint32_t>(in, "array dim"));
    if (s != a->shape()) {
      throw CorruptionError("checkpoint: array shape " + shape_str(s) + " expected " + shape_str(a->shape()));
    }
    for (double& v : a->data()) v = read_le<double>(in, "parameter data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptionError("checkpoint: trailing bytes");
  return net;
}

void save_checkpoint(const DepthNet& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(net, out);
}

DepthNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace uqd
