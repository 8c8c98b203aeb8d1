#include "uqdepth/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "uqdepth/errors.hpp"

namespace uqd {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': expected " + std::string(expected) + ", got '" +
                    std::string(value) + "'");
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

template <class T>
T to_unsigned(std::string_view key, std::string_view v) {
  T out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

std::vector<std::size_t> to_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (const std::string& f : split_csv(v)) out.push_back(to_unsigned<std::size_t>(key, trim(f)));
  return out;
}

FlipSet to_flips(std::string_view key, std::string_view v) {
  FlipSet f{false, false};
  if (v == "none") return f;
  for (const std::string& part : split_csv(v)) {
    const std::string_view t = trim(part);
    if (t == "h") {
      f.horizontal = true;
    } else if (t == "v") {
      f.vertical = true;
    } else {
      bad_value(key, v, "a comma list of h and v, or none");
    }
  }
  return f;
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
}

KeyValues parse_key_values(std::string_view text, std::string_view origin) {
  KeyValues out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      auto kv = split_assignment(line);
      if (kv.first.empty()) throw ConfigError("empty key");
      out.push_back(std::move(kv));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void apply_setting(RunConfig& c, std::string_view key, std::string_view v) {
  TrainConfig& t = c.train;
  if (key == "method") t.uq.method = parse_method(v);
  else if (key == "heads") t.uq.heads = to_unsigned<std::size_t>(key, v);
  else if (key == "samples") t.uq.samples = to_unsigned<std::size_t>(key, v);
  else if (key == "flips") t.uq.flips = to_flips(key, v);
  else if (key == "uq_seed") t.uq.base_seed = to_unsigned<std::uint64_t>(key, v);
  else if (key == "variance_floor") t.uq.variance_floor = t.loss.variance_floor = to_double(key, v);
  else if (key == "dropout") t.model.dropout_rate = to_double(key, v);
  else if (key == "enc_channels") t.model.enc_channels = to_list(key, v);
  else if (key == "bottleneck") t.model.bottleneck_channels = to_unsigned<std::size_t>(key, v);
  else if (key == "max_depth") t.model.max_depth = to_double(key, v);
  else if (key == "epochs") t.epochs = to_unsigned<std::size_t>(key, v);
  else if (key == "batch_size") t.batch_size = to_unsigned<std::size_t>(key, v);
  else if (key == "micro_batch") t.micro_batch = to_unsigned<std::size_t>(key, v);
  else if (key == "lr_base") t.lr_base = to_double(key, v);
  else if (key == "lr_multiplier") t.lr_multiplier = to_double(key, v);
  else if (key == "weight_decay") t.weight_decay = to_double(key, v);
  else if (key == "power") t.power = to_double(key, v);
  else if (key == "beta1") t.beta1 = to_double(key, v);
  else if (key == "beta2") t.beta2 = to_double(key, v);
  else if (key == "eps") t.eps = to_double(key, v);
  else if (key == "seed") t.seed = to_unsigned<std::uint64_t>(key, v);
  else if (key == "crop") t.crop = to_unsigned<std::size_t>(key, v);
  else if (key == "flip_prob") t.flip_prob = to_double(key, v);
  else if (key == "val_every") t.val_every = to_unsigned<std::size_t>(key, v);
  else if (key == "lambda") t.loss.lambda = to_double(key, v);
  else if (key == "alpha") t.loss.alpha = to_double(key, v);
  else if (key == "model_name") {
    if (v.empty() || v.find(',') != std::string_view::npos) bad_value(key, v, "a nonempty name without commas");
    c.model_name = std::string(v);
  } else if (key == "log10_mode") c.log10_mode = parse_log10_mode(v);
  else if (key == "aggregation") {
    if (v == "micro") c.aggregation = Aggregation::Micro;
    else if (v == "macro") c.aggregation = Aggregation::Macro;
    else bad_value(key, v, "micro or macro");
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

RunConfig make_run_config(const KeyValues& entries) {
  RunConfig c;
  for (const auto& [k, v] : entries) apply_setting(c, k, v);
  return c;
}

std::string config_snapshot(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::string enc;
  for (std::size_t i = 0; i < t.model.enc_channels.size(); ++i) {
    enc += (i ? "," : "") + std::to_string(t.model.enc_channels[i]);
  }
  std::string flips = t.uq.flips.empty() ? "none" : "";
  if (t.uq.flips.horizontal) flips += "h";
  if (t.uq.flips.vertical) flips += flips.empty() ? "v" : ",v";

  std::ostringstream o;
  o << "# effective_lr = " << num(t.effective_lr()) << '\n'
    << "method = " << method_name(t.uq.method) << '\n'
    << "heads = " << t.uq.heads << '\n'
    << "samples = " << t.uq.samples << '\n'
    << "flips = " << flips << '\n'
    << "uq_seed = " << t.uq.base_seed << '\n'
    << "variance_floor = " << num(t.uq.variance_floor) << '\n'
    << "dropout = " << num(t.model.dropout_rate) << '\n'
    << "enc_channels = " << enc << '\n'
    << "bottleneck = " << t.model.bottleneck_channels << '\n'
    << "max_depth = " << num(t.model.max_depth) << '\n'
    << "epochs = " << t.epochs << '\n'
    << "batch_size = " << t.batch_size << '\n'
    << "micro_batch = " << t.micro_batch << '\n'
    << "lr_base = " << num(t.lr_base) << '\n'
    << "lr_multiplier = " << num(t.lr_multiplier) << '\n'
    << "weight_decay = " << num(t.weight_decay) << '\n'
    << "power = " << num(t.power) << '\n'
    << "beta1 = " << num(t.beta1) << '\n'
    << "beta2 = " << num(t.beta2) << '\n'
    << "eps = " << num(t.eps) << '\n'
    << "seed = " << t.seed << '\n'
    << "crop = " << t.crop << '\n'
    << "flip_prob = " << num(t.flip_prob) << '\n'
    << "val_every = " << t.val_every << '\n'
    << "lambda = " << num(t.loss.lambda) << '\n'
    << "alpha = " << num(t.loss.alpha) << '\n'
    << "model_name = " << c.model_name << '\n'
    << "log10_mode = " << log10_mode_name(c.log10_mode) << '\n'
    << "aggregation = " << (c.aggregation == Aggregation::Micro ? "micro" : "macro") << '\n';
  return o.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : parse_key_values(config_snapshot(RunConfig{}))) keys.push_back(k);
  return keys;
}

}  // namespace uqd
