#include "uqdepth/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "uqdepth/errors.hpp"

namespace uqd {
namespace {

void check_maps(const char* what, const Array& a, const Mask& mask) {
  if (a.rank() != 2 || a.dim(0) != mask.height || a.dim(1) != mask.width) {
    throw ShapeError(std::string(what) + ": map shape " + shape_str(a.shape()) + " vs mask " +
                     shape_str({mask.height, mask.width}));
  }
}

void check_depths(const Array& y, const Array& gt, const Mask& mask) {
  check_maps("prediction", y, mask);
  check_maps("ground truth", gt, mask);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask.valid[i] && !(y[i] > 0 && gt[i] > 0)) {
      throw DomainError("non-positive depth at valid pixel " + std::to_string(i));
    }
  }
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

}  // namespace

std::string_view log10_mode_name(Log10Mode mode) { return mode == Log10Mode::Mae ? "mae" : "rmse"; }

Log10Mode parse_log10_mode(std::string_view name) {
  if (name == "mae") return Log10Mode::Mae;
  if (name == "rmse") return Log10Mode::Rmse;
  throw ConfigError("log10_mode must be mae or rmse, got '" + std::string(name) + "'");
}

Mask delta_map(const Array& y, const Array& gt, const Mask& mask, int k) {
  if (k < 1 || k > 3) throw ConfigError("delta threshold exponent must be 1, 2 or 3");
  check_depths(y, gt, mask);
  const double threshold = std::pow(1.25, k);
  Mask acc(mask.height, mask.width, false);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!mask.valid[i]) continue;
    const double ratio = std::max(y[i] / gt[i], gt[i] / y[i]);
    acc.valid[i] = ratio < threshold ? 1 : 0;
  }
  return acc;
}

DepthMetrics depth_metrics(const Array& y, const Array& gt, const Mask& mask, Log10Mode mode) {
  check_depths(y, gt, mask);
  const std::size_t n = mask.count();
  if (n == 0) throw DomainError("depth_metrics: empty mask");
  double sq = 0, rel = 0, lg = 0;
  std::size_t hits[3] = {0, 0, 0};
  const double thresholds[3] = {1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25};
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!mask.valid[i]) continue;
    const double diff = y[i] - gt[i];
    sq += diff * diff;
    rel += std::fabs(diff) / gt[i];
    const double ldiff = std::log10(y[i]) - std::log10(gt[i]);
    lg += mode == Log10Mode::Mae ? std::fabs(ldiff) : ldiff * ldiff;
    const double ratio = std::max(y[i] / gt[i], gt[i] / y[i]);
    for (int k = 0; k < 3; ++k) hits[k] += ratio < thresholds[k] ? 1 : 0;
  }
  const double dn = static_cast<double>(n);
  DepthMetrics m;
  m.rmse = std::sqrt(sq / dn);
  m.absrel = rel / dn;
  m.log10 = mode == Log10Mode::Mae ? lg / dn : std::sqrt(lg / dn);
  m.delta1 = static_cast<double>(hits[0]) / dn;
  m.delta2 = static_cast<double>(hits[1]) / dn;
  m.delta3 = static_cast<double>(hits[2]) / dn;
  return m;
}

DepthMetrics mean_depth_metrics(std::span<const DepthMetrics> per_image) {
  if (per_image.empty()) throw ContractError("mean_depth_metrics: no images");
  DepthMetrics m;
  for (const DepthMetrics& d : per_image) {
    m.rmse += d.rmse;
    m.absrel += d.absrel;
    m.log10 += d.log10;
    m.delta1 += d.delta1;
    m.delta2 += d.delta2;
    m.delta3 += d.delta3;
  }
  const double n = static_cast<double>(per_image.size());
  m.rmse /= n;
  m.absrel /= n;
  m.log10 /= n;
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

UncertaintyCounts& UncertaintyCounts::operator+=(const UncertaintyCounts& o) {
  n_ac += o.n_ac;
  n_au += o.n_au;
  n_ic += o.n_ic;
  n_iu += o.n_iu;
  return *this;
}

UncertaintyMetrics UncertaintyMetrics::from_counts(const UncertaintyCounts& c) {
  UncertaintyMetrics m;
  m.counts = c;
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.p_acc_cer = ratio(c.n_ac, c.n_ac + c.n_ic);
  m.p_unc_ina = ratio(c.n_iu, c.n_ic + c.n_iu);
  m.pavpu = ratio(c.n_ac + c.n_iu, c.total());
  return m;
}

double median_threshold(const Array& u, const Mask& mask) {
  check_maps("uncertainty", u, mask);
  std::vector<double> vals;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (mask.valid[i]) vals.push_back(u[i]);
  }
  if (vals.empty()) throw DomainError("median_threshold: empty mask");
  const std::size_t mid = vals.size() / 2;
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid), vals.end());
  const double upper = vals[mid];
  if (vals.size() % 2 == 1) return upper;
  const double lower = *std::max_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid));
  return lower + (upper - lower) / 2.0;
}

UncertaintyCounts uncertainty_counts(const Mask& accurate, const Array& u, const Mask& mask) {
  if (accurate.height != mask.height || accurate.width != mask.width) {
    throw ShapeError("accuracy map shape differs from mask");
  }
  const double t = median_threshold(u, mask);
  UncertaintyCounts c;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!mask.valid[i]) continue;
    const bool certain = u[i] < t;
    if (accurate.valid[i]) {
      (certain ? c.n_ac : c.n_au) += 1;
    } else {
      (certain ? c.n_ic : c.n_iu) += 1;
    }
  }
  return c;
}

UncertaintyMetrics uncertainty_metrics(const Mask& accurate, const Array& u, const Mask& mask) {
  return UncertaintyMetrics::from_counts(uncertainty_counts(accurate, u, mask));
}

UncertaintyMetrics dataset_uncertainty_metrics(std::span<const UncertaintyCounts> per_image, Aggregation mode) {
  if (per_image.empty()) throw ContractError("dataset_uncertainty_metrics: no images");
  UncertaintyCounts total;
  for (const UncertaintyCounts& c : per_image) total += c;
  if (mode == Aggregation::Micro) return UncertaintyMetrics::from_counts(total);

  UncertaintyMetrics m;
  m.counts = total;
  auto macro = [&](auto field) -> std::optional<double> {
    double s = 0;
    std::size_t n = 0;
    for (const UncertaintyCounts& c : per_image) {
      if (const auto v = field(UncertaintyMetrics::from_counts(c))) {
        s += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
  };
  m.p_acc_cer = macro([](const UncertaintyMetrics& x) { return x.p_acc_cer; });
  m.p_unc_ina = macro([](const UncertaintyMetrics& x) { return x.p_unc_ina; });
  m.pavpu = macro([](const UncertaintyMetrics& x) { return x.pavpu; });
  return m;
}

std::uint64_t encoder_flops(const ModelConfig& config, std::size_t height, std::size_t width) {
  std::uint64_t f = 0;
  for (const ConvLayerSpec& s : encoder_layer_specs(config)) f += s.flops(height, width);
  return f;
}

std::uint64_t head_flops(const ModelConfig& config, std::size_t height, std::size_t width) {
  std::uint64_t f = 0;
  for (const ConvLayerSpec& s : head_layer_specs(config)) f += s.flops(height, width);
  return f;
}

std::uint64_t prediction_flops(const ModelConfig& config, const UQConfig& uq, std::size_t height, std::size_t width) {
  const ForwardCost cost = forward_cost(uq, config.num_heads);
  return cost.encoder_passes * encoder_flops(config, height, width) +
         cost.head_passes * head_flops(config, height, width);
}

EfficiencyReport benchmark(const std::function<void()>& predict_once, std::size_t runs, std::size_t warmup) {
  if (runs < 2) throw ConfigError("benchmark needs at least 2 timed runs (standard deviation undefined)");
  for (std::size_t i = 0; i < warmup; ++i) predict_once();
  std::vector<double> ms(runs);
  for (std::size_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    predict_once();
    const auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  double mean = 0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(runs);
  double var = 0;
  for (double v : ms) var += (v - mean) * (v - mean);
  var /= static_cast<double>(runs - 1);
  EfficiencyReport r;
  r.runs = runs;
  r.mean_ms = mean;
  r.std_ms = std::sqrt(var);
  r.fps = mean > 0 ? 1000.0 / mean : 0.0;
  return r;
}

std::string format_report_row(const ReportRow& row) {
  std::vector<std::string> f{row.method, row.model};
  if (row.depth) {
    const DepthMetrics& d = *row.depth;
    for (double v : {d.rmse, d.absrel, d.log10, d.delta1, d.delta2, d.delta3}) f.push_back(fmt(v));
  } else {
    f.insert(f.end(), 6, "n/a");
  }
  if (row.uncertainty) {
    f.push_back(fmt_opt(row.uncertainty->p_acc_cer));
    f.push_back(fmt_opt(row.uncertainty->p_unc_ina));
    f.push_back(fmt_opt(row.uncertainty->pavpu));
  } else {
    f.insert(f.end(), 3, "n/a");
  }
  f.push_back(std::to_string(row.params));
  f.push_back(std::to_string(row.flops));
  if (row.timing) {
    f.push_back(fmt(row.timing->mean_ms, "%.4f"));
    f.push_back(fmt(row.timing->std_ms, "%.4f"));
    f.push_back(fmt(row.timing->fps, "%.4f"));
  } else {
    f.insert(f.end(), 3, "n/a");
  }
  std::string line;
  for (std::size_t i = 0; i < f.size(); ++i) line += (i ? "," : "") + f[i];
  return line;
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace uqd
