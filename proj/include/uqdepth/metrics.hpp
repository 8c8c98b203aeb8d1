#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uqdepth/array.hpp"
#include "uqdepth/model.hpp"
#include "uqdepth/uq.hpp"

namespace uqd {

// ---------------------------------------------------------------------------
// Depth accuracy
// ---------------------------------------------------------------------------

struct DepthMetrics {
  double rmse = 0;
  double absrel = 0;
  double log10 = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;
};

// mae: mean |log10 y - log10 gt|; rmse: sqrt of the mean squared log10 error.
enum class Log10Mode { Mae, Rmse };
std::string_view log10_mode_name(Log10Mode mode);
Log10Mode parse_log10_mode(std::string_view name);

// Pixel i is accurate iff it is valid and max(y/gt, gt/y) < 1.25^k.
Mask delta_map(const Array& y, const Array& gt, const Mask& mask, int k = 1);

DepthMetrics depth_metrics(const Array& y, const Array& gt, const Mask& mask, Log10Mode mode = Log10Mode::Mae);

// Unweighted mean over images.
DepthMetrics mean_depth_metrics(std::span<const DepthMetrics> per_image);

// ---------------------------------------------------------------------------
// Uncertainty quality
// ---------------------------------------------------------------------------

// Pixel partition: (a)ccurate / (i)naccurate x (c)ertain / (u)ncertain.
struct UncertaintyCounts {
  std::size_t n_ac = 0;
  std::size_t n_au = 0;
  std::size_t n_ic = 0;
  std::size_t n_iu = 0;

  std::size_t total() const { return n_ac + n_au + n_ic + n_iu; }
  UncertaintyCounts& operator+=(const UncertaintyCounts& o);
  friend bool operator==(const UncertaintyCounts&, const UncertaintyCounts&) = default;
};

// Ratios are nullopt when their denominator is zero.
struct UncertaintyMetrics {
  std::optional<double> p_acc_cer;
  std::optional<double> p_unc_ina;
  std::optional<double> pavpu;
  UncertaintyCounts counts;

  static UncertaintyMetrics from_counts(const UncertaintyCounts& c);
};

// Median of u over valid pixels; the midpoint of the middle pair for even counts.
double median_threshold(const Array& u, const Mask& mask);

// Certain iff u < t, uncertain iff u >= t, with t the per-image median.
UncertaintyCounts uncertainty_counts(const Mask& accurate, const Array& u, const Mask& mask);
UncertaintyMetrics uncertainty_metrics(const Mask& accurate, const Array& u, const Mask& mask);

enum class Aggregation { Micro, Macro };

// Micro: sum counts over images, then form ratios. Macro: mean of the
// per-image ratios that are defined.
UncertaintyMetrics dataset_uncertainty_metrics(std::span<const UncertaintyCounts> per_image,
                                               Aggregation mode = Aggregation::Micro);

// ---------------------------------------------------------------------------
// Efficiency
// ---------------------------------------------------------------------------

struct EfficiencyReport {
  std::size_t trainable_params = 0;
  std::uint64_t flops_per_forward = 0;
  std::size_t runs = 0;
  double mean_ms = 0;
  double std_ms = 0;
  double fps = 0;
};

// Analytic conv FLOPs of one encoder pass and one head pass at H x W.
std::uint64_t encoder_flops(const ModelConfig& config, std::size_t height, std::size_t width);
std::uint64_t head_flops(const ModelConfig& config, std::size_t height, std::size_t width);

// FLOPs of one full prediction with the given method (T forwards for MCD,
// one encoder plus M heads for SE, 1 + |flips| forwards for TTA).
std::uint64_t prediction_flops(const ModelConfig& config, const UQConfig& uq, std::size_t height,
                               std::size_t width);

// Runs `warmup` untimed then `runs` timed calls on the calling thread.
// Reports mean and sample standard deviation in milliseconds.
EfficiencyReport benchmark(const std::function<void()>& predict_once, std::size_t runs, std::size_t warmup);

// ---------------------------------------------------------------------------
// Report CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kReportHeader =
    "method,model,rmse,absrel,log10,delta1,delta2,delta3,p_acc_cer,p_unc_ina,pavpu,params,flops,infer_ms_mean,"
    "infer_ms_std,fps";

struct ReportRow {
  std::string method;
  std::string model;
  std::optional<DepthMetrics> depth;
  std::optional<UncertaintyMetrics> uncertainty;
  std::size_t params = 0;
  std::uint64_t flops = 0;
  std::optional<EfficiencyReport> timing;
};

// One CSV line, no trailing newline; undefined values render as "n/a".
std::string format_report_row(const ReportRow& row);
// Splits a CSV line into fields (no quoting; fields never contain commas).
std::vector<std::string> split_csv(std::string_view line);

}  // namespace uqd
