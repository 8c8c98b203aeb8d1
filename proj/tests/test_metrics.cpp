#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "uqdepth/errors.hpp"
#include "uqdepth/metrics.hpp"
#include "uqdepth/model.hpp"

using namespace uqd;

namespace {

Mask bools(std::size_t h, std::size_t w, std::initializer_list<int> v) {
  Mask m(h, w, false);
  std::size_t i = 0;
  for (int x : v) m.valid[i++] = static_cast<std::uint8_t>(x);
  return m;
}

void expect_opt_near(const std::optional<double>& got, const std::optional<double>& want, double tol) {
  ASSERT_EQ(got.has_value(), want.has_value());
  if (want) {
    EXPECT_NEAR(*got, *want, tol);
  }
}

}  // namespace

TEST(DeltaMap, Examples) {
  const Array one({1, 1}, {1.0});
  EXPECT_EQ(delta_map(Array({1, 1}, {1.2}), one, Mask(1, 1)).count(), 1u);
  EXPECT_EQ(delta_map(Array({1, 1}, {0.5}), one, Mask(1, 1), 1).count(), 0u);
  EXPECT_EQ(delta_map(Array({1, 1}, {0.5}), one, Mask(1, 1), 3).count(), 0u);
  EXPECT_EQ(delta_map(one, one, Mask(1, 1)).count(), 1u);
}

TEST(DeltaMap, BoundaryIsStrict) {
  EXPECT_EQ(delta_map(Array({1, 1}, {1.25}), Array({1, 1}, {1.0}), Mask(1, 1)).count(), 0u);
}

TEST(DeltaMap, InvalidPixelsAreNeverAccurate) {
  const Mask mask = bools(1, 2, {1, 0});
  const Mask acc = delta_map(Array({1, 2}, 1.0), Array({1, 2}, 1.0), mask);
  EXPECT_EQ(acc.valid[0], 1);
  EXPECT_EQ(acc.valid[1], 0);
}

TEST(DeltaMap, RejectsNonPositiveDepthAndBadK) {
  EXPECT_THROW(delta_map(Array({1, 1}, {0.0}), Array({1, 1}, {1.0}), Mask(1, 1)), DomainError);
  EXPECT_THROW(delta_map(Array({1, 1}, {1.0}), Array({1, 1}, {-1.0}), Mask(1, 1)), DomainError);
  EXPECT_THROW(delta_map(Array({1, 1}, {1.0}), Array({1, 1}, {1.0}), Mask(1, 1), 4), ConfigError);
  // Invalid pixels may carry any value.
  EXPECT_NO_THROW(delta_map(Array({1, 2}, {1.0, 0.0}), Array({1, 2}, {1.0, 1.0}), bools(1, 2, {1, 0})));
}

TEST(DepthMetrics, Examples) {
  const Array gt({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const DepthMetrics p = depth_metrics(gt, gt, Mask(2, 2));
  EXPECT_EQ(p.rmse, 0.0);
  EXPECT_EQ(p.absrel, 0.0);
  EXPECT_EQ(p.log10, 0.0);
  EXPECT_EQ(p.delta1, 1.0);
  EXPECT_EQ(p.delta3, 1.0);

  const DepthMetrics s = depth_metrics(Array({1, 1}, {2.0}), Array({1, 1}, {1.0}), Mask(1, 1));
  EXPECT_EQ(s.rmse, 1.0);
  EXPECT_EQ(s.absrel, 1.0);
  EXPECT_NEAR(s.log10, 0.30103, 1e-5);

  const Array gt4({1, 4}, {1.0, 2.0, 4.0, 8.0});
  const DepthMetrics scaled = depth_metrics(Array({1, 4}, {1.1, 2.2, 4.4, 8.8}), gt4, Mask(1, 4));
  EXPECT_NEAR(scaled.absrel, 0.1, 1e-15);
  EXPECT_EQ(scaled.delta1, 1.0);
}

TEST(DepthMetrics, EmptyMaskIsError) {
  EXPECT_THROW(depth_metrics(Array({1, 1}, 1.0), Array({1, 1}, 1.0), Mask(1, 1, false)), DomainError);
}

TEST(DepthMetrics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Array gt = oracle::uniform({8, 8}, 0.5, 10, rng);
    const Array y = oracle::uniform({8, 8}, 0.5, 10, rng);
    const Mask mask = oracle::random_mask(8, 8, 0.85, rng);
    const oracle::Depth o = oracle::depth(y, gt, mask);
    const DepthMetrics mae = depth_metrics(y, gt, mask, Log10Mode::Mae);
    const DepthMetrics rms = depth_metrics(y, gt, mask, Log10Mode::Rmse);
    EXPECT_NEAR(mae.rmse, o.rmse, 1e-12);
    EXPECT_NEAR(mae.absrel, o.absrel, 1e-12);
    EXPECT_NEAR(mae.log10, o.log10_mae, 1e-12);
    EXPECT_NEAR(rms.log10, o.log10_rmse, 1e-12);
    EXPECT_NEAR(mae.delta1, o.delta[0], 1e-12);
    EXPECT_NEAR(mae.delta2, o.delta[1], 1e-12);
    EXPECT_NEAR(mae.delta3, o.delta[2], 1e-12);
  }
}

TEST(DepthMetrics, DeltaMonotoneInK) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const Array gt = oracle::uniform({6, 6}, 0.5, 10, rng);
    const Array y = oracle::uniform({6, 6}, 0.5, 10, rng);
    const DepthMetrics m = depth_metrics(y, gt, Mask(6, 6));
    EXPECT_LE(m.delta1, m.delta2);
    EXPECT_LE(m.delta2, m.delta3);
    for (int k = 1; k < 3; ++k) {
      const Mask lo = delta_map(y, gt, Mask(6, 6), k), hi = delta_map(y, gt, Mask(6, 6), k + 1);
      for (std::size_t i = 0; i < lo.valid.size(); ++i) EXPECT_LE(lo.valid[i], hi.valid[i]);
    }
  }
}

TEST(DepthMetrics, ScaleInvariance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Array gt = oracle::uniform({5, 5}, 0.5, 10, rng);
    const Array y = oracle::uniform({5, 5}, 0.5, 10, rng);
    const double c = std::uniform_real_distribution<double>(0.1, 10)(rng);
    Array cy = y, cgt = gt;
    for (double& v : cy.vec()) v *= c;
    for (double& v : cgt.vec()) v *= c;
    const DepthMetrics a = depth_metrics(y, gt, Mask(5, 5));
    const DepthMetrics b = depth_metrics(cy, cgt, Mask(5, 5));
    EXPECT_NEAR(b.rmse, c * a.rmse, 1e-12 * c * (1 + a.rmse));
    EXPECT_NEAR(b.absrel, a.absrel, 1e-12);
    EXPECT_NEAR(b.log10, a.log10, 1e-12);
    EXPECT_EQ(b.delta1, a.delta1);
    EXPECT_EQ(b.delta2, a.delta2);
    EXPECT_EQ(b.delta3, a.delta3);
  }
}

TEST(DepthMetrics, MeanOverImages) {
  DepthMetrics a, b;
  a.rmse = 1;
  b.rmse = 3;
  a.delta1 = 0.5;
  b.delta1 = 1.0;
  const DepthMetrics both[] = {a, b};
  const DepthMetrics m = mean_depth_metrics(both);
  EXPECT_EQ(m.rmse, 2.0);
  EXPECT_EQ(m.delta1, 0.75);
}

TEST(UncertaintyMetrics, EnumerationExamples) {
  {
    const Mask acc = bools(2, 2, {1, 1, 0, 0});
    const Array u({2, 2}, {0.1, 0.2, 0.3, 0.4});
    EXPECT_EQ(median_threshold(u, Mask(2, 2)), 0.25);
    const UncertaintyMetrics m = uncertainty_metrics(acc, u, Mask(2, 2));
    EXPECT_EQ(m.p_acc_cer, 1.0);
    EXPECT_EQ(m.p_unc_ina, 1.0);
    EXPECT_EQ(m.pavpu, 1.0);
  }
  {
    const Mask acc(2, 2, true);
    const Array u({2, 2}, 0.7);
    EXPECT_EQ(median_threshold(u, Mask(2, 2)), 0.7);
    const UncertaintyMetrics m = uncertainty_metrics(acc, u, Mask(2, 2));
    EXPECT_EQ(m.counts, (UncertaintyCounts{0, 4, 0, 0}));
    EXPECT_FALSE(m.p_acc_cer.has_value());
    EXPECT_FALSE(m.p_unc_ina.has_value());
    EXPECT_EQ(m.pavpu, 0.0);
  }
  {
    const Mask acc = bools(2, 2, {1, 0, 1, 0});
    const Array u({2, 2}, {0.4, 0.1, 0.3, 0.2});
    EXPECT_EQ(median_threshold(u, Mask(2, 2)), 0.25);
    const UncertaintyMetrics m = uncertainty_metrics(acc, u, Mask(2, 2));
    EXPECT_EQ(m.counts, (UncertaintyCounts{0, 2, 2, 0}));
    EXPECT_EQ(m.p_acc_cer, 0.0);
    EXPECT_EQ(m.p_unc_ina, 0.0);
    EXPECT_EQ(m.pavpu, 0.0);
  }
}

TEST(UncertaintyMetrics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const Array gt = oracle::uniform({8, 8}, 0.5, 10, rng);
    Array y = gt;
    // Perturb so that roughly half of the pixels fall outside the delta1 band.
    std::normal_distribution<double> n(0, 0.25);
    for (double& v : y.vec()) v *= std::exp(n(rng));
    const Array u = oracle::uniform({8, 8}, 0, 2, rng);
    const Mask mask = oracle::random_mask(8, 8, 0.8, rng);
    const oracle::Uncertainty o = oracle::uncertainty(y, gt, u, mask);
    const UncertaintyMetrics m = uncertainty_metrics(delta_map(y, gt, mask), u, mask);
    EXPECT_NEAR(median_threshold(u, mask), o.threshold, 1e-12);
    EXPECT_EQ(m.counts, (UncertaintyCounts{o.ac, o.au, o.ic, o.iu}));
    expect_opt_near(m.p_acc_cer, o.p_acc_cer, 1e-12);
    expect_opt_near(m.p_unc_ina, o.p_unc_ina, 1e-12);
    expect_opt_near(m.pavpu, o.pavpu, 1e-12);
  }
}

TEST(UncertaintyMetrics, MedianSplitsDistinctValuesEvenly) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 1 + rng() % 9, w = 1 + rng() % 9;
    const Array u = oracle::uniform({h, w}, -5, 5, rng);
    const Mask mask = oracle::random_mask(h, w, 0.7, rng);
    if (mask.count() == 0) continue;
    const UncertaintyCounts c = uncertainty_counts(Mask(h, w, true), u, mask);
    const long certain = long(c.n_ac), uncertain = long(c.n_au);
    EXPECT_LE(std::abs(certain - uncertain), 1);
    EXPECT_EQ(c.total(), mask.count());
  }
}

TEST(UncertaintyMetrics, TiesCountAsUncertain) {
  const Array u({1, 3}, {1.0, 1.0, 1.0});
  const UncertaintyCounts c = uncertainty_counts(bools(1, 3, {1, 0, 1}), u, Mask(1, 3));
  EXPECT_EQ(c, (UncertaintyCounts{0, 2, 0, 1}));
}

TEST(UncertaintyMetrics, EmptyMaskIsError) {
  EXPECT_THROW(median_threshold(Array({2, 2}, 1.0), Mask(2, 2, false)), DomainError);
}

TEST(DatasetAggregation, MicroAverageExample) {
  const UncertaintyCounts per_image[] = {{1, 0, 0, 1}, {0, 1, 1, 0}};
  EXPECT_EQ(dataset_uncertainty_metrics(per_image).pavpu, 0.5);
}

TEST(DatasetAggregation, SingletonAndDuplication) {
  const UncertaintyCounts c{3, 1, 2, 5};
  const UncertaintyMetrics one = UncertaintyMetrics::from_counts(c);
  const UncertaintyCounts single[] = {c};
  const UncertaintyCounts twice[] = {c, c};
  EXPECT_EQ(dataset_uncertainty_metrics(single).pavpu, one.pavpu);
  const UncertaintyMetrics d = dataset_uncertainty_metrics(twice);
  EXPECT_EQ(d.p_acc_cer, one.p_acc_cer);
  EXPECT_EQ(d.p_unc_ina, one.p_unc_ina);
  EXPECT_EQ(d.pavpu, one.pavpu);
}

TEST(DatasetAggregation, MacroSkipsUndefinedRatios) {
  const UncertaintyCounts per_image[] = {{0, 4, 0, 0}, {1, 0, 1, 2}};
  const UncertaintyMetrics m = dataset_uncertainty_metrics(per_image, Aggregation::Macro);
  EXPECT_EQ(m.p_acc_cer, 0.5);
  EXPECT_EQ(m.pavpu, (0.0 + 0.75) / 2);
  EXPECT_EQ(m.counts, (UncertaintyCounts{1, 4, 1, 2}));
}

TEST(Efficiency, DefaultConfigFlopsAndParamsByHand) {
  ModelConfig c;
  c.height = c.width = 64;
  const std::uint64_t full = 64 * 64, half = 32 * 32, quarter = 16 * 16;
  const std::uint64_t enc = (2 * 9 * 3 * 16 * full + 16 * full) + (2 * 9 * 16 * 16 * half + 16 * half) +
                            (2 * 9 * 16 * 32 * half + 32 * half) + (2 * 9 * 32 * 32 * quarter + 32 * quarter) +
                            (2 * 9 * 32 * 64 * quarter + 64 * quarter);
  const std::uint64_t head = (2 * 9 * 96 * 32 * half + 32 * half) + (2 * 9 * 48 * 16 * full + 16 * full) +
                             (2 * 1 * 16 * 1 * full + 1 * full);
  EXPECT_EQ(encoder_flops(c, 64, 64), enc);
  EXPECT_EQ(head_flops(c, 64, 64), head);
  EXPECT_EQ(prediction_flops(c, UQConfig{}, 64, 64), enc + head);

  const std::size_t enc_params = (27 * 16 + 16) + (144 * 16 + 16) + (144 * 32 + 32) + (288 * 32 + 32) + (288 * 64 + 64);
  const std::size_t head_params = (864 * 32 + 32) + (432 * 16 + 16) + (16 + 1);
  EXPECT_EQ(param_count(build_model(c)), enc_params + head_params);
}

TEST(Efficiency, MethodCostRatios) {
  ModelConfig c;
  UQConfig base;
  const std::uint64_t b = prediction_flops(c, base, 64, 64);
  UQConfig mcd;
  mcd.method = Method::MCD;
  mcd.samples = 10;
  EXPECT_EQ(prediction_flops(c, mcd, 64, 64), 10 * b);
  UQConfig tta;
  tta.method = Method::TTA;
  EXPECT_EQ(prediction_flops(c, tta, 64, 64), 3 * b);
  tta.flips.vertical = false;
  EXPECT_EQ(prediction_flops(c, tta, 64, 64), 2 * b);

  ModelConfig se = c;
  se.num_heads = 10;
  UQConfig sec;
  sec.method = Method::SE;
  EXPECT_EQ(prediction_flops(se, sec, 64, 64), encoder_flops(c, 64, 64) + 10 * head_flops(c, 64, 64));
  EXPECT_EQ(param_count(build_model(se)) - param_count(build_model(c)), 9 * head_param_count(c));
}

TEST(Efficiency, BenchmarkStatistics) {
  std::size_t calls = 0;
  const EfficiencyReport r = benchmark([&] { ++calls; }, 50, 5);
  EXPECT_EQ(calls, 55u);
  EXPECT_EQ(r.runs, 50u);
  EXPECT_GE(r.std_ms, 0.0);
  if (r.mean_ms > 0) {
    EXPECT_NEAR(r.fps, 1000.0 / r.mean_ms, 1e-9 * r.fps);
  }
  EXPECT_THROW(benchmark([] {}, 1, 0), ConfigError);
}

TEST(Report, HeaderAndRowFormatting) {
  EXPECT_EQ(std::string(kReportHeader),
            "method,model,rmse,absrel,log10,delta1,delta2,delta3,p_acc_cer,p_unc_ina,pavpu,params,flops,"
            "infer_ms_mean,infer_ms_std,fps");
  ReportRow row;
  row.method = "gnll";
  row.model = "desk";
  row.depth = DepthMetrics{0.5, 0.1, 0.05, 0.9, 0.95, 1.0};
  row.uncertainty = UncertaintyMetrics::from_counts({0, 4, 0, 0});
  row.params = 12;
  row.flops = 34;
  EXPECT_EQ(format_report_row(row),
            "gnll,desk,0.500000,0.100000,0.050000,0.900000,0.950000,1.000000,n/a,n/a,0.000000,12,34,n/a,n/a,n/a");
  const auto fields = split_csv(format_report_row(row));
  EXPECT_EQ(fields.size(), split_csv(kReportHeader).size());
  EXPECT_EQ(split_csv("a,,b"), (std::vector<std::string>{"a", "", "b"}));
}

TEST(Report, Log10ModeNames) {
  EXPECT_EQ(parse_log10_mode("mae"), Log10Mode::Mae);
  EXPECT_EQ(log10_mode_name(Log10Mode::Rmse), "rmse");
  EXPECT_THROW(parse_log10_mode("rms"), ConfigError);
}
