// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "support/random_graph.hpp"
#include "uqdepth/cli.hpp"
#include "uqdepth/losses.hpp"
#include "uqdepth/metrics.hpp"
#include "uqdepth/model.hpp"
#include "uqdepth/random.hpp"
#include "uqdepth/synthdata.hpp"
#include "uqdepth/trainer.hpp"
#include "uqdepth/uq.hpp"

using namespace uqd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

Outcome autodiff_graphs() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    gen::RandomGraph rg;
    gen::build_random_graph(rg, rng);
    for (ad::Var leaf : rg.grad_leaves) worst = std::max(worst, ad::grad_check(rg.graph, rg.root, leaf, 1e-5));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0, "max rel err " + fmt("%.2e", worst) + " in " + fmt("%.2f", secs) + " s"};
}

Outcome loss_identities() {
  std::mt19937_64 rng(50);
  double worst_si = 0, worst_gnll = 0, worst_lc = 0;
  const LossConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 2 + rng() % 8, w = 2 + rng() % 8;
    const Array gt = oracle::uniform({h, w}, 0.5, 10, rng);
    const Array y = oracle::uniform({h, w}, 0.5, 10, rng);
    Mask mask = oracle::random_mask(h, w, 0.8, rng);
    mask.valid[0] = 1;
    ad::Graph g;
    worst_si = std::max(worst_si, std::fabs(si_loss(g.leaf(gt), gt, mask, cfg).value()[0]));
    worst_gnll = std::max(worst_gnll, std::fabs(gnll_loss(g.leaf(gt), g.leaf(Array({h, w}, 1.0)), gt, mask, cfg).value()[0]));
    double expected = 0;
    double n = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!mask.valid[i]) continue;
      const double d = std::log(y[i]) - std::log(gt[i]);
      expected += (1 - cfg.lambda) * d * d;
      n += 1;
    }
    expected /= n;
    const double lc = lc_loss(g.leaf(y), g.leaf(Array({h, w}, 1.0)), gt, mask, cfg).value()[0];
    worst_lc = std::max(worst_lc, std::fabs(lc - expected));
  }
  const double worst = std::max({worst_si, worst_gnll, worst_lc});
  return {worst <= 1e-12, "max |err| si " + fmt("%.1e", worst_si) + ", gnll " + fmt("%.1e", worst_gnll) + ", lc " +
                              fmt("%.1e", worst_lc)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(646);
  double worst = 0;
  bool counts_match = true;
  auto gap = [&](const std::optional<double>& a, const std::optional<double>& b) {
    if (a.has_value() != b.has_value()) return HUGE_VAL;
    return a ? std::fabs(*a - *b) : 0.0;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const Array gt = oracle::uniform({8, 8}, 0.5, 10, rng);
    Array y = gt;
    std::normal_distribution<double> n(0, 0.25);
    for (double& v : y.vec()) v *= std::exp(n(rng));
    const Array u = oracle::uniform({8, 8}, 0, 1, rng);
    const Mask mask = oracle::random_mask(8, 8, 0.8, rng);
    if (mask.count() == 0) continue;
    const oracle::Depth od = oracle::depth(y, gt, mask);
    const DepthMetrics mae = depth_metrics(y, gt, mask, Log10Mode::Mae);
    const DepthMetrics rms = depth_metrics(y, gt, mask, Log10Mode::Rmse);
    for (double e : {mae.rmse - od.rmse, mae.absrel - od.absrel, mae.log10 - od.log10_mae, rms.log10 - od.log10_rmse,
                     mae.delta1 - od.delta[0], mae.delta2 - od.delta[1], mae.delta3 - od.delta[2]}) {
      worst = std::max(worst, std::fabs(e));
    }
    const oracle::Uncertainty ou = oracle::uncertainty(y, gt, u, mask);
    const UncertaintyMetrics um = uncertainty_metrics(delta_map(y, gt, mask), u, mask);
    counts_match = counts_match && um.counts == UncertaintyCounts{ou.ac, ou.au, ou.ic, ou.iu};
    worst = std::max({worst, gap(um.p_acc_cer, ou.p_acc_cer), gap(um.p_unc_ina, ou.p_unc_ina), gap(um.pavpu, ou.pavpu)});
  }

  auto mask_of = [](std::initializer_list<int> v) {
    Mask m(2, 2, false);
    std::size_t i = 0;
    for (int x : v) m.valid[i++] = static_cast<std::uint8_t>(x);
    return m;
  };
  const Mask all(2, 2);
  const UncertaintyMetrics e1 = uncertainty_metrics(mask_of({1, 1, 0, 0}), Array({2, 2}, {0.1, 0.2, 0.3, 0.4}), all);
  const UncertaintyMetrics e2 = uncertainty_metrics(Mask(2, 2, true), Array({2, 2}, 0.5), all);
  const UncertaintyMetrics e3 = uncertainty_metrics(mask_of({1, 0, 1, 0}), Array({2, 2}, {0.4, 0.1, 0.3, 0.2}), all);
  const bool examples = e1.p_acc_cer == 1.0 && e1.p_unc_ina == 1.0 && e1.pavpu == 1.0 && !e2.p_acc_cer &&
                        e2.pavpu == 0.0 && e3.p_acc_cer == 0.0 && e3.p_unc_ina == 0.0 && e3.pavpu == 0.0 &&
                        median_threshold(Array({2, 2}, {0.1, 0.2, 0.3, 0.4}), all) == 0.25;
  return {worst <= 1e-12 && counts_match && examples,
          "max |err| " + fmt("%.1e", worst) + ", counts " + (counts_match ? "match" : "differ") +
              ", enumeration examples " + (examples ? "exact" : "wrong")};
}

Outcome aggregation() {
  std::mt19937_64 rng(1000);
  double worst_oracle = 0, worst_perm = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = 2 + rng() % 11;
    const std::size_t n = 1 + rng() % 40;
    SampleSet set;
    const double centre = std::uniform_real_distribution<double>(0.5, 10)(rng);
    for (std::size_t k = 0; k < t; ++k) set.samples.push_back(oracle::uniform({n}, centre - 0.5, centre + 0.5, rng));
    const MeanVariance mv = aggregate(set);
    std::vector<double> mean, var;
    oracle::mean_variance(set.samples, mean, var);
    SampleSet shuffled = set;
    std::shuffle(shuffled.samples.begin(), shuffled.samples.end(), rng);
    const MeanVariance pv = aggregate(shuffled);
    for (std::size_t i = 0; i < n; ++i) {
      worst_oracle = std::max({worst_oracle, std::fabs(mv.mean[i] - mean[i]), std::fabs(mv.variance[i] - var[i])});
      worst_perm = std::max({worst_perm, std::fabs(mv.mean[i] - pv.mean[i]), std::fabs(mv.variance[i] - pv.variance[i])});
    }
  }
  return {worst_oracle <= 1e-12 && worst_perm <= 1e-12,
          "oracle max |err| " + fmt("%.1e", worst_oracle) + ", permutation max |diff| " + fmt("%.1e", worst_perm)};
}

Outcome schedule_optimizer() {
  SceneSpec spec;
  spec.height = spec.width = 16;
  spec.seed = 3;
  const auto data = generate_dataset(spec, 10);
  TrainConfig c;
  c.model.enc_channels = {4, 8};
  c.model.bottleneck_channels = 8;
  c.crop = 16;
  c.batch_size = 4;
  c.epochs = 2;
  c.val_every = 0;
  const TrainResult r = train(c, data, {});
  const std::size_t total = r.log.iterations.size();
  bool lr_exact = total == 6;
  for (std::size_t i = 0; i < total; ++i) {
    const double expected = c.effective_lr() * std::pow(1.0 - double(i) / double(total), c.power);
    lr_exact = lr_exact && r.log.iterations[i].iteration == i && r.log.iterations[i].lr == expected;
  }
  Array theta = Array::scalar(1.0);
  std::vector<Array*> params{&theta};
  AdamWState st;
  st.init(params);
  AdamWHyper h;
  h.lr = 0.1;
  h.weight_decay = 0.01;
  adamw_step(params, {Array::scalar(1.0)}, st, h);
  const double err = std::fabs(theta[0] - 0.89900);
  return {lr_exact && err <= 1e-5, std::to_string(total) + " logged lr values " + (lr_exact ? "exact" : "differ") +
                                       ", AdamW theta " + fmt("%.6f", theta[0])};
}

struct DeskRun {
  std::vector<ImageSample> train_data, val_data;
  TrainResult result;
  double seconds = 0;
};

DeskRun desk_run(Method method, NoiseMode noise) {
  SceneSpec spec;
  spec.seed = 7;
  spec.noise = noise;
  spec.noise_level = noise == NoiseMode::None ? 0.0 : 0.05;
  DeskRun d;
  const auto t0 = Clock::now();
  d.train_data = generate_dataset(spec, 256);
  SceneSpec held_out = spec;
  held_out.seed = mix_seed(7, 99);
  d.val_data = generate_dataset(held_out, 64);
  TrainConfig c;
  c.seed = 7;
  c.epochs = 25;
  c.crop = 32;
  c.uq.method = method;
  c.val_every = 0;
  d.result = train(c, d.train_data, {});
  d.seconds = seconds_since(t0);
  return d;
}

Outcome desk_training(const DeskRun& d) {
  const auto t0 = Clock::now();
  std::vector<DepthMetrics> per_image;
  for (const ImageSample& s : d.val_data) {
    per_image.push_back(depth_metrics(predict_baseline(d.result.net, s.image).depth, s.depth, s.mask));
  }
  const double delta1 = mean_depth_metrics(per_image).delta1;
  const double secs = d.seconds + seconds_since(t0);
  return {delta1 >= 0.90 && secs < 600.0, "held-out delta1 " + fmt("%.4f", delta1) + " after 25 epochs in " +
                                              fmt("%.0f", secs) + " s"};
}

Outcome gnll_sanity(const DeskRun& d) {
  std::vector<double> s2, sigma2;
  for (const ImageSample& s : d.val_data) {
    const Prediction p = predict_gnll(d.result.net, s.image);
    for (std::size_t i = 0; i < s.depth.size(); ++i) {
      if (!s.mask.valid[i]) continue;
      s2.push_back((*p.uncertainty)[i]);
      sigma2.push_back((*s.noise_sigma)[i] * (*s.noise_sigma)[i]);
    }
  }
  const double rho = oracle::spearman(s2, sigma2);
  return {rho > 0.5, "Spearman(s2, sigma2) " + fmt("%.4f", rho) + " over " + std::to_string(s2.size()) + " pixels"};
}

Outcome mcd_degenerate(const DeskRun& d) {
  DepthNet net = d.result.net;
  std::size_t nonzero_at_zero = 0, positive = 0, total = 0;
  net.config.dropout_rate = 0.0;
  for (const ImageSample& s : d.val_data) {
    const Prediction p = predict_mcd(net, s.image, 10, 5, true);
    for (double v : p.uncertainty->data()) nonzero_at_zero += v != 0.0;
  }
  net.config.dropout_rate = 0.10;
  for (const ImageSample& s : d.val_data) {
    const Prediction p = predict_mcd(net, s.image, 10, 5);
    for (double v : p.uncertainty->data()) {
      positive += v > 0.0;
      ++total;
    }
  }
  const double frac = double(positive) / double(total);
  return {nonzero_at_zero == 0 && frac > 0.99, "rate 0: " + std::to_string(nonzero_at_zero) +
                                                   " nonzero s2 pixels; rate 0.10: " + fmt("%.4f", 100 * frac) +
                                                   "% pixels with s2 > 0"};
}

Outcome efficiency() {
  ModelConfig c;
  UQConfig base;
  const std::uint64_t b = prediction_flops(c, base, 64, 64);
  UQConfig mcd;
  mcd.method = Method::MCD;
  mcd.samples = 10;
  UQConfig tta;
  tta.method = Method::TTA;
  const std::uint64_t fm = prediction_flops(c, mcd, 64, 64), ft = prediction_flops(c, tta, 64, 64);
  ModelConfig se = c;
  se.num_heads = 10;
  std::size_t head_set = 0;
  for (const ConvLayerSpec& s : head_layer_specs(c)) head_set += s.param_count();
  const std::size_t extra = param_count(build_model(se)) - param_count(build_model(c));
  return {fm == 10 * b && ft == 3 * b && extra == 9 * head_set,
          "MCD/base flops " + std::to_string(fm) + "/" + std::to_string(b) + ", TTA " + std::to_string(ft) +
              ", SE extra params " + std::to_string(extra) + " = 9 x " + std::to_string(head_set)};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "uqdepth_acceptance_det";
  fs::remove_all(root);
  std::vector<std::string> reports;
  bool ok = true;
  for (int pass = 0; pass < 2; ++pass) {
    const fs::path dir = root / std::to_string(pass);
    auto run = [&](std::vector<std::string> args) {
      std::ostringstream out, err;
      if (cli::run_cli(args, out, err) != 0) {
        std::fprintf(stderr, "%s", err.str().c_str());
        ok = false;
      }
    };
    run({"gen", "--n", "24", "--size", "32", "--seed", "11", "--out", (dir / "train").string()});
    run({"gen", "--n", "8", "--size", "32", "--seed", "12", "--out", (dir / "test").string()});
    run({"train", "--method", "mcd", "--epochs", "2", "--seed", "5", "--set", "batch_size=8", "--set", "micro_batch=4",
         "--data", (dir / "train").string(), "--out", (dir / "run").string()});
    run({"eval", "--run", (dir / "run").string(), "--data", (dir / "test").string(), "--samples", "10", "--report",
         (dir / "report.csv").string()});
    reports.push_back(read_file(dir / "report.csv"));
  }
  fs::remove_all(root);
  const bool same = ok && !reports[0].empty() && reports[0] == reports[1];
  return {same, std::string("two gen/train/eval pipelines ") + (same ? "produced byte-identical" : "differ in") +
                    " report CSVs (" + std::to_string(reports[0].size()) + " bytes)"};
}

Outcome median_property() {
  std::mt19937_64 rng(1001);
  std::size_t violations = 0, maps = 0;
  while (maps < 1000) {
    const std::size_t h = 1 + rng() % 16, w = 1 + rng() % 16;
    const Array u = oracle::uniform({h, w}, 0, 1, rng);
    const Mask mask = oracle::random_mask(h, w, 0.9, rng);
    if (mask.count() == 0) continue;
    ++maps;
    const UncertaintyCounts c = uncertainty_counts(Mask(h, w, true), u, mask);
    const long diff = long(c.n_ac) - long(c.n_au);
    violations += std::labs(diff) > 1;
  }
  return {violations == 0, std::to_string(violations) + " violations of |certain - uncertain| <= 1 over 1000 maps"};
}

}  // namespace

int main() {
  std::size_t failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %-22s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  report("autodiff", autodiff_graphs);
  report("loss-identities", loss_identities);
  report("metric-oracle", metric_oracle);
  report("aggregation", aggregation);
  report("schedule-optimizer", schedule_optimizer);
  DeskRun baseline;
  report("desk-training", [&] {
    baseline = desk_run(Method::Baseline, NoiseMode::None);
    return desk_training(baseline);
  });
  report("gnll-uncertainty", [] { return gnll_sanity(desk_run(Method::GNLL, NoiseMode::DepthProportional)); });
  report("mcd-degenerate", [&] { return mcd_degenerate(baseline); });
  report("efficiency", efficiency);
  report("determinism", determinism);
  report("median-threshold", median_property);

  std::printf("%zu of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
