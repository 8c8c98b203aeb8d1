#include "uqdepth/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "uqdepth/config.hpp"
#include "uqdepth/errors.hpp"
#include "uqdepth/imageio.hpp"
#include "uqdepth/parallel.hpp"
#include "uqdepth/random.hpp"

namespace uqd::cli {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kMethodColumn = 0;
constexpr std::size_t kModelColumn = 1;
constexpr std::size_t kDepthBegin = 2;
constexpr std::size_t kTimingBegin = 13;

struct Artifact {
  fs::path path;
  bool deterministic = true;
};

// Lists every output with its checksum. Timing files are flagged because
// their content legitimately differs between runs.
void write_run_manifest(const fs::path& path, const std::vector<std::string>& command, const std::string& config,
                        const json& seeds, const fs::path& root, const std::vector<Artifact>& artifacts) {
  json m;
  m["tool"] = "uqdepth";
  m["version"] = std::string(kToolVersion);
  m["command"] = command;
  m["config"] = config;
  m["seeds"] = seeds;
  json list = json::array();
  for (const Artifact& a : artifacts) {
    list.push_back({{"path", fs::relative(a.path, root).generic_string()},
                    {"sha256", io::sha256_file(a.path)},
                    {"deterministic", a.deterministic}});
  }
  m["artifacts"] = list;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << m.dump(2) << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) throw IoError("cannot write " + path.string());
}

std::vector<std::string> full_command(const std::vector<std::string>& args) {
  std::vector<std::string> c{"uqdepth"};
  c.insert(c.end(), args.begin(), args.end());
  return c;
}

std::vector<ImageSample> load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
  return read_dataset(dir);
}

struct LoadedRun {
  RunConfig config;
  DepthNet net;
};

LoadedRun load_run(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw IoError("run directory not found: " + dir);
  LoadedRun r{make_run_config(read_key_values(root / "config.txt")), load_checkpoint(root / "model.uqdn")};
  return r;
}

// Inference settings shared by eval and bench.
struct InferOverrides {
  std::string method;
  std::optional<std::size_t> samples;
  std::string flips;
  std::optional<std::uint64_t> uq_seed;
};

void add_infer_options(CLI::App& cmd, InferOverrides& o) {
  cmd.add_option("--method", o.method, "Inference method override (baseline|lc|gnll|mcd|se|tta)");
  cmd.add_option("--samples", o.samples, "MCD sample count T");
  cmd.add_option("--flips", o.flips, "TTA flips: h, v, h,v");
  cmd.add_option("--uq-seed", o.uq_seed, "Base seed for MCD dropout masks");
}

UQConfig resolve_uq(const LoadedRun& run, const InferOverrides& o) {
  RunConfig c = run.config;
  if (!o.method.empty()) apply_setting(c, "method", o.method);
  if (o.samples) c.train.uq.samples = *o.samples;
  if (!o.flips.empty()) apply_setting(c, "flips", o.flips);
  if (o.uq_seed) c.train.uq.base_seed = *o.uq_seed;
  UQConfig uq = c.train.uq;
  uq.heads = run.net.num_heads();
  if (uq.method == Method::SE && uq.heads < 2) {
    throw ConfigError("se inference needs a multi-head checkpoint, this run has " + std::to_string(uq.heads) +
                      " head");
  }
  uq.validate();
  return uq;
}

std::size_t sample_count(const UQConfig& uq) {
  switch (uq.method) {
    case Method::MCD: return uq.samples;
    case Method::SE: return uq.heads;
    case Method::TTA: return 1 + uq.flips.count();
    default: return 1;
  }
}

std::string report_text(const ReportRow& row) {
  return std::string(kReportHeader) + "\n" + format_report_row(row) + "\n";
}

Array accuracy_visual(const Mask& accurate, const Mask& valid) {
  Array rgb({3, valid.height, valid.width});
  const std::size_t n = valid.height * valid.width;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = !valid.valid[i] ? 0.5 : (accurate.valid[i] ? 1.0 : 0.0);
    for (std::size_t c = 0; c < 3; ++c) rgb[c * n + i] = v;
  }
  return rgb;
}

// ---------------------------------------------------------------------------

struct GenOptions {
  std::size_t n = 0;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  std::string noise = "none";
  std::optional<double> noise_level;
  std::string out;
};

int cmd_gen(const GenOptions& o, const std::vector<std::string>& args, std::ostream& err) {
  if (o.n == 0) throw ConfigError("--n must be at least 1");
  const std::size_t divisor = ModelConfig{}.spatial_divisor();
  if (o.size == 0 || o.size % divisor != 0) {
    throw ConfigError("--size " + std::to_string(o.size) + " must be a positive multiple of " +
                      std::to_string(divisor) + " (the encoder halves the resolution " +
                      std::to_string(ModelConfig{}.enc_channels.size()) + " times)");
  }
  SceneSpec spec;
  spec.height = spec.width = o.size;
  spec.seed = o.seed;
  spec.noise = parse_noise_mode(o.noise);
  if (spec.noise != NoiseMode::None) spec.noise_level = o.noise_level.value_or(0.05);
  spec.validate();

  const auto samples = generate_dataset(spec, o.n);
  const fs::path out(o.out);
  write_dataset(samples, out);

  std::vector<Artifact> artifacts{{out / "manifest.jsonl"}};
  for (const char* sub : {"images", "depths", "masks", "noise"}) {
    if (!fs::is_directory(out / sub)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(out / sub)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) artifacts.push_back({f});
  }
  std::ostringstream cfg;
  cfg << "n = " << o.n << "\nsize = " << o.size << "\nseed = " << o.seed << "\nnoise = " << noise_mode_name(spec.noise)
      << "\nnoise_level = " << spec.noise_level << '\n';
  write_run_manifest(out / "run_manifest.json", full_command(args), cfg.str(), {{"dataset", o.seed}}, out, artifacts);
  err << "wrote " << o.n << " samples to " << out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string method;
  std::optional<std::size_t> heads;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;
  std::string data;
  std::string val;
  std::string out;
};

int cmd_train(const TrainOptions& o, const std::vector<std::string>& args, std::ostream& err) {
  KeyValues entries;
  if (!o.config.empty()) entries = read_key_values(o.config);
  if (!o.method.empty()) entries.emplace_back("method", o.method);
  if (o.heads) entries.emplace_back("heads", std::to_string(*o.heads));
  if (o.samples) entries.emplace_back("samples", std::to_string(*o.samples));
  if (o.epochs) entries.emplace_back("epochs", std::to_string(*o.epochs));
  if (o.seed) entries.emplace_back("seed", std::to_string(*o.seed));
  for (const std::string& s : o.set) entries.push_back(split_assignment(s));
  const RunConfig config = make_run_config(entries);
  config.train.validate();

  const auto train_data = load_data(o.data);
  const auto val_data = o.val.empty() ? std::vector<ImageSample>{} : load_data(o.val);

  const fs::path out(o.out);
  ensure_dir(out);
  const TrainResult result = train(config.train, train_data, val_data, [&](const EpochRecord& r) {
    err << "epoch " << r.epoch + 1 << "/" << config.train.epochs << " " << static_cast<long>(r.wall_ms) << " ms";
    if (r.validation) err << "  val rmse " << r.validation->rmse << " delta1 " << r.validation->delta1;
    err << '\n';
  });

  write_text(out / "config.txt", config_snapshot(config));
  write_train_log_csv(result.log, out / "trainlog.csv");
  save_checkpoint(result.net, out / "model.uqdn");
  write_run_manifest(out / "run_manifest.json", full_command(args), config_snapshot(config),
                     {{"train", config.train.seed}, {"uq", config.train.uq.base_seed}}, out,
                     {{out / "config.txt"},
                      {out / "trainlog.csv"},
                      {out / "epochs.csv", false},
                      {out / "model.uqdn"}});
  err << "wrote run to " << out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string run;
  std::string data;
  InferOverrides infer;
  std::string log10_mode;
  std::string aggregation;
  std::string report;
  bool emit_maps = false;
};

int cmd_eval(const EvalOptions& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LoadedRun run = load_run(o.run);
  if (!o.log10_mode.empty()) apply_setting(run.config, "log10_mode", o.log10_mode);
  if (!o.aggregation.empty()) apply_setting(run.config, "aggregation", o.aggregation);
  const UQConfig uq = resolve_uq(run, o.infer);
  const auto data = load_data(o.data);

  struct PerImage {
    Prediction pred;
    DepthMetrics depth;
    Mask accurate;
    UncertaintyCounts counts;
  };
  std::vector<PerImage> results(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const ImageSample& s = data[i];
    PerImage& r = results[i];
    r.pred = predict(run.net, s.image, uq);
    if (!r.pred.depth.all_finite()) throw NumericalError("non-finite depth prediction for image " + std::to_string(i));
    r.depth = depth_metrics(r.pred.depth, s.depth, s.mask, run.config.log10_mode);
    r.accurate = delta_map(r.pred.depth, s.depth, s.mask, 1);
    if (r.pred.uncertainty) r.counts = uncertainty_counts(r.accurate, *r.pred.uncertainty, s.mask);
  });

  std::vector<DepthMetrics> depth;
  std::vector<UncertaintyCounts> counts;
  for (const PerImage& r : results) {
    depth.push_back(r.depth);
    counts.push_back(r.counts);
  }
  ReportRow row;
  row.method = std::string(method_name(uq.method));
  row.model = run.config.model_name;
  row.depth = mean_depth_metrics(depth);
  if (method_has_uncertainty(uq.method)) row.uncertainty = dataset_uncertainty_metrics(counts, run.config.aggregation);
  row.params = param_count(run.net);
  row.flops = prediction_flops(run.net.config, uq, data.front().height(), data.front().width());

  if (o.report.empty()) {
    out << report_text(row);
    return kOk;
  }
  const fs::path report(o.report);
  if (report.has_parent_path()) ensure_dir(report.parent_path());
  write_text(report, report_text(row));

  fs::path meta = report;
  meta += ".meta";
  std::ostringstream m;
  m << "method = " << row.method << "\nmodel = " << row.model << "\nsample_count = " << sample_count(uq)
    << "\nimages = " << data.size() << "\nlog10_mode = " << log10_mode_name(run.config.log10_mode)
    << "\naggregation = " << (run.config.aggregation == Aggregation::Micro ? "micro" : "macro")
    << "\neffective_lr = " << run.config.train.effective_lr() << '\n';
  write_text(meta, m.str());
  std::vector<Artifact> artifacts{{report}, {meta}};

  if (o.emit_maps) {
    const fs::path maps = report.parent_path() / (report.stem().string() + "_maps");
    ensure_dir(maps);
    for (std::size_t i = 0; i < data.size(); ++i) {
      char stem[16];
      std::snprintf(stem, sizeof stem, "%04zu", i);
      const std::string base = (maps / stem).string();
      const PerImage& r = results[i];
      const Mask& valid = data[i].mask;
      io::write_pfm(base + "_depth.pfm", r.pred.depth);
      io::write_ppm(base + "_depth.ppm", io::normalized_gray(r.pred.depth, &valid));
      io::write_ppm(base + "_accuracy.ppm", accuracy_visual(r.accurate, valid));
      artifacts.push_back({base + "_depth.pfm"});
      artifacts.push_back({base + "_depth.ppm"});
      artifacts.push_back({base + "_accuracy.ppm"});
      if (r.pred.uncertainty) {
        io::write_pfm(base + "_uncertainty.pfm", *r.pred.uncertainty);
        io::write_ppm(base + "_uncertainty.ppm", io::normalized_gray(*r.pred.uncertainty, &valid));
        artifacts.push_back({base + "_uncertainty.pfm"});
        artifacts.push_back({base + "_uncertainty.ppm"});
      }
    }
  }
  fs::path manifest = report;
  manifest += ".manifest.json";
  const fs::path root = report.has_parent_path() ? report.parent_path() : fs::path(".");
  write_run_manifest(manifest, full_command(args), config_snapshot(run.config), {{"uq", uq.base_seed}}, root,
                     artifacts);
  err << "wrote " << report.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchOptions {
  std::string run;
  InferOverrides infer;
  std::size_t runs = 1000;
  std::size_t warmup = 10;
  std::size_t size = 64;
  std::string report;
};

int cmd_bench(const BenchOptions& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (o.runs < 2) throw ConfigError("--runs must be at least 2 (standard deviation is undefined for one run)");
  const LoadedRun run = load_run(o.run);
  const UQConfig uq = resolve_uq(run, o.infer);
  if (o.size == 0 || o.size % run.net.config.spatial_divisor() != 0) {
    throw ConfigError("--size must be a positive multiple of " + std::to_string(run.net.config.spatial_divisor()));
  }
  SceneSpec spec;
  spec.height = spec.width = o.size;
  const Array image = generate_scene(spec, mix_seed(spec.seed, 0)).image;

  ReportRow row;
  row.method = std::string(method_name(uq.method));
  row.model = run.config.model_name;
  row.params = param_count(run.net);
  row.flops = prediction_flops(run.net.config, uq, o.size, o.size);
  EfficiencyReport timing = benchmark([&] { (void)predict(run.net, image, uq); }, o.runs, o.warmup);
  timing.trainable_params = row.params;
  timing.flops_per_forward = row.flops;
  row.timing = timing;

  if (o.report.empty()) {
    out << report_text(row);
    return kOk;
  }
  const fs::path report(o.report);
  if (report.has_parent_path()) ensure_dir(report.parent_path());
  write_text(report, report_text(row));
  fs::path manifest = report;
  manifest += ".manifest.json";
  const fs::path root = report.has_parent_path() ? report.parent_path() : fs::path(".");
  write_run_manifest(manifest, full_command(args), config_snapshot(run.config), {{"uq", uq.base_seed}}, root,
                     {{report, false}});
  err << "wrote " << report.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct CompareOptions {
  std::vector<std::string> inputs;
  std::string out;
};

bool timing_missing(const std::vector<std::string>& row) {
  return std::all_of(row.begin() + kTimingBegin, row.end(), [](const std::string& f) { return f == "n/a"; });
}

bool depth_missing(const std::vector<std::string>& row) {
  return std::all_of(row.begin() + kDepthBegin, row.begin() + kTimingBegin - 2,
                     [](const std::string& f) { return f == "n/a"; });
}

std::vector<std::string> report_files(const fs::path& input) {
  if (!fs::exists(input)) throw IoError("compare input not found: " + input.string());
  if (!fs::is_directory(input)) return {input.string()};
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream f(e.path());
    std::string first;
    if (std::getline(f, first) && first == kReportHeader) files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_compare(const CompareOptions& o, std::ostream& out, std::ostream& err) {
  if (o.inputs.empty()) throw ConfigError("compare needs at least one input");
  std::vector<std::string> files;
  for (const std::string& in : o.inputs) {
    for (std::string& f : report_files(in)) files.push_back(std::move(f));
  }
  if (files.empty()) throw ConfigError("compare found no report CSVs in its inputs");

  // Evaluation rows and benchmark rows for the same (method, model) merge
  // into one line; two rows supplying the same columns clash.
  std::vector<std::vector<std::string>> rows;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const std::string& f : files) {
    for (auto& row : read_report(f)) {
      const auto key = std::make_pair(row[kMethodColumn], row[kModelColumn]);
      const auto it = index.find(key);
      if (it == index.end()) {
        index.emplace(key, rows.size());
        rows.push_back(std::move(row));
        continue;
      }
      auto& prev = rows[it->second];
      const std::string clash = "duplicate method+model pair (" + key.first + ", " + key.second + ") in " + f;
      if (prev[11] != row[11] || prev[12] != row[12]) throw ConfigError(clash + " with differing params/flops");
      const bool fills_depth = depth_missing(prev) && !depth_missing(row) && timing_missing(row);
      const bool fills_timing = timing_missing(prev) && !timing_missing(row) && depth_missing(row);
      if (fills_depth) {
        std::copy(row.begin() + kDepthBegin, row.begin() + kTimingBegin - 2, prev.begin() + kDepthBegin);
      } else if (fills_timing) {
        std::copy(row.begin() + kTimingBegin, row.end(), prev.begin() + kTimingBegin);
      } else {
        throw ConfigError(clash);
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a[kModelColumn] != b[kModelColumn]) return a[kModelColumn] < b[kModelColumn];
    return parse_method(a[kMethodColumn]) < parse_method(b[kMethodColumn]);
  });

  std::string text = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) text += (i ? "," : "") + r[i];
    text += '\n';
  }
  if (o.out.empty()) {
    out << text;
  } else {
    const fs::path path(o.out);
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    write_text(path, text);
    err << "wrote " << rows.size() << " rows to " << path.string() << '\n';
  }
  return kOk;
}

}  // namespace

std::vector<std::vector<std::string>> read_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read report " + path);
  std::string line;
  if (!std::getline(f, line) || line != kReportHeader) throw CorruptionError(path + ": not a report (header mismatch)");
  const std::size_t columns = split_csv(kReportHeader).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != columns) {
      throw CorruptionError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                            " fields, got " + std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty quantification lab for monocular depth regression", "uqdepth"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic RGB/depth dataset");
  g->add_option("--n", gen.n, "Number of scenes")->required();
  g->add_option("--size", gen.size, "Square scene size in pixels")->capture_default_str();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--noise", gen.noise, "Label noise: none|homoscedastic|depth-proportional")->capture_default_str();
  g->add_option("--noise-level", gen.noise_level, "Noise std (meters) or factor of depth; default 0.05");
  g->add_option("--out", gen.out, "Output dataset directory")->required();

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a depth model with one UQ method");
  t->add_option("--config", tr.config, "key = value config file");
  t->add_option("--method", tr.method, "baseline|lc|gnll|mcd|se|tta");
  t->add_option("--heads", tr.heads, "SE head count M");
  t->add_option("--samples", tr.samples, "MCD sample count T recorded for evaluation");
  t->add_option("--epochs", tr.epochs, "Training epochs");
  t->add_option("--seed", tr.seed, "Training seed");
  t->add_option("--set", tr.set, "Extra key=value override (repeatable)");
  t->add_option("--data", tr.data, "Training dataset directory")->required();
  t->add_option("--val", tr.val, "Validation dataset directory");
  t->add_option("--out", tr.out, "Run directory")->required();

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Evaluate a trained run on a dataset");
  e->add_option("--run", ev.run, "Run directory")->required();
  e->add_option("--data", ev.data, "Test dataset directory")->required();
  add_infer_options(*e, ev.infer);
  e->add_option("--log10-mode", ev.log10_mode, "mae|rmse");
  e->add_option("--aggregation", ev.aggregation, "micro|macro");
  e->add_option("--report", ev.report, "Report CSV path (stdout when omitted)");
  e->add_flag("--emit-maps", ev.emit_maps, "Write depth, accuracy and uncertainty maps next to the report");

  BenchOptions bn;
  auto* b = app.add_subcommand("bench", "Time repeated predictions of a trained run");
  b->add_option("--run", bn.run, "Run directory")->required();
  add_infer_options(*b, bn.infer);
  b->add_option("--runs", bn.runs, "Timed predictions")->capture_default_str();
  b->add_option("--warmup", bn.warmup, "Untimed warm-up predictions")->capture_default_str();
  b->add_option("--size", bn.size, "Square input size")->capture_default_str();
  b->add_option("--report", bn.report, "Report CSV path (stdout when omitted)");

  CompareOptions cp;
  auto* c = app.add_subcommand("compare", "Merge report CSVs into one table");
  c->add_option("--runs", cp.inputs, "Report CSVs or directories containing them");
  c->add_option("--out", cp.out, "Combined CSV path (stdout when omitted)");

  std::vector<std::string> argv_store{"uqdepth"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, args, err);
    if (t->parsed()) return cmd_train(tr, args, err);
    if (e->parsed()) return cmd_eval(ev, args, out, err);
    if (b->parsed()) return cmd_bench(bn, args, out, err);
    if (c->parsed()) return cmd_compare(cp, out, err);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kConfig;
  } catch (const ShapeError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kConfig;
  } catch (const IoError& ex) {
    err << "i/o error: " << ex.what() << '\n';
    return kIo;
  } catch (const NumericalError& ex) {
    err << "numerical error: " << ex.what() << '\n';
    return kNumerical;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kNumerical;
  }
  return kConfig;
}

}  // namespace uqd::cli
