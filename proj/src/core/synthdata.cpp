#include "uqdepth/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "json.hpp"

#include "uqdepth/autodiff.hpp"
#include "uqdepth/errors.hpp"
#include "uqdepth/imageio.hpp"
#include "uqdepth/parallel.hpp"
#include "uqdepth/random.hpp"

namespace uqd {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Separate streams so that label noise never perturbs the clean scene.
enum Stream : std::uint64_t { kLayout = 1, kImageNoise = 2, kLabelNoise = 3, kMask = 4 };

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void random_albedo(std::mt19937_64& rng, double out[3]) {
  // Random hue with the brightest channel at 1, so max over channels of the
  // shaded pixel equals the inverse-depth term.
  std::uniform_real_distribution<double> u(0.2, 1.0);
  for (int c = 0; c < 3; ++c) out[c] = u(rng);
  const double mx = std::max({out[0], out[1], out[2]});
  for (int c = 0; c < 3; ++c) out[c] /= mx;
}

std::string index_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.%s", i, ext);
  return buf;
}

}  // namespace

NoiseMode parse_noise_mode(std::string_view name) {
  if (name == "none") return NoiseMode::None;
  if (name == "homoscedastic") return NoiseMode::Homoscedastic;
  if (name == "depth-proportional" || name == "proportional") return NoiseMode::DepthProportional;
  throw ConfigError("unknown noise mode '" + std::string(name) + "' (expected none|homoscedastic|depth-proportional)");
}

std::string_view noise_mode_name(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::None: return "none";
    case NoiseMode::Homoscedastic: return "homoscedastic";
    case NoiseMode::DepthProportional: return "depth-proportional";
  }
  return "none";
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
  if (!(min_depth > 0 && min_depth < max_depth)) throw ConfigError("scene depth range needs 0 < min_depth < max_depth");
  if (min_primitives > max_primitives) throw ConfigError("min_primitives exceeds max_primitives");
  if (noise != NoiseMode::None && !(noise_level > 0)) throw ConfigError("noise level must be positive when noise is on");
  if (!(image_noise >= 0)) throw ConfigError("image_noise must be nonnegative");
  if (!(invalid_fraction >= 0 && invalid_fraction < 1)) throw ConfigError("invalid_fraction must lie in [0, 1)");
}

bool Primitive::covers(double px, double py) const {
  const double dx = px - cx, dy = py - cy;
  if (kind == Kind::Rect) return std::fabs(dx) <= half_w && std::fabs(dy) <= half_h;
  return dx * dx + dy * dy <= half_w * half_w;
}

double SceneLayout::plane_depth(std::size_t row) const {
  const double t = (static_cast<double>(row) + 0.5) / static_cast<double>(height);
  const double inv = (1.0 - t) / far_depth + t / near_depth;
  return 1.0 / inv;
}

SceneLayout layout_scene(const SceneSpec& spec, std::uint64_t sample_seed) {
  spec.validate();
  std::mt19937_64 rng(mix_seed(sample_seed, kLayout));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SceneLayout s;
  s.height = spec.height;
  s.width = spec.width;
  const double range = spec.max_depth - spec.min_depth;
  s.near_depth = uniform(spec.min_depth, spec.min_depth + 0.25 * range);
  s.far_depth = uniform(spec.min_depth + 0.6 * range, spec.max_depth);
  random_albedo(rng, s.plane_albedo);
  const auto count = std::uniform_int_distribution<std::size_t>(spec.min_primitives, spec.max_primitives)(rng);
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  for (std::size_t i = 0; i < count; ++i) {
    Primitive p;
    p.kind = uniform(0, 1) < 0.5 ? Primitive::Kind::Rect : Primitive::Kind::Disk;
    p.cx = uniform(0, w);
    p.cy = uniform(0, h);
    p.half_w = uniform(w / 16, w / 4);
    p.half_h = uniform(h / 16, h / 4);
    p.depth = uniform(spec.min_depth, spec.max_depth);
    random_albedo(rng, p.albedo);
    s.primitives.push_back(p);
  }
  return s;
}

namespace {

// Per-pixel nearest surface: depth and the index of the winning primitive
// (-1 for the ground plane).
void render(const SceneLayout& layout, Array& depth, std::vector<int>& owner) {
  depth = Array({layout.height, layout.width});
  owner.assign(layout.height * layout.width, -1);
  for (std::size_t y = 0; y < layout.height; ++y) {
    const double plane = layout.plane_depth(y);
    for (std::size_t x = 0; x < layout.width; ++x) {
      double best = plane;
      int who = -1;
      for (std::size_t i = 0; i < layout.primitives.size(); ++i) {
        const Primitive& p = layout.primitives[i];
        if (p.depth < best && p.covers(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          best = p.depth;
          who = static_cast<int>(i);
        }
      }
      depth.at(y, x) = f32(best);
      owner[y * layout.width + x] = who;
    }
  }
}

}  // namespace

Array render_depth(const SceneLayout& layout) {
  Array depth;
  std::vector<int> owner;
  render(layout, depth, owner);
  return depth;
}

ImageSample generate_scene(const SceneSpec& spec, std::uint64_t sample_seed) {
  const SceneLayout layout = layout_scene(spec, sample_seed);
  const std::size_t h = spec.height, w = spec.width;
  ImageSample s;
  s.sample_seed = sample_seed;
  std::vector<int> owner;
  render(layout, s.depth, owner);

  std::mt19937_64 img_rng(mix_seed(sample_seed, kImageNoise));
  std::normal_distribution<double> pixel_noise(0.0, 1.0);
  s.image = Array({3, h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const int who = owner[y * w + x];
        const double albedo = who < 0 ? layout.plane_albedo[c] : layout.primitives[static_cast<std::size_t>(who)].albedo[c];
        double v = albedo * spec.min_depth / s.depth.at(y, x);
        if (spec.image_noise > 0) v += spec.image_noise * pixel_noise(img_rng);
        s.image.at(c, y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      }
    }
  }

  if (spec.noise != NoiseMode::None) {
    std::mt19937_64 label_rng(mix_seed(sample_seed, kLabelNoise));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Array sigma({h, w});
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      const double clean = s.depth[i];
      sigma[i] = f32(spec.noise == NoiseMode::Homoscedastic ? spec.noise_level : spec.noise_level * clean);
      s.depth[i] = f32(std::clamp(clean + sigma[i] * gauss(label_rng), spec.min_depth, spec.max_depth));
    }
    s.noise_sigma = std::move(sigma);
  }

  std::mt19937_64 mask_rng(mix_seed(sample_seed, kMask));
  std::bernoulli_distribution invalid(spec.invalid_fraction);
  s.mask = Mask(h, w, true);
  for (auto& v : s.mask.valid) v = invalid(mask_rng) ? 0 : 1;
  if (s.mask.count() == 0) s.mask.valid[0] = 1;
  return s;
}

std::vector<ImageSample> generate_dataset(const SceneSpec& spec, std::size_t count) {
  spec.validate();
  std::vector<ImageSample> out(count);
  parallel_for(count, [&](std::size_t i) { out[i] = generate_scene(spec, mix_seed(spec.seed, i)); });
  return out;
}

ImageSample augment(const ImageSample& sample, std::size_t crop_h, std::size_t crop_w, double flip_prob,
                    std::mt19937_64& rng) {
  const std::size_t h = sample.height(), w = sample.width();
  if (crop_h == 0 || crop_w == 0 || crop_h > h || crop_w > w) {
    throw ConfigError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) + " does not fit sample " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, h - crop_h)(rng);
  const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, w - crop_w)(rng);
  const bool flip = std::bernoulli_distribution(std::clamp(flip_prob, 0.0, 1.0))(rng);

  auto crop_plane = [&](const Array& a) {
    const std::size_t planes = a.rank() == 3 ? a.dim(0) : 1;
    Array out(a.rank() == 3 ? Shape{planes, crop_h, crop_w} : Shape{crop_h, crop_w});
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < crop_h; ++y) {
        for (std::size_t x = 0; x < crop_w; ++x) {
          out[(p * crop_h + y) * crop_w + x] = a[(p * h + oy + y) * w + ox + x];
        }
      }
    }
    return flip ? ad::flip_h(out) : out;
  };

  ImageSample out;
  out.sample_seed = sample.sample_seed;
  out.image = crop_plane(sample.image);
  out.depth = crop_plane(sample.depth);
  if (sample.noise_sigma) out.noise_sigma = crop_plane(*sample.noise_sigma);
  out.mask = Mask(crop_h, crop_w, false);
  for (std::size_t y = 0; y < crop_h; ++y) {
    for (std::size_t x = 0; x < crop_w; ++x) {
      const std::size_t sx = flip ? ox + crop_w - 1 - x : ox + x;
      out.mask.valid[y * crop_w + x] = sample.mask.valid[(oy + y) * w + sx];
    }
  }
  return out;
}

void write_dataset(std::span<const ImageSample> samples, const fs::path& dir) {
  if (samples.empty()) throw ConfigError("refusing to write an empty dataset");
  std::error_code ec;
  for (const char* sub : {"images", "depths", "masks"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }
  const bool noisy = samples.front().noise_sigma.has_value();
  if (noisy) fs::create_directories(dir / "noise", ec);
  if (ec) throw IoError("cannot create " + (dir / "noise").string());

  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  manifest << json{{"type", "header"},
                   {"count", samples.size()},
                   {"height", samples.front().height()},
                   {"width", samples.front().width()},
                   {"noise_map", noisy}}
                  .dump()
           << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageSample& s = samples[i];
    if (s.noise_sigma.has_value() != noisy) throw ConfigError("dataset mixes samples with and without noise maps");
    std::vector<std::string> files{"images/" + index_name(i, "ppm"), "depths/" + index_name(i, "pfm"),
                                   "masks/" + index_name(i, "pgm")};
    io::write_ppm(dir / files[0], s.image);
    io::write_pfm(dir / files[1], s.depth);
    io::write_pgm(dir / files[2], s.mask);
    if (noisy) {
      files.push_back("noise/" + index_name(i, "pfm"));
      io::write_pfm(dir / files[3], *s.noise_sigma);
    }
    for (const std::string& f : files) {
      manifest << json{{"file", f}, {"seed", s.sample_seed}, {"checksum", io::sha256_file(dir / f)}}.dump() << '\n';
    }
  }
  if (!manifest) throw IoError("failed writing manifest in " + dir.string());
}

std::vector<ImageSample> read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.jsonl";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("no dataset manifest at " + manifest_path.string());
  std::string line;
  if (!std::getline(manifest, line)) throw CorruptionError(manifest_path.string() + ": empty manifest");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw CorruptionError(manifest_path.string() + ": bad header record: " + e.what());
  }
  if (header.value("type", "") != "header" || !header.contains("count")) {
    throw CorruptionError(manifest_path.string() + ": missing header record");
  }
  const auto count = header["count"].get<std::size_t>();
  const bool noisy = header.value("noise_map", false);

  struct Entry {
    std::string checksum;
    std::uint64_t seed = 0;
  };
  std::map<std::string, Entry> entries;
  std::set<std::uint64_t> seen_seeds;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      entries[rec.at("file").get<std::string>()] = {rec.at("checksum").get<std::string>(),
                                                     rec.at("seed").get<std::uint64_t>()};
    } catch (const json::exception& e) {
      throw CorruptionError(manifest_path.string() + ":" + std::to_string(line_no) + ": bad record: " + e.what());
    }
  }
  const std::size_t per_sample = noisy ? 4 : 3;
  if (entries.size() != count * per_sample) {
    throw CorruptionError(manifest_path.string() + ": structural mismatch, header count " + std::to_string(count) +
                          " implies " + std::to_string(count * per_sample) + " files, manifest lists " +
                          std::to_string(entries.size()));
  }
  std::error_code ec;
  const auto on_disk = std::distance(fs::directory_iterator(dir / "images", ec), fs::directory_iterator{});
  if (ec || static_cast<std::size_t>(on_disk) != count) {
    throw CorruptionError(dir.string() + ": structural mismatch, " + std::to_string(count) + " samples in manifest but " +
                          std::to_string(ec ? 0 : on_disk) + " files in images/");
  }

  auto verified = [&](const std::string& rel) -> fs::path {
    const auto it = entries.find(rel);
    if (it == entries.end()) throw CorruptionError(manifest_path.string() + ": no record for " + rel);
    const fs::path p = dir / rel;
    if (!fs::exists(p)) throw IoError("missing dataset file " + p.string());
    if (io::sha256_file(p) != it->second.checksum) throw CorruptionError("checksum mismatch in " + p.string());
    return p;
  };

  std::vector<ImageSample> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    ImageSample& s = out[i];
    const std::string img = "images/" + index_name(i, "ppm");
    s.image = io::read_ppm(verified(img));
    s.depth = io::read_pfm(verified("depths/" + index_name(i, "pfm")));
    s.mask = io::read_pgm_mask(verified("masks/" + index_name(i, "pgm")));
    if (noisy) s.noise_sigma = io::read_pfm(verified("noise/" + index_name(i, "pfm")));
    s.sample_seed = entries[img].seed;
    if (s.image.dim(1) != s.height() || s.image.dim(2) != s.width() || s.mask.height != s.height() ||
        s.mask.width != s.width()) {
      throw CorruptionError(dir.string() + ": sample " + std::to_string(i) + " planes disagree in size");
    }
    if (s.mask.count() == 0) throw CorruptionError(dir.string() + ": sample " + std::to_string(i) + " has an empty mask");
  }
  return out;
}

}  // namespace uqd
