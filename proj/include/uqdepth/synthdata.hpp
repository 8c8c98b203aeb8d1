#pragma once

// Procedural RGB/depth scenes: a tilted ground plane (farther toward the
// top of the image) occluded nearest-wins by rectangles and disks. Pixel
// brightness is albedo times inverse depth, so depth is recoverable from
// appearance up to sensor noise. Optional label noise with a recorded
// per-pixel standard deviation serves as an uncertainty oracle.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "uqdepth/array.hpp"

namespace uqd {

enum class NoiseMode { None, Homoscedastic, DepthProportional };

NoiseMode parse_noise_mode(std::string_view name);
std::string_view noise_mode_name(NoiseMode mode);

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  double min_depth = 0.5;
  double max_depth = 10.0;
  std::size_t min_primitives = 2;
  std::size_t max_primitives = 8;
  NoiseMode noise = NoiseMode::None;
  // Standard deviation in meters (homoscedastic) or factor of depth
  // (depth-proportional).
  double noise_level = 0.0;
  // Std of additive image noise before 8-bit quantization.
  double image_noise = 0.004;
  // Fraction of pixels without ground truth.
  double invalid_fraction = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ImageSample {
  Array image;  // 3 x H x W, 8-bit levels in [0, 1]
  Array depth;  // H x W meters, f32-representable
  Mask mask;
  std::uint64_t sample_seed = 0;
  std::optional<Array> noise_sigma;  // H x W, present when label noise was injected

  std::size_t height() const { return depth.dim(0); }
  std::size_t width() const { return depth.dim(1); }
  friend bool operator==(const ImageSample&, const ImageSample&) = default;
};

struct Primitive {
  enum class Kind { Rect, Disk } kind = Kind::Rect;
  double cx = 0, cy = 0;     // center, pixel units
  double half_w = 0, half_h = 0;  // rect half extents; disk uses half_w as radius
  double depth = 0;
  double albedo[3] = {1, 1, 1};

  bool covers(double px, double py) const;
};

struct SceneLayout {
  std::size_t height = 0, width = 0;
  double near_depth = 0;  // ground plane depth at the bottom edge
  double far_depth = 0;   // ground plane depth at the top edge
  double plane_albedo[3] = {1, 1, 1};
  std::vector<Primitive> primitives;

  // Perspective ground plane: inverse depth is linear in the row.
  double plane_depth(std::size_t row) const;
};

SceneLayout layout_scene(const SceneSpec& spec, std::uint64_t sample_seed);

// Nearest-wins depth of a layout, rounded to f32.
Array render_depth(const SceneLayout& layout);

ImageSample generate_scene(const SceneSpec& spec, std::uint64_t sample_seed);

// Samples with seeds mix_seed(spec.seed, i); generation runs in parallel.
std::vector<ImageSample> generate_dataset(const SceneSpec& spec, std::size_t count);

// Random crop of crop_h x crop_w applied to every plane, then a horizontal
// flip with probability flip_prob.
ImageSample augment(const ImageSample& sample, std::size_t crop_h, std::size_t crop_w, double flip_prob,
                    std::mt19937_64& rng);

// Layout: images/NNNN.ppm, depths/NNNN.pfm, masks/NNNN.pgm,
// noise/NNNN.pfm (optional) and manifest.jsonl. The first manifest line is
// a header record with the sample count; each following line is
// {"file", "seed", "checksum"} for one file.
void write_dataset(std::span<const ImageSample> samples, const std::filesystem::path& dir);
std::vector<ImageSample> read_dataset(const std::filesystem::path& dir);

}  // namespace uqd
