#pragma once

// Raster formats: binary PPM (P6) for RGB, binary PGM (P5) for masks and
// PFM ("Pf", one channel, little-endian f32, scale -1.0, rows bottom to
// top) for depth and uncertainty maps.

#include <filesystem>
#include <string>

#include "uqdepth/array.hpp"

namespace uqd::io {

// 3 x H x W in [0, 1]; values are rounded to the nearest of 256 levels.
void write_ppm(const std::filesystem::path& path, const Array& rgb);
Array read_ppm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm_mask(const std::filesystem::path& path);

// H x W map; values are stored as f32.
void write_pfm(const std::filesystem::path& path, const Array& map);
Array read_pfm(const std::filesystem::path& path);

// Grey-scale visualization of an H x W map normalized to its valid range.
Array normalized_gray(const Array& map, const Mask* mask = nullptr);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const std::string& bytes);

}  // namespace uqd::io
