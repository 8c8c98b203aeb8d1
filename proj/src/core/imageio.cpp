#include "uqdepth/imageio.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

#include "uqdepth/binio.hpp"
#include "uqdepth/errors.hpp"

namespace uqd::io {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

// Reads a whitespace-delimited header token, skipping '#' comments.
std::string token(std::istream& in, const std::filesystem::path& path) {
  std::string t;
  while (in >> t) {
    if (t[0] != '#') return t;
    std::string rest;
    std::getline(in, rest);
  }
  throw CorruptionError(path.string() + ": truncated header");
}

std::size_t positive_int(const std::string& t, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(t, &pos);
    if (pos == t.size() && v > 0 && v < (1L << 20)) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw CorruptionError(path.string() + ": bad header field '" + t + "'");
}

void read_exact(std::istream& in, char* dst, std::size_t n, const std::filesystem::path& path) {
  if (!in.read(dst, static_cast<std::streamsize>(n))) {
    throw CorruptionError(path.string() + ": truncated pixel data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptionError(path.string() + ": trailing bytes");
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Array& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("write_ppm expects 3xHxW, got " + shape_str(rgb.shape()));
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  auto out = open_out(path);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::string bytes(h * w * 3, '\0');
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) bytes[(y * w + x) * 3 + c] = static_cast<char>(to_byte(rgb.at(c, y, x)));
    }
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Array read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (token(in, path) != "P6") throw CorruptionError(path.string() + ": not a binary PPM (P6)");
  const std::size_t w = positive_int(token(in, path), path);
  const std::size_t h = positive_int(token(in, path), path);
  if (token(in, path) != "255") throw CorruptionError(path.string() + ": only 8-bit PPM supported");
  in.get();
  std::string bytes(h * w * 3, '\0');
  read_exact(in, bytes.data(), bytes.size(), path);
  Array rgb({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        rgb.at(c, y, x) = static_cast<unsigned char>(bytes[(y * w + x) * 3 + c]) / 255.0;
      }
    }
  }
  return rgb;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  auto out = open_out(path);
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::string bytes(mask.valid.size(), '\0');
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(mask.valid[i] ? 255 : 0);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Mask read_pgm_mask(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (token(in, path) != "P5") throw CorruptionError(path.string() + ": not a binary PGM (P5)");
  const std::size_t w = positive_int(token(in, path), path);
  const std::size_t h = positive_int(token(in, path), path);
  if (token(in, path) != "255") throw CorruptionError(path.string() + ": only 8-bit PGM supported");
  in.get();
  std::string bytes(h * w, '\0');
  read_exact(in, bytes.data(), bytes.size(), path);
  Mask m(h, w, false);
  for (std::size_t i = 0; i < bytes.size(); ++i) m.valid[i] = bytes[i] != 0 ? 1 : 0;
  return m;
}

void write_pfm(const std::filesystem::path& path, const Array& map) {
  if (map.rank() != 2) throw ShapeError("write_pfm expects HxW, got " + shape_str(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  auto out = open_out(path);
  out << "Pf\n" << w << ' ' << h << "\n-1.0\n";
  for (std::size_t y = h; y-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) binio::write_le<float>(out, static_cast<float>(map.at(y, x)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Array read_pfm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (token(in, path) != "Pf") throw CorruptionError(path.string() + ": not a single-channel PFM (Pf)");
  const std::size_t w = positive_int(token(in, path), path);
  const std::size_t h = positive_int(token(in, path), path);
  const std::string scale_tok = token(in, path);
  double scale = 0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw CorruptionError(path.string() + ": bad PFM scale '" + scale_tok + "'");
  }
  if (scale == 0) throw CorruptionError(path.string() + ": PFM scale must be nonzero");
  const bool little = scale < 0;
  in.get();
  std::string bytes(h * w * 4, '\0');
  read_exact(in, bytes.data(), bytes.size(), path);
  Array map({h, w});
  for (std::size_t row = 0; row < h; ++row) {
    const std::size_t y = h - 1 - row;
    for (std::size_t x = 0; x < w; ++x) {
      unsigned char b[4];
      std::memcpy(b, bytes.data() + (row * w + x) * 4, 4);
      if (little != (std::endian::native == std::endian::little)) {
        std::swap(b[0], b[3]);
        std::swap(b[1], b[2]);
      }
      float f;
      std::memcpy(&f, b, 4);
      if (!std::isfinite(f)) throw CorruptionError(path.string() + ": non-finite value in PFM");
      map.at(y, x) = f;
    }
  }
  return map;
}

Array normalized_gray(const Array& map, const Mask* mask) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mask && !mask->valid[i]) continue;
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  const std::size_t h = map.dim(0), w = map.dim(1);
  Array rgb({3, h, w});
  const double range = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = (mask && !mask->valid[i]) ? 0.0 : (map[i] - lo) / range;
    for (std::size_t c = 0; c < 3; ++c) rgb[c * h * w + i] = v;
  }
  return rgb;
}

std::string sha256_bytes(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_bytes(ss.str());
}

}  // namespace uqd::io
