#include "uqdepth/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "uqdepth/errors.hpp"

namespace uqd {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("array dimensions must be positive, got " + shape_str(shape_));
  }
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("array dimensions must be positive, got " + shape_str(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
  }
}

Array Array::channel(std::size_t ch) const {
  if (rank() != 3) throw ShapeError("channel() needs a CxHxW array, got " + shape_str(shape_));
  const std::size_t plane = shape_[1] * shape_[2];
  if (ch >= shape_[0]) throw ShapeError("channel index out of range for " + shape_str(shape_));
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(ch * plane),
                          data_.begin() + static_cast<std::ptrdiff_t>((ch + 1) * plane));
  return Array({shape_[1], shape_[2]}, std::move(out));
}

Array Array::reshaped(Shape shape) const { return Array(std::move(shape), data_); }

bool Array::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (unsigned char v : valid) n += v ? 1 : 0;
  return n;
}

Array Mask::as_array() const {
  Array a({height, width});
  for (std::size_t i = 0; i < valid.size(); ++i) a[i] = valid[i] ? 1.0 : 0.0;
  return a;
}

}  // namespace uqd
