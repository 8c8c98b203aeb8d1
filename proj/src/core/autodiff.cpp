#include "uqdepth/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "uqdepth/errors.hpp"
#include "uqdepth/simd.hpp"

namespace uqd::ad {
namespace {

std::string node_label(const Node& n) {
  return std::string(op_name(n.op)) + " node " + std::to_string(n.id);
}

[[noreturn]] void shape_mismatch(const Node& n, const Shape& a, const Shape& b) {
  throw ShapeError(node_label(n) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

Shape broadcast_shape(const Node& n, const Array& a, const Array& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  shape_mismatch(n, a.shape(), b.shape());
}

template <class F>
Array binary(const Node& n, const Array& a, const Array& b, F f) {
  Array out(broadcast_shape(n, a, b));
  const bool sa = a.size() == 1;
  const bool sb = b.size() == 1;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[sa ? 0 : i], b[sb ? 0 : i]);
  return out;
}

template <class F>
Array unary(const Array& a, F f) {
  Array out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0); }

// Gradient contribution reduced to the operand's shape (sums when the
// operand was broadcast as a scalar).
Array reduce_to(const Array& operand, Array grad) {
  if (operand.size() == grad.size()) return grad.reshaped(operand.shape());
  double s = 0.0;
  for (double v : grad.data()) s += v;
  return Array(operand.shape(), std::vector<double>{s});
}

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, k, stride, pad, hout, wout;
  std::size_t ck() const { return cin * k * k; }
  std::size_t pixels() const { return hout * wout; }
};

ConvGeom conv_geometry(const Node& n, const Array& in, const Array& wt, std::size_t stride) {
  const bool batched = in.rank() == 4;
  if (!(in.rank() == 3 || batched)) {
    throw ShapeError(node_label(n) + ": input must be CxHxW or NxCxHxW, got " + shape_str(in.shape()));
  }
  if (wt.rank() != 4 || wt.dim(2) != wt.dim(3) || wt.dim(2) % 2 == 0) {
    throw ShapeError(node_label(n) + ": weight must be Cout x Cin x k x k with odd k, got " +
                     shape_str(wt.shape()));
  }
  if (stride != 1 && stride != 2) {
    throw ShapeError(node_label(n) + ": stride must be 1 or 2, got " + std::to_string(stride));
  }
  ConvGeom g{};
  g.batch = batched ? in.dim(0) : 1;
  g.cin = in.dim(in.rank() - 3);
  g.h = in.dim(in.rank() - 2);
  g.w = in.dim(in.rank() - 1);
  g.cout = wt.dim(0);
  g.k = wt.dim(2);
  g.stride = stride;
  g.pad = (g.k - 1) / 2;
  if (wt.dim(1) != g.cin) shape_mismatch(n, in.shape(), wt.shape());
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) shape_mismatch(n, in.shape(), wt.shape());
  g.hout = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wout = (g.w + 2 * g.pad - g.k) / stride + 1;
  return g;
}

// col[(c*k + ky)*k + kx][oy*wout + ox] = in[c][oy*s + ky - pad][ox*s + kx - pad]
void im2col(const ConvGeom& g, const double* in, std::vector<double>& col) {
  col.assign(g.ck() * g.pixels(), 0.0);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col.data() + ((c * g.k + ky) * g.k + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          double* dst = row + oy * g.wout;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const std::vector<double>& col, double* in) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col.data() + ((c * g.k + ky) * g.k + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wout;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// y[0..n) += sum_j a[j] * rows[j][0..n), j over `count` rows.
void axpy_rows(const double* a, const double* const* rows, std::size_t count, double* y,
               std::size_t n) {
  const auto& kt = simd::active_kernels();
  std::size_t j = 0;
  for (; j + 4 <= count; j += 4) kt.axpy4(a + j, rows + j, y, n);
  for (; j < count; ++j) kt.axpy(a[j], rows[j], y, n);
}

Array conv_forward(const Node& n, const Array& in, const Array& wt, const Array* bias) {
  const ConvGeom g = conv_geometry(n, in, wt, n.attrs.stride);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout)) shape_mismatch(n, wt.shape(), bias->shape());
  Shape out_shape = in.rank() == 4 ? Shape{g.batch, g.cout, g.hout, g.wout} : Shape{g.cout, g.hout, g.wout};
  Array out(out_shape);
  std::vector<double> col;
  std::vector<const double*> rows(g.ck());
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, in.data().data() + b * g.cin * g.h * g.w, col);
    for (std::size_t r = 0; r < g.ck(); ++r) rows[r] = col.data() + r * g.pixels();
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* dst = out.data().data() + (b * g.cout + co) * g.pixels();
      std::fill(dst, dst + g.pixels(), bias ? (*bias)[co] : 0.0);
      axpy_rows(wt.data().data() + co * g.ck(), rows.data(), g.ck(), dst, g.pixels());
    }
  }
  return out;
}

void conv_backward(const Node& n, const Array& in, const Array& wt, const Array& grad_out, Array* g_in,
                   Array* g_wt, Array* g_bias) {
  const ConvGeom g = conv_geometry(n, in, wt, n.attrs.stride);
  const auto& kt = simd::active_kernels();
  std::vector<double> col;
  std::vector<double> gcol;
  std::vector<const double*> grows(g.cout);
  std::vector<double> wcol(g.cout);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* gout = grad_out.data().data() + b * g.cout * g.pixels();
    if (g_wt) {
      im2col(g, in.data().data() + b * g.cin * g.h * g.w, col);
      for (std::size_t co = 0; co < g.cout; ++co) {
        for (std::size_t r = 0; r < g.ck(); ++r) {
          (*g_wt)[co * g.ck() + r] += kt.dot(gout + co * g.pixels(), col.data() + r * g.pixels(), g.pixels());
        }
      }
    }
    if (g_bias) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < g.pixels(); ++p) s += gout[co * g.pixels() + p];
        (*g_bias)[co] += s;
      }
    }
    if (g_in) {
      gcol.assign(g.ck() * g.pixels(), 0.0);
      for (std::size_t co = 0; co < g.cout; ++co) grows[co] = gout + co * g.pixels();
      for (std::size_t r = 0; r < g.ck(); ++r) {
        for (std::size_t co = 0; co < g.cout; ++co) wcol[co] = wt[co * g.ck() + r];
        axpy_rows(wcol.data(), grows.data(), g.cout, gcol.data() + r * g.pixels(), g.pixels());
      }
      col2im_add(g, gcol, g_in->data().data() + b * g.cin * g.h * g.w);
    }
  }
}

struct Blocks {
  std::size_t outer, len, inner;
};

Blocks axis_blocks(const Shape& s, std::size_t axis) {
  Blocks b{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) b.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) b.inner *= s[i];
  return b;
}

// Copies along `axis`: dst[.., dst_off + j, ..] (+)= src[.., src_off + j, ..] for j < count.
void copy_along(const Array& src, std::size_t src_off, Array& dst, std::size_t dst_off, std::size_t axis,
                std::size_t count, bool accumulate) {
  const Blocks bs = axis_blocks(src.shape(), axis);
  const Blocks bd = axis_blocks(dst.shape(), axis);
  for (std::size_t o = 0; o < bs.outer; ++o) {
    const double* s = src.data().data() + (o * bs.len + src_off) * bs.inner;
    double* d = dst.data().data() + (o * bd.len + dst_off) * bd.inner;
    const std::size_t n = count * bs.inner;
    if (accumulate) {
      for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
    } else {
      std::copy(s, s + n, d);
    }
  }
}

Array upsample_forward(const Node& n, const Array& a, std::size_t f) {
  if (a.rank() < 2) throw ShapeError(node_label(n) + ": needs rank >= 2, got " + shape_str(a.shape()));
  if (f == 0) throw ShapeError(node_label(n) + ": factor must be positive");
  Shape s = a.shape();
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s.back();
  s[s.size() - 2] *= f;
  s.back() *= f;
  Array out(s);
  const std::size_t planes = a.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h * f; ++y) {
      const double* src = a.data().data() + (p * h + y / f) * w;
      double* dst = out.data().data() + (p * h * f + y) * w * f;
      for (std::size_t x = 0; x < w * f; ++x) dst[x] = src[x / f];
    }
  }
  return out;
}

Array upsample_backward(const Array& a, const Array& g, std::size_t f) {
  const Shape& s = a.shape();
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s.back();
  Array out(s);
  const std::size_t planes = a.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h * f; ++y) {
      const double* src = g.data().data() + (p * h * f + y) * w * f;
      double* dst = out.data().data() + (p * h + y / f) * w;
      for (std::size_t x = 0; x < w * f; ++x) dst[x / f] += src[x];
    }
  }
  return out;
}

Array matmul_forward(const Node& n, const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_mismatch(n, a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), c = b.dim(1);
  Array out({m, c});
  std::vector<const double*> rows(k);
  for (std::size_t j = 0; j < k; ++j) rows[j] = b.data().data() + j * c;
  for (std::size_t i = 0; i < m; ++i) {
    axpy_rows(a.data().data() + i * k, rows.data(), k, out.data().data() + i * c, c);
  }
  return out;
}

}  // namespace

Array flip_h(const Array& a) {
  Array out(a.shape());
  const std::size_t w = a.shape().back();
  for (std::size_t r = 0; r < a.size() / w; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = a[r * w + (w - 1 - x)];
  }
  return out;
}

Array flip_v(const Array& a) {
  if (a.rank() < 2) throw ShapeError("flip_v needs rank >= 2, got " + shape_str(a.shape()));
  Array out(a.shape());
  const std::size_t w = a.shape().back();
  const std::size_t h = a.shape()[a.rank() - 2];
  for (std::size_t p = 0; p < a.size() / (h * w); ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = a.data().data() + (p * h + (h - 1 - y)) * w;
      std::copy(src, src + w, out.data().data() + (p * h + y) * w);
    }
  }
  return out;
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::PowConst: return "pow_const";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Matmul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::MaxElem: return "max_elem";
    case Op::UpsampleNearest: return "upsample_nearest";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::FlipH: return "flip_h";
    case Op::FlipV: return "flip_v";
    case Op::Reshape: return "reshape";
  }
  return "unknown";
}

const Array& Var::value() const { return graph->node(id).value; }

double Var::item() const {
  const Array& v = value();
  if (v.size() != 1) throw ContractError("item() on non-scalar node of shape " + shape_str(v.shape()));
  return v[0];
}

Var Graph::leaf(Array value, bool requires_grad) {
  Node n;
  n.id = static_cast<NodeId>(nodes_.size());
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.back().id};
}

void Graph::set_leaf(Var v, Array value) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.op != Op::Leaf) throw ContractError("set_leaf on " + node_label(n));
  if (n.value.shape() != value.shape()) shape_mismatch(n, n.value.shape(), value.shape());
  n.value = std::move(value);
}

Var Graph::add_node(Op op, std::vector<NodeId> inputs, Attrs attrs) {
  Node n;
  n.id = static_cast<NodeId>(nodes_.size());
  n.op = op;
  n.attrs = std::move(attrs);
  for (NodeId in : inputs) {
    if (in < 0 || in >= n.id) throw ContractError("input id " + std::to_string(in) + " is not an earlier node");
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  evaluate(nodes_.back());
  return Var{this, nodes_.back().id};
}

void Graph::forward() {
  for (Node& n : nodes_) {
    if (n.op != Op::Leaf) evaluate(n);
  }
}

void Graph::evaluate(Node& n) {
  auto in = [&](std::size_t i) -> const Array& { return nodes_[static_cast<std::size_t>(n.inputs[i])].value; };
  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::Add:
      n.value = binary(n, in(0), in(1), [](double a, double b) { return a + b; });
      return;
    case Op::Sub:
      n.value = binary(n, in(0), in(1), [](double a, double b) { return a - b; });
      return;
    case Op::Mul:
      n.value = binary(n, in(0), in(1), [](double a, double b) { return a * b; });
      return;
    case Op::Div:
      n.value = binary(n, in(0), in(1), [](double a, double b) { return a / b; });
      return;
    case Op::MaxElem:
      n.value = binary(n, in(0), in(1), [](double a, double b) { return a >= b ? a : b; });
      return;
    case Op::Neg:
      n.value = unary(in(0), [](double a) { return -a; });
      return;
    case Op::Exp:
      n.value = unary(in(0), [](double a) { return std::exp(a); });
      return;
    case Op::Log:
      for (double v : in(0).data()) {
        if (!(v > 0)) throw DomainError(node_label(n) + ": log of non-positive value " + std::to_string(v));
      }
      n.value = unary(in(0), [](double a) { return std::log(a); });
      return;
    case Op::Square:
      n.value = unary(in(0), [](double a) { return a * a; });
      return;
    case Op::Sqrt:
      for (double v : in(0).data()) {
        if (!(v > 0)) throw DomainError(node_label(n) + ": sqrt of non-positive value " + std::to_string(v));
      }
      n.value = unary(in(0), [](double a) { return std::sqrt(a); });
      return;
    case Op::PowConst: {
      const double p = n.attrs.exponent;
      if (p != std::floor(p)) {
        for (double v : in(0).data()) {
          if (!(v > 0)) throw DomainError(node_label(n) + ": fractional power of non-positive value");
        }
      }
      n.value = unary(in(0), [p](double a) { return std::pow(a, p); });
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      double s = 0.0;
      for (double v : in(0).data()) s += v;
      if (n.op == Op::Mean) s /= static_cast<double>(in(0).size());
      n.value = Array::scalar(s);
      return;
    }
    case Op::Relu:
      n.value = unary(in(0), [](double a) { return a > 0 ? a : 0.0; });
      return;
    case Op::Sigmoid:
      n.value = unary(in(0), sigmoid_scalar);
      return;
    case Op::Softplus:
      n.value = unary(in(0), softplus_scalar);
      return;
    case Op::Matmul:
      n.value = matmul_forward(n, in(0), in(1));
      return;
    case Op::Conv2d:
      n.value = conv_forward(n, in(0), in(1), n.inputs.size() > 2 ? &in(2) : nullptr);
      return;
    case Op::UpsampleNearest:
      n.value = upsample_forward(n, in(0), n.attrs.factor);
      return;
    case Op::Concat: {
      const std::size_t axis = n.attrs.axis;
      Shape s = in(0).shape();
      if (axis >= s.size()) throw ShapeError(node_label(n) + ": axis out of range for " + shape_str(s));
      s[axis] = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        Shape si = in(i).shape();
        if (si.size() != s.size()) shape_mismatch(n, in(0).shape(), si);
        for (std::size_t d = 0; d < si.size(); ++d) {
          if (d != axis && si[d] != in(0).shape()[d]) shape_mismatch(n, in(0).shape(), si);
        }
        s[axis] += si[axis];
      }
      Array out(s);
      std::size_t off = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        copy_along(in(i), 0, out, off, axis, in(i).dim(axis), false);
        off += in(i).dim(axis);
      }
      n.value = std::move(out);
      return;
    }
    case Op::Slice: {
      const Array& a = in(0);
      const auto& at = n.attrs;
      if (at.axis >= a.rank() || at.begin >= at.end || at.end > a.dim(at.axis)) {
        throw ShapeError(node_label(n) + ": slice [" + std::to_string(at.begin) + ", " + std::to_string(at.end) +
                         ") on axis " + std::to_string(at.axis) + " invalid for " + shape_str(a.shape()));
      }
      Shape s = a.shape();
      s[at.axis] = at.end - at.begin;
      Array out(s);
      copy_along(a, at.begin, out, 0, at.axis, at.end - at.begin, false);
      n.value = std::move(out);
      return;
    }
    case Op::FlipH:
      n.value = flip_h(in(0));
      return;
    case Op::FlipV:
      n.value = flip_v(in(0));
      return;
    case Op::Reshape:
      if (shape_size(n.attrs.shape) != in(0).size()) shape_mismatch(n, in(0).shape(), n.attrs.shape);
      n.value = in(0).reshaped(n.attrs.shape);
      return;
  }
}

GradientMap Graph::backward(Var root) const {
  const Node& r = node(root.id);
  if (r.value.size() != 1) {
    throw ContractError("backward root " + node_label(r) + " must be scalar, has shape " + shape_str(r.value.shape()));
  }
  std::vector<Array> grads(static_cast<std::size_t>(root.id) + 1);
  grads[static_cast<std::size_t>(root.id)] = Array(r.value.shape(), 1.0);

  auto accumulate = [&](NodeId id, Array contrib) {
    Array& g = grads[static_cast<std::size_t>(id)];
    if (g.size() == 0) {
      g = std::move(contrib);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += contrib[i];
    }
  };

  for (NodeId id = root.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Array& g = grads[static_cast<std::size_t>(id)];
    if (n.op == Op::Leaf || !n.requires_grad || g.size() == 0) continue;
    auto val = [&](std::size_t i) -> const Array& { return nodes_[static_cast<std::size_t>(n.inputs[i])].value; };
    auto needs = [&](std::size_t i) { return nodes_[static_cast<std::size_t>(n.inputs[i])].requires_grad; };
    auto elementwise = [&](std::size_t i, auto f) {
      const Array& x = val(i);
      Array out(x.shape());
      for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(k);
      accumulate(n.inputs[i], std::move(out));
    };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::MaxElem: {
        const Array& a = val(0);
        const Array& b = val(1);
        const bool sa = a.size() == 1;
        const bool sb = b.size() == 1;
        Array ga(g.shape());
        Array gb(g.shape());
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double av = a[sa ? 0 : k];
          const double bv = b[sb ? 0 : k];
          switch (n.op) {
            case Op::Add: ga[k] = g[k]; gb[k] = g[k]; break;
            case Op::Sub: ga[k] = g[k]; gb[k] = -g[k]; break;
            case Op::Mul: ga[k] = g[k] * bv; gb[k] = g[k] * av; break;
            case Op::Div: ga[k] = g[k] / bv; gb[k] = -g[k] * av / (bv * bv); break;
            default:
              ga[k] = av >= bv ? g[k] : 0.0;
              gb[k] = av >= bv ? 0.0 : g[k];
              break;
          }
        }
        if (needs(0)) accumulate(n.inputs[0], reduce_to(a, std::move(ga)));
        if (needs(1)) accumulate(n.inputs[1], reduce_to(b, std::move(gb)));
        break;
      }
      case Op::Neg:
        elementwise(0, [&](std::size_t k) { return -g[k]; });
        break;
      case Op::Exp:
        elementwise(0, [&](std::size_t k) { return g[k] * n.value[k]; });
        break;
      case Op::Log:
        elementwise(0, [&](std::size_t k) { return g[k] / val(0)[k]; });
        break;
      case Op::Square:
        elementwise(0, [&](std::size_t k) { return 2.0 * val(0)[k] * g[k]; });
        break;
      case Op::Sqrt:
        elementwise(0, [&](std::size_t k) { return g[k] / (2.0 * n.value[k]); });
        break;
      case Op::PowConst: {
        const double p = n.attrs.exponent;
        elementwise(0, [&](std::size_t k) { return g[k] * p * std::pow(val(0)[k], p - 1.0); });
        break;
      }
      case Op::Sum:
        elementwise(0, [&](std::size_t) { return g[0]; });
        break;
      case Op::Mean: {
        const double scale = 1.0 / static_cast<double>(val(0).size());
        elementwise(0, [&](std::size_t) { return g[0] * scale; });
        break;
      }
      case Op::Relu:
        elementwise(0, [&](std::size_t k) { return val(0)[k] > 0 ? g[k] : 0.0; });
        break;
      case Op::Sigmoid:
        elementwise(0, [&](std::size_t k) { return g[k] * n.value[k] * (1.0 - n.value[k]); });
        break;
      case Op::Softplus:
        elementwise(0, [&](std::size_t k) { return g[k] * sigmoid_scalar(val(0)[k]); });
        break;
      case Op::Matmul: {
        const Array& a = val(0);
        const Array& b = val(1);
        const std::size_t m = a.dim(0), kk = a.dim(1), c = b.dim(1);
        const auto& kt = simd::active_kernels();
        if (needs(0)) {
          Array ga(a.shape());
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < kk; ++j) ga[i * kk + j] = kt.dot(g.data().data() + i * c, b.data().data() + j * c, c);
          }
          accumulate(n.inputs[0], std::move(ga));
        }
        if (needs(1)) {
          Array gb(b.shape());
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < kk; ++j) kt.axpy(a[i * kk + j], g.data().data() + i * c, gb.data().data() + j * c, c);
          }
          accumulate(n.inputs[1], std::move(gb));
        }
        break;
      }
      case Op::Conv2d: {
        const bool has_bias = n.inputs.size() > 2;
        Array gi, gw, gbias;
        if (needs(0)) gi = Array(val(0).shape());
        if (needs(1)) gw = Array(val(1).shape());
        if (has_bias && needs(2)) gbias = Array(val(2).shape());
        conv_backward(n, val(0), val(1), g, needs(0) ? &gi : nullptr, needs(1) ? &gw : nullptr,
                      has_bias && needs(2) ? &gbias : nullptr);
        if (needs(0)) accumulate(n.inputs[0], std::move(gi));
        if (needs(1)) accumulate(n.inputs[1], std::move(gw));
        if (has_bias && needs(2)) accumulate(n.inputs[2], std::move(gbias));
        break;
      }
      case Op::UpsampleNearest:
        accumulate(n.inputs[0], upsample_backward(val(0), g, n.attrs.factor));
        break;
      case Op::Concat: {
        std::size_t off = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const std::size_t len = val(i).dim(n.attrs.axis);
          if (needs(i)) {
            Array part(val(i).shape());
            copy_along(g, off, part, 0, n.attrs.axis, len, false);
            accumulate(n.inputs[i], std::move(part));
          }
          off += len;
        }
        break;
      }
      case Op::Slice: {
        Array full(val(0).shape());
        copy_along(g, 0, full, n.attrs.begin, n.attrs.axis, n.attrs.end - n.attrs.begin, false);
        accumulate(n.inputs[0], std::move(full));
        break;
      }
      case Op::FlipH:
        accumulate(n.inputs[0], flip_h(g));
        break;
      case Op::FlipV:
        accumulate(n.inputs[0], flip_v(g));
        break;
      case Op::Reshape:
        accumulate(n.inputs[0], g.reshaped(val(0).shape()));
        break;
    }
  }

  GradientMap out;
  for (NodeId id = 0; id <= root.id; ++id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) continue;
    Array& g = grads[static_cast<std::size_t>(id)];
    out.emplace(id, g.size() ? std::move(g) : Array(n.value.shape()));
  }
  return out;
}

namespace {

Graph& owner(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

Var bin(Op op, Var a, Var b) { return owner(a, b).add_node(op, {a.id, b.id}); }
Var un(Op op, Var a, Attrs attrs = {}) { return a.graph->add_node(op, {a.id}, std::move(attrs)); }

}  // namespace

Var add(Var a, Var b) { return bin(Op::Add, a, b); }
Var sub(Var a, Var b) { return bin(Op::Sub, a, b); }
Var mul(Var a, Var b) { return bin(Op::Mul, a, b); }
Var div(Var a, Var b) { return bin(Op::Div, a, b); }
Var max_elem(Var a, Var b) { return bin(Op::MaxElem, a, b); }
Var matmul(Var a, Var b) { return bin(Op::Matmul, a, b); }
Var neg(Var a) { return un(Op::Neg, a); }
Var exp(Var a) { return un(Op::Exp, a); }
Var log(Var a) { return un(Op::Log, a); }
Var square(Var a) { return un(Op::Square, a); }
Var sqrt(Var a) { return un(Op::Sqrt, a); }
Var relu(Var a) { return un(Op::Relu, a); }
Var sigmoid(Var a) { return un(Op::Sigmoid, a); }
Var softplus(Var a) { return un(Op::Softplus, a); }
Var sum(Var a) { return un(Op::Sum, a); }
Var mean(Var a) { return un(Op::Mean, a); }
Var flip_h(Var a) { return un(Op::FlipH, a); }
Var flip_v(Var a) { return un(Op::FlipV, a); }

Var pow_const(Var a, double exponent) {
  Attrs at;
  at.exponent = exponent;
  return un(Op::PowConst, a, at);
}

Var conv2d(Var input, Var weight, Var bias, std::size_t stride) {
  owner(input, weight);
  owner(input, bias);
  Attrs at;
  at.stride = stride;
  return input.graph->add_node(Op::Conv2d, {input.id, weight.id, bias.id}, at);
}

Var conv2d(Var input, Var weight, std::size_t stride) {
  owner(input, weight);
  Attrs at;
  at.stride = stride;
  return input.graph->add_node(Op::Conv2d, {input.id, weight.id}, at);
}

Var upsample_nearest(Var a, std::size_t factor) {
  Attrs at;
  at.factor = factor;
  return un(Op::UpsampleNearest, a, at);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero inputs");
  std::vector<NodeId> ids;
  for (const Var& p : parts) {
    owner(parts[0], p);
    ids.push_back(p.id);
  }
  Attrs at;
  at.axis = axis;
  return parts[0].graph->add_node(Op::Concat, std::move(ids), at);
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  Attrs at;
  at.axis = axis;
  at.begin = begin;
  at.end = end;
  return un(Op::Slice, a, at);
}

Var reshape(Var a, Shape shape) {
  Attrs at;
  at.shape = std::move(shape);
  return un(Op::Reshape, a, at);
}

double grad_check(Graph& graph, Var root, Var leaf, double step) {
  if (!(step > 0)) throw ContractError("grad_check step must be positive");
  const Array original = leaf.value();
  if (!original.all_finite()) throw ContractError("grad_check leaf has non-finite values");
  const GradientMap grads = graph.backward(root);
  const auto it = grads.find(leaf.id);
  double worst = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    Array probe = original;
    probe[i] = original[i] + step;
    graph.set_leaf(leaf, probe);
    graph.forward();
    const double plus = root.item();
    probe[i] = original[i] - step;
    graph.set_leaf(leaf, probe);
    graph.forward();
    const double minus = root.item();
    const double numeric = (plus - minus) / (2.0 * step);
    const double analytic = it == grads.end() ? 0.0 : it->second[i];
    const double scale = std::max({std::fabs(analytic), std::fabs(numeric), kGradCheckFloor});
    worst = std::max(worst, std::fabs(analytic - numeric) / scale);
  }
  graph.set_leaf(leaf, original);
  graph.forward();
  return worst;
}

}  // namespace uqd::ad
