#include "provp/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "provp/error.hpp"

namespace provp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_matrix(const Tensor& t) { return ConstMatMap(t.data(), t.rows(), t.cols()); }
ConstMatMap as_matrix(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap(s.data(), rows, cols);
}
MatMap as_matrix(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatMap(s.data(), rows, cols);
}
ConstVecMap as_vector(std::span<const double> s) { return ConstVecMap(s.data(), s.size()); }
VecMap as_vector(std::span<double> s) { return VecMap(s.data(), s.size()); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

// Splits a shape around `axis` into (outer, axis extent, inner) for lane iteration.
struct AxisLayout {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisLayout layout_of(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi * kInvSqrt2;
  return cdf + x * pdf;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows() || bv.rank() == 1) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(av.shape()) +
                         " and " + to_string(bv.shape()));
  }
  const std::size_t r = av.rows(), k = av.cols(), c = bv.cols();
  Tensor out({r, c});
  as_matrix(out.values(), r, c).noalias() = as_matrix(av) * as_matrix(bv);
  return a.graph().record(OpKind::matmul, std::move(out), {a, b},
                          [a, b, r, k, c](Graph& g, NodeId self) {
                            auto dc = as_matrix(g.output_grad(self), r, c);
                            if (auto da = g.grad_sink(a.id()); !da.empty()) {
                              as_matrix(da, r, k).noalias() += dc * as_matrix(b.value()).transpose();
                            }
                            if (auto db = g.grad_sink(b.id()); !db.empty()) {
                              as_matrix(db, k, c).noalias() += as_matrix(a.value()).transpose() * dc;
                            }
                          });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({c, r});
  as_matrix(out.values(), c, r) = as_matrix(av).transpose();
  return a.graph().record(OpKind::transpose, std::move(out), {a}, [a, r, c](Graph& g, NodeId self) {
    if (auto da = g.grad_sink(a.id()); !da.empty()) {
      as_matrix(da, r, c) += as_matrix(g.output_grad(self), c, r).transpose();
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.set_requires_grad(false);
  as_vector(out.values()) += as_vector(b.value().values());
  return a.graph().record(OpKind::add, std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
    auto dy = as_vector(g.output_grad(self));
    if (auto da = g.grad_sink(a.id()); !da.empty()) as_vector(da) += dy;
    if (auto db = g.grad_sink(b.id()); !db.empty()) as_vector(db) += dy;
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out(a.value().shape());
  as_vector(out.values()) = as_vector(a.value().values()) - as_vector(b.value().values());
  return a.graph().record(OpKind::sub, std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
    auto dy = as_vector(g.output_grad(self));
    if (auto da = g.grad_sink(a.id()); !da.empty()) as_vector(da) += dy;
    if (auto db = g.grad_sink(b.id()); !db.empty()) as_vector(db) -= dy;
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out(a.value().shape());
  as_vector(out.values()) =
      as_vector(a.value().values()).cwiseProduct(as_vector(b.value().values()));
  return a.graph().record(OpKind::mul, std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
    auto dy = as_vector(g.output_grad(self));
    if (auto da = g.grad_sink(a.id()); !da.empty()) {
      as_vector(da) += dy.cwiseProduct(as_vector(b.value().values()));
    }
    if (auto db = g.grad_sink(b.id()); !db.empty()) {
      as_vector(db) += dy.cwiseProduct(as_vector(a.value().values()));
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.value().shape());
  as_vector(out.values()) = as_vector(a.value().values()) * factor;
  return a.graph().record(OpKind::scale, std::move(out), {a}, [a, factor](Graph& g, NodeId self) {
    if (auto da = g.grad_sink(a.id()); !da.empty()) {
      as_vector(da) += as_vector(g.output_grad(self)) * factor;
    }
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out(a.value().shape());
  as_vector(out.values()) = as_vector(a.value().values()).array() + offset;
  return a.graph().record(OpKind::add_scalar, std::move(out), {a}, [a](Graph& g, NodeId self) {
    if (auto da = g.grad_sink(a.id()); !da.empty()) as_vector(da) += as_vector(g.output_grad(self));
  });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.size() != av.cols()) {
    throw DimensionError("add_row: row " + to_string(rv.shape()) + " does not match columns of " +
                         to_string(av.shape()));
  }
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(av.shape());
  as_matrix(out.values(), r, c) =
      as_matrix(av).rowwise() + as_vector(rv.values()).transpose();
  return a.graph().record(OpKind::add_row, std::move(out), {a, row},
                          [a, row, r, c](Graph& g, NodeId self) {
                            auto dy = as_matrix(g.output_grad(self), r, c);
                            if (auto da = g.grad_sink(a.id()); !da.empty()) as_matrix(da, r, c) += dy;
                            if (auto dr = g.grad_sink(row.id()); !dr.empty()) {
                              as_vector(dr) += dy.colwise().sum().transpose();
                            }
                          });
}

Var gelu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = gelu_value(av[i]);
  return a.graph().record(OpKind::gelu, std::move(out), {a}, [a](Graph& g, NodeId self) {
    auto da = g.grad_sink(a.id());
    if (da.empty()) return;
    auto dy = g.output_grad(self);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) da[i] += dy[i] * gelu_slope(x[i]);
  });
}

Var log(Var a, double floor, ClampCounter* counter) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] < floor) {
      out[i] = std::log(floor);
      if (counter) ++counter->count;
    } else {
      out[i] = std::log(av[i]);
    }
  }
  return a.graph().record(OpKind::log, std::move(out), {a}, [a, floor](Graph& g, NodeId self) {
    auto da = g.grad_sink(a.id());
    if (da.empty()) return;
    auto dy = g.output_grad(self);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] >= floor) da[i] += dy[i] / x[i];
    }
  });
}

Var layernorm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("layernorm: affine parameters " + to_string(gamma.value().shape()) + "/" +
                         to_string(beta.value().shape()) + " do not match width of " +
                         to_string(xv.shape()));
  }
  // normalized rows and per-row inverse std are kept for the backward pass
  RowMat xhat(r, c);
  Eigen::VectorXd inv_std(r);
  auto xm = as_matrix(xv);
  for (std::size_t i = 0; i < r; ++i) {
    const double mu = xm.row(i).mean();
    const double var = (xm.row(i).array() - mu).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xm.row(i).array() - mu) * inv_std[i];
  }
  Tensor out(xv.shape());
  auto gm = as_vector(gamma.value().values());
  auto bt = as_vector(beta.value().values());
  as_matrix(out.values(), r, c) =
      (xhat.array().rowwise() * gm.transpose().array()).rowwise() + bt.transpose().array();

  return x.graph().record(
      OpKind::layernorm, std::move(out), {x, gamma, beta},
      [x, gamma, beta, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g,
                                                                                   NodeId self) {
        auto dy = as_matrix(g.output_grad(self), r, c);
        if (auto dg = g.grad_sink(gamma.id()); !dg.empty()) {
          as_vector(dg) += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
        }
        if (auto db = g.grad_sink(beta.id()); !db.empty()) {
          as_vector(db) += dy.colwise().sum().transpose();
        }
        if (auto dx = g.grad_sink(x.id()); !dx.empty()) {
          auto gm = as_vector(gamma.value().values());
          auto dxm = as_matrix(dx, r, c);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gm.transpose());
            const double m1 = dxhat.sum() * inv_c;
            const double m2 = dxhat.dot(xhat.row(i)) * inv_c;
            dxm.row(i).array() +=
                inv_std[i] * (dxhat.array() - m1 - xhat.row(i).array() * m2);
          }
        }
      });
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisLayout l = layout_of(xv.shape(), axis, "softmax");
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.extent * l.inner + in;
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.extent; ++k) top = std::max(top, xv[base + k * l.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) {
        const double e = std::exp(xv[base + k * l.inner] - top);
        out[base + k * l.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] /= total;
    }
  }
  return x.graph().record(OpKind::softmax, std::move(out), {x}, [x, l](Graph& g, NodeId self) {
    auto dx = g.grad_sink(x.id());
    if (dx.empty()) return;
    auto dy = g.output_grad(self);
    const Tensor& y = g.value(self);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t i = base + k * l.inner;
          dot += y[i] * dy[i];
        }
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t i = base + k * l.inner;
          dx[i] += y[i] * (dy[i] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisLayout l = layout_of(xv.shape(), axis, "log_softmax");
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.extent * l.inner + in;
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.extent; ++k) top = std::max(top, xv[base + k * l.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) total += std::exp(xv[base + k * l.inner] - top);
      const double log_total = top + std::log(total);
      for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] = xv[base + k * l.inner] - log_total;
    }
  }
  return x.graph().record(OpKind::log_softmax, std::move(out), {x}, [x, l](Graph& g, NodeId self) {
    auto dx = g.grad_sink(x.id());
    if (dx.empty()) return;
    auto dy = g.output_grad(self);
    const Tensor& y = g.value(self);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        double total = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) total += dy[base + k * l.inner];
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t i = base + k * l.inner;
          dx[i] += dy[i] - std::exp(y[i]) * total;
        }
      }
    }
  });
}

Var l2_normalize(Var x) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Eigen::VectorXd norms = as_matrix(xv).rowwise().norm();
  for (std::size_t i = 0; i < r; ++i) {
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(i) +
                                 " has zero or non-finite norm");
    }
  }
  Tensor out(xv.shape());
  as_matrix(out.values(), r, c) = as_matrix(xv).array().colwise() / norms.array();
  return x.graph().record(OpKind::l2_normalize, std::move(out), {x},
                          [x, r, c, norms = std::move(norms)](Graph& g, NodeId self) {
                            auto dx = g.grad_sink(x.id());
                            if (dx.empty()) return;
                            auto dy = as_matrix(g.output_grad(self), r, c);
                            auto y = as_matrix(g.value(self));
                            auto dxm = as_matrix(dx, r, c);
                            for (std::size_t i = 0; i < r; ++i) {
                              const double proj = y.row(i).dot(dy.row(i));
                              dxm.row(i) += (dy.row(i) - proj * y.row(i)) / norms[i];
                            }
                          });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  layout_of(first, axis, "concat");
  Shape shape = first;
  shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t d = 0; compatible && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) compatible = false;
    }
    if (!compatible) {
      throw DimensionError("concat: shape " + to_string(s) + " incompatible with " +
                           to_string(first) + " along axis " + std::to_string(axis));
    }
    shape[axis] += s[axis];
  }
  const AxisLayout l = layout_of(shape, axis, "concat");
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  std::size_t offset = 0;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    const Tensor& pv = p.value();
    const std::size_t run = pv.shape()[axis] * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
      std::copy_n(pv.data() + o * run, run, out.data() + o * l.extent * l.inner + offset * l.inner);
    }
    offset += pv.shape()[axis];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  auto captured = inputs;
  return parts.front().graph().record(
      OpKind::concat, std::move(out), std::move(inputs),
      [captured = std::move(captured), offsets = std::move(offsets), l, axis](Graph& g,
                                                                             NodeId self) {
        auto dy = g.output_grad(self);
        for (std::size_t p = 0; p < captured.size(); ++p) {
          auto dp = g.grad_sink(captured[p].id());
          if (dp.empty()) continue;
          const std::size_t run = captured[p].shape()[axis] * l.inner;
          for (std::size_t o = 0; o < l.outer; ++o) {
            const double* src = dy.data() + o * l.extent * l.inner + offsets[p] * l.inner;
            double* dst = dp.data() + o * run;
            for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
          }
        }
      });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const AxisLayout l = layout_of(xv.shape(), axis, "slice");
  if (begin >= end || end > l.extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis " + std::to_string(axis) + " of " +
                         to_string(xv.shape()));
  }
  Shape shape = xv.shape();
  shape[axis] = end - begin;
  Tensor out(shape);
  const std::size_t run = (end - begin) * l.inner;
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy_n(xv.data() + o * l.extent * l.inner + begin * l.inner, run, out.data() + o * run);
  }
  return x.graph().record(OpKind::slice, std::move(out), {x},
                          [x, l, begin, run](Graph& g, NodeId self) {
                            auto dx = g.grad_sink(x.id());
                            if (dx.empty()) return;
                            auto dy = g.output_grad(self);
                            for (std::size_t o = 0; o < l.outer; ++o) {
                              double* dst = dx.data() + o * l.extent * l.inner + begin * l.inner;
                              const double* src = dy.data() + o * run;
                              for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
                            }
                          });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.graph().record(OpKind::sum, Tensor({1}, total), {a}, [a](Graph& g, NodeId self) {
    if (auto da = g.grad_sink(a.id()); !da.empty()) {
      as_vector(da).array() += g.output_grad(self)[0];
    }
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var detach(Var a) { return a.graph().constant(Tensor(a.value().shape(), std::vector<double>(a.value().values().begin(), a.value().values().end()))); }

Var lerp(Var a, Var b, double alpha) { return add(scale(a, 1.0 - alpha), scale(b, alpha)); }

Var attention(Var qkv, std::size_t batch, std::size_t heads) {
  const Tensor& xv = qkv.value();
  const std::size_t rows = xv.rows();
  if (batch == 0 || heads == 0 || rows % batch != 0 || xv.cols() % (3 * heads) != 0) {
    throw DimensionError("attention: qkv " + to_string(xv.shape()) + " incompatible with batch " +
                         std::to_string(batch) + " and " + std::to_string(heads) + " heads");
  }
  const std::size_t tokens = rows / batch;
  const std::size_t width = xv.cols() / 3;
  const std::size_t head_dim = width / heads;
  const std::size_t stride = xv.cols();
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor out({rows, width});
  // attention weights per (sequence, head), reused by backward
  std::vector<RowMat> weights(batch * heads);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* base = xv.data() + b * tokens * stride + h * head_dim;
      ConstStridedMap q(base, tokens, head_dim, Eigen::OuterStride<>(stride));
      ConstStridedMap k(base + width, tokens, head_dim, Eigen::OuterStride<>(stride));
      ConstStridedMap v(base + 2 * width, tokens, head_dim, Eigen::OuterStride<>(stride));
      RowMat s = (q * k.transpose()) * scale_factor;
      for (std::size_t i = 0; i < tokens; ++i) {
        const double top = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - top).exp();
        s.row(i) /= s.row(i).sum();
      }
      StridedMap o(out.data() + b * tokens * width + h * head_dim, tokens, head_dim,
                   Eigen::OuterStride<>(width));
      o.noalias() = s * v;
      weights[b * heads + h] = std::move(s);
    }
  }

  return qkv.graph().record(
      OpKind::attention, std::move(out), {qkv},
      [qkv, batch, heads, tokens, width, head_dim, stride, scale_factor,
       weights = std::move(weights)](Graph& g, NodeId self) {
        auto dx = g.grad_sink(qkv.id());
        if (dx.empty()) return;
        auto dy = g.output_grad(self);
        const Tensor& xv = qkv.value();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * tokens * stride + h * head_dim;
            ConstStridedMap q(xv.data() + off, tokens, head_dim, Eigen::OuterStride<>(stride));
            ConstStridedMap k(xv.data() + off + width, tokens, head_dim,
                              Eigen::OuterStride<>(stride));
            ConstStridedMap v(xv.data() + off + 2 * width, tokens, head_dim,
                              Eigen::OuterStride<>(stride));
            ConstStridedMap d_out(dy.data() + b * tokens * width + h * head_dim, tokens, head_dim,
                                  Eigen::OuterStride<>(width));
            const RowMat& p = weights[b * heads + h];

            StridedMap dq(dx.data() + off, tokens, head_dim, Eigen::OuterStride<>(stride));
            StridedMap dk(dx.data() + off + width, tokens, head_dim, Eigen::OuterStride<>(stride));
            StridedMap dv(dx.data() + off + 2 * width, tokens, head_dim,
                          Eigen::OuterStride<>(stride));

            dv.noalias() += p.transpose() * d_out;
            RowMat dp = d_out * v.transpose();
            Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
            RowMat ds = p.array() * (dp.array().colwise() - row_dot.array());
            ds *= scale_factor;
            dq.noalias() += ds * k;
            dk.noalias() += ds.transpose() * q;
          }
        }
      });
}

}  // namespace provp
