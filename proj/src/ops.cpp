#include "opsense/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "opsense/error.hpp"

namespace opsense::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const char* primitive, const Shape& a, const Shape& b, const char* what) {
  throw ShapeError(std::string(primitive) + ": " + what + " (got " + to_string(a) + " and " + to_string(b) + ")");
}

[[noreturn]] void shape_error(const char* primitive, const Shape& a, const char* what) {
  throw ShapeError(std::string(primitive) + ": " + what + " (got " + to_string(a) + ")");
}

Tape* same_tape(const char* primitive, Var a, Var b) {
  if (!a.tape || a.tape != b.tape) throw StateError(std::string(primitive) + ": operands on different tapes");
  return a.tape;
}

ConstMapMat as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double min_abs(const Tensor& t) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : t.data()) m = std::min(m, std::abs(v));
  return m;
}

struct ConvGeometry {
  std::size_t n, ci, h, w, co, k;
  std::size_t hw() const { return h * w; }
  std::size_t rows() const { return ci * k * k; }
  std::size_t cols() const { return n * h * w; }
};

// im2col with zero padding: col[(c*K + kh)*K + kw][b*HW + y*W + x].
RowMat im2col(const Tensor& x, const ConvGeometry& g) {
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
  const long pad = static_cast<long>(g.k / 2);
  const auto* src = x.data().data();
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        double* row = col.row(static_cast<Eigen::Index>((c * g.k + kh) * g.k + kw)).data();
        for (std::size_t b = 0; b < g.n; ++b) {
          const double* plane = src + (b * g.ci + c) * g.hw();
          double* dst = row + b * g.hw();
          for (std::size_t y = 0; y < g.h; ++y) {
            const long sy = static_cast<long>(y) + static_cast<long>(kh) - pad;
            if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
            for (std::size_t xx = 0; xx < g.w; ++xx) {
              const long sx = static_cast<long>(xx) + static_cast<long>(kw) - pad;
              if (sx < 0 || sx >= static_cast<long>(g.w)) continue;
              dst[y * g.w + xx] = plane[static_cast<std::size_t>(sy) * g.w + static_cast<std::size_t>(sx)];
            }
          }
        }
      }
    }
  }
  return col;
}

void col2im_add(const RowMat& col, Tensor& dx, const ConvGeometry& g) {
  const long pad = static_cast<long>(g.k / 2);
  auto* dst = dx.data().data();
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const double* row = col.row(static_cast<Eigen::Index>((c * g.k + kh) * g.k + kw)).data();
        for (std::size_t b = 0; b < g.n; ++b) {
          double* plane = dst + (b * g.ci + c) * g.hw();
          const double* src = row + b * g.hw();
          for (std::size_t y = 0; y < g.h; ++y) {
            const long sy = static_cast<long>(y) + static_cast<long>(kh) - pad;
            if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
            for (std::size_t xx = 0; xx < g.w; ++xx) {
              const long sx = static_cast<long>(xx) + static_cast<long>(kw) - pad;
              if (sx < 0 || sx >= static_cast<long>(g.w)) continue;
              plane[static_cast<std::size_t>(sy) * g.w + static_cast<std::size_t>(sx)] += src[y * g.w + xx];
            }
          }
        }
      }
    }
  }
}

// [N, C, HW] <-> [C, N*HW]
RowMat to_channel_major(const Tensor& t, std::size_t n, std::size_t c, std::size_t hw) {
  RowMat m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * hw));
  const auto* src = t.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(src + (b * c + ch) * hw, hw, m.row(static_cast<Eigen::Index>(ch)).data() + b * hw);
    }
  }
  return m;
}

void from_channel_major(const RowMat& m, Tensor& t, std::size_t n, std::size_t c, std::size_t hw) {
  auto* dst = t.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(m.row(static_cast<Eigen::Index>(ch)).data() + b * hw, hw, dst + (b * c + ch) * hw);
    }
  }
}

Var unary(const char* primitive, Var x, Tensor out, BackwardRule rule, double kink = std::numeric_limits<double>::infinity()) {
  return x.tape->record(primitive, std::move(out), {x.id}, std::move(rule), kink);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape* tape = same_tape("matmul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_error("matmul", av.shape(), bv.shape(), "expected [m,k] x [k,n]");
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(av, m, k) * as_matrix(bv, k, n);
  return tape->record("matmul", std::move(out), {a.id, b.id},
                      [m, k, n](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                                std::span<Tensor* const> gin) {
                        auto gm = as_matrix(g, m, n);
                        if (gin[0]) as_matrix(*gin[0], m, k).noalias() += gm * as_matrix(*in[1], k, n).transpose();
                        if (gin[1]) as_matrix(*gin[1], k, n).noalias() += as_matrix(*in[0], m, k).transpose() * gm;
                      });
}

Var conv2d(Var x, Var w) {
  Tape* tape = same_tape("conv2d", x, w);
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3) ||
      (wv.dim(2) != 1 && wv.dim(2) != 3)) {
    shape_error("conv2d", xv.shape(), wv.shape(), "expected x [N,C,H,W] and w [O,C,K,K] with K in {1,3}");
  }
  const ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2)};
  const RowMat col = im2col(xv, g);
  const RowMat out_cm = as_matrix(wv, g.co, g.rows()) * col;
  Tensor out({g.n, g.co, g.h, g.w});
  from_channel_major(out_cm, out, g.n, g.co, g.hw());
  return tape->record("conv2d", std::move(out), {x.id, w.id},
                      [g](std::span<const Tensor* const> in, const Tensor&, const Tensor& grad,
                          std::span<Tensor* const> gin) {
                        const RowMat gout = to_channel_major(grad, g.n, g.co, g.hw());
                        if (gin[1]) {
                          const RowMat cols = im2col(*in[0], g);
                          as_matrix(*gin[1], g.co, g.rows()).noalias() += gout * cols.transpose();
                        }
                        if (gin[0]) {
                          const RowMat dcol = as_matrix(*in[1], g.co, g.rows()).transpose() * gout;
                          col2im_add(dcol, *gin[0], g);
                        }
                      });
}

Var avg_pool3x3(Var x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) shape_error("avg_pool3x3", xv.shape(), "expected [N,C,H,W]");
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  // Number of in-bounds cells of each window.
  std::vector<double> count(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      const std::size_t ny = (y > 0) + 1 + (y + 1 < h);
      const std::size_t nx = (xx > 0) + 1 + (xx + 1 < w);
      count[y * w + xx] = static_cast<double>(ny * nx);
    }
  }
  auto window = [h, w](std::size_t y, std::size_t xx, auto&& fn) {
    const std::size_t y0 = y > 0 ? y - 1 : 0, y1 = std::min(h - 1, y + 1);
    const std::size_t x0 = xx > 0 ? xx - 1 : 0, x1 = std::min(w - 1, xx + 1);
    for (std::size_t sy = y0; sy <= y1; ++sy) {
      for (std::size_t sx = x0; sx <= x1; ++sx) fn(sy * w + sx);
    }
  };
  Tensor out(xv.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data().data() + p * h * w;
    double* dst = out.data().data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        double s = 0.0;
        window(y, xx, [&](std::size_t i) { s += src[i]; });
        dst[y * w + xx] = s / count[y * w + xx];
      }
    }
  }
  return unary("avg_pool3x3", x, std::move(out),
               [planes, h, w, count, window](std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                                             std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 for (std::size_t p = 0; p < planes; ++p) {
                   const double* gs = g.data().data() + p * h * w;
                   double* dst = gin[0]->data().data() + p * h * w;
                   for (std::size_t y = 0; y < h; ++y) {
                     for (std::size_t xx = 0; xx < w; ++xx) {
                       const double share = gs[y * w + xx] / count[y * w + xx];
                       window(y, xx, [&](std::size_t i) { dst[i] += share; });
                     }
                   }
                 }
               });
}

Var global_avg_pool(Var x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) shape_error("global_avg_pool", xv.shape(), "expected [N,C,H,W]");
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += xv[i * hw + j];
    out[i] = s / static_cast<double>(hw);
  }
  return unary("global_avg_pool", x, std::move(out),
               [n, c, hw](std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                          std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 for (std::size_t i = 0; i < n * c; ++i) {
                   const double share = g[i] / static_cast<double>(hw);
                   for (std::size_t j = 0; j < hw; ++j) (*gin[0])[i * hw + j] += share;
                 }
               });
}

Var relu(Var x) {
  const auto& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return unary(
      "relu", x, std::move(out),
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const auto& xi = *in[0];
        for (std::size_t i = 0; i < xi.size(); ++i) {
          if (xi[i] > 0.0) (*gin[0])[i] += g[i];
        }
      },
      min_abs(xv));
}

Var identity(Var x) {
  return unary("identity", x, x.value(),
               [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
               });
}

Var abs(Var x) {
  const auto& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::abs(xv[i]);
  return unary(
      "abs", x, std::move(out),
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const auto& xi = *in[0];
        for (std::size_t i = 0; i < xi.size(); ++i) {
          if (xi[i] > 0.0) {
            (*gin[0])[i] += g[i];
          } else if (xi[i] < 0.0) {
            (*gin[0])[i] -= g[i];
          }
        }
      },
      min_abs(xv));
}

namespace {

Var binary_same_shape(const char* primitive, Var a, Var b, double sign_b) {
  Tape* tape = same_tape(primitive, a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) shape_error(primitive, av.shape(), bv.shape(), "shapes must match");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + sign_b * bv[i];
  return tape->record(primitive, std::move(out), {a.id, b.id},
                      [sign_b](std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                               std::span<Tensor* const> gin) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (gin[0]) (*gin[0])[i] += g[i];
                          if (gin[1]) (*gin[1])[i] += sign_b * g[i];
                        }
                      });
}

}  // namespace

Var add(Var a, Var b) { return binary_same_shape("add", a, b, 1.0); }
Var sub(Var a, Var b) { return binary_same_shape("sub", a, b, -1.0); }

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ShapeError("add_n: no operands");
  Tape* tape = terms.front().tape;
  const Shape& shape = terms.front().shape();
  Tensor out(shape);
  std::vector<std::size_t> ids;
  for (const auto& t : terms) {
    if (t.tape != tape) throw StateError("add_n: operands on different tapes");
    if (t.shape() != shape) shape_error("add_n", shape, t.shape(), "shapes must match");
    const auto& tv = t.value();
    for (std::size_t i = 0; i < tv.size(); ++i) out[i] += tv[i];
    ids.push_back(t.id);
  }
  return tape->record("add_n", std::move(out), std::move(ids),
                      [](std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                         std::span<Tensor* const> gin) {
                        for (auto* gi : gin) {
                          if (!gi) continue;
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                        }
                      });
}

Var mul(Var a, Var b) {
  Tape* tape = same_tape("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("mul", av.shape(), bv.shape(), "shapes must match");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return tape->record("mul", std::move(out), {a.id, b.id},
                      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                         std::span<Tensor* const> gin) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (gin[0]) (*gin[0])[i] += g[i] * (*in[1])[i];
                          if (gin[1]) (*gin[1])[i] += g[i] * (*in[0])[i];
                        }
                      });
}

Var scale(Var x, double factor) {
  const auto& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = factor * xv[i];
  return unary("scale", x, std::move(out),
               [factor](std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                        std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
               });
}

Var mul_scalar(Var x, Var s) {
  Tape* tape = same_tape("mul_scalar", x, s);
  const auto& xv = x.value();
  const auto& sv = s.value();
  if (sv.size() != 1) shape_error("mul_scalar", xv.shape(), sv.shape(), "second operand must hold one element");
  const double c = sv[0];
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  return tape->record("mul_scalar", std::move(out), {x.id, s.id},
                      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                         std::span<Tensor* const> gin) {
                        const double c = (*in[1])[0];
                        double ds = 0.0;
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (gin[0]) (*gin[0])[i] += c * g[i];
                          ds += g[i] * (*in[0])[i];
                        }
                        if (gin[1]) (*gin[1])[0] += ds;
                      });
}

Var softmax(Var v) {
  const auto& vv = v.value();
  if (vv.rank() != 1) shape_error("softmax", vv.shape(), "expected a 1-D vector");
  const double mx = *std::max_element(vv.data().begin(), vv.data().end());
  Tensor out(vv.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < vv.size(); ++i) z += (out[i] = std::exp(vv[i] - mx));
  for (std::size_t i = 0; i < vv.size(); ++i) out[i] /= z;
  return unary("softmax", v, std::move(out),
               [](std::span<const Tensor* const>, const Tensor& y, const Tensor& g, std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 double dot = 0.0;
                 for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
                 for (std::size_t i = 0; i < y.size(); ++i) (*gin[0])[i] += y[i] * (g[i] - dot);
               });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return unary("sum", x, Tensor::scalar(s),
               [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 for (auto& v : gin[0]->data()) v += g[0];
               });
}

Var gather(Var v, std::vector<std::size_t> indices) {
  const auto& vv = v.value();
  if (indices.empty()) shape_error("gather", vv.shape(), "empty index list");
  Tensor out({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= vv.size()) shape_error("gather", vv.shape(), "index out of range");
    out[i] = vv[indices[i]];
  }
  return unary("gather", v, std::move(out),
               [indices = std::move(indices)](std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                                              std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 for (std::size_t i = 0; i < indices.size(); ++i) (*gin[0])[indices[i]] += g[i];
               });
}

Var select(Var v, std::size_t index) { return gather(v, {index}); }

Var reshape(Var x, Shape shape) {
  const auto& xv = x.value();
  if (numel(shape) != xv.size()) shape_error("reshape", xv.shape(), shape, "element counts differ");
  return unary("reshape", x, Tensor(std::move(shape), xv.values()),
               [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
               });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const auto& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
    shape_error("cross_entropy", lv.shape(), Shape{labels.size()}, "expected logits [N,C] and N labels");
  }
  const std::size_t n = lv.dim(0), c = lv.dim(1);
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const double* row = lv.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += (mx + std::log(z)) - row[static_cast<std::size_t>(y)];
  }
  loss /= static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return unary("cross_entropy", logits, Tensor::scalar(loss),
               [n, c, probs = std::move(probs), ys = std::move(ys)](std::span<const Tensor* const>, const Tensor&,
                                                                   const Tensor& g, std::span<Tensor* const> gin) {
                 if (!gin[0]) return;
                 const double s = g[0] / static_cast<double>(n);
                 for (std::size_t i = 0; i < n; ++i) {
                   for (std::size_t j = 0; j < c; ++j) {
                     const double onehot = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
                     (*gin[0])[i * c + j] += s * (probs[i * c + j] - onehot);
                   }
                 }
               });
}

}  // namespace opsense::ops
