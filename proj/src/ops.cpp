#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "dtppo/autodiff.hpp"
#include "dtppo/errors.hpp"

namespace dtppo::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": incompatible shapes " +
                                             a.shape_string() + " and " + b.shape_string());
}

[[noreturn]] void shape_error(const char* op, const std::string& what) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + what);
}

Graph& graph_of(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("operands belong to different graphs");
  return a.graph();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

void add_into(Matrix& dst, const Matrix& src, double s = 1.0) {
  double* d = dst.data();
  const double* v = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s * v[i];
}

// y = f(x) elementwise, dy/dx = df(x, y).
template <typename F, typename D>
Var unary(const char* op, Var x, F f, D df) {
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const int xi = x.id();
  Graph& g = x.graph();
  const int yi = static_cast<int>(g.node_count());
  return g.record(op, std::move(y), {x}, [xi, yi, df](Graph& gr, const Matrix& gy) {
    const Matrix& xv = gr.value_of(xi);
    const Matrix& yv = gr.value_of(yi);
    Matrix& gx = gr.grad_mut(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix y(av.rows(), bv.cols());
  matmul_acc(av, bv, y);
  const int ai = a.id(), bi = b.id();
  return g.record("matmul", std::move(y), {a, b}, [ai, bi](Graph& gr, const Matrix& gy) {
    if (gr.wants(ai)) matmul_nt_acc(gy, gr.value_of(bi), gr.grad_mut(ai));
    if (gr.wants(bi)) matmul_tn_acc(gr.value_of(ai), gy, gr.grad_mut(bi));
  });
}

Var linear(Var x, Var w, Var b) {
  Graph& g = graph_of(x, w);
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  if (xv.cols() != wv.rows()) shape_error("linear", xv, wv);
  Matrix y(xv.rows(), wv.cols());
  if (b.valid()) {
    const Matrix& bv = b.value();
    if (bv.rows() != 1 || bv.cols() != wv.cols()) shape_error("linear bias", wv, bv);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      std::copy(bv.data(), bv.data() + bv.cols(), y.data() + r * y.cols());
    }
  }
  matmul_acc(xv, wv, y);
  const int xi = x.id(), wi = w.id(), bi = b.valid() ? b.id() : -1;
  return g.record("linear", std::move(y), {x, w, b}, [xi, wi, bi](Graph& gr, const Matrix& gy) {
    if (gr.wants(xi)) matmul_nt_acc(gy, gr.value_of(wi), gr.grad_mut(xi));
    if (gr.wants(wi)) matmul_tn_acc(gr.value_of(xi), gy, gr.grad_mut(wi));
    if (bi >= 0 && gr.wants(bi)) {
      Matrix& gb = gr.grad_mut(bi);
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        for (std::size_t c = 0; c < gy.cols(); ++c) gb[c] += gy(r, c);
      }
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Matrix y = a.value();
  add_into(y, b.value());
  const int ai = a.id(), bi = b.id();
  return g.record("add", std::move(y), {a, b}, [ai, bi](Graph& gr, const Matrix& gy) {
    if (gr.wants(ai)) add_into(gr.grad_mut(ai), gy);
    if (gr.wants(bi)) add_into(gr.grad_mut(bi), gy);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Matrix y = a.value();
  add_into(y, b.value(), -1.0);
  const int ai = a.id(), bi = b.id();
  return g.record("sub", std::move(y), {a, b}, [ai, bi](Graph& gr, const Matrix& gy) {
    if (gr.wants(ai)) add_into(gr.grad_mut(ai), gy);
    if (gr.wants(bi)) add_into(gr.grad_mut(bi), gy, -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const int ai = a.id(), bi = b.id();
  return g.record("mul", std::move(y), {a, b}, [ai, bi](Graph& gr, const Matrix& gy) {
    const Matrix& av = gr.value_of(ai);
    const Matrix& bv = gr.value_of(bi);
    if (gr.wants(ai)) {
      Matrix& ga = gr.grad_mut(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (gr.wants(bi)) {
      Matrix& gb = gr.grad_mut(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var add_row(Var x, Var row) {
  Graph& g = graph_of(x, row);
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) shape_error("add_row", xv, rv);
  Matrix y = xv;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += rv[c];
  }
  const int xi = x.id(), ri = row.id();
  return g.record("add_row", std::move(y), {x, row}, [xi, ri](Graph& gr, const Matrix& gy) {
    if (gr.wants(xi)) add_into(gr.grad_mut(xi), gy);
    if (gr.wants(ri)) {
      Matrix& gr_row = gr.grad_mut(ri);
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        for (std::size_t c = 0; c < gy.cols(); ++c) gr_row[c] += gy(r, c);
      }
    }
  });
}

Var mul_row(Var x, Var row) {
  Graph& g = graph_of(x, row);
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) shape_error("mul_row", xv, rv);
  Matrix y = xv;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) *= rv[c];
  }
  const int xi = x.id(), ri = row.id();
  return g.record("mul_row", std::move(y), {x, row}, [xi, ri](Graph& gr, const Matrix& gy) {
    const Matrix& xv = gr.value_of(xi);
    const Matrix& rv = gr.value_of(ri);
    if (gr.wants(xi)) {
      Matrix& gx = gr.grad_mut(xi);
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        for (std::size_t c = 0; c < gy.cols(); ++c) gx(r, c) += gy(r, c) * rv[c];
      }
    }
    if (gr.wants(ri)) {
      Matrix& grow = gr.grad_mut(ri);
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        for (std::size_t c = 0; c < gy.cols(); ++c) grow[c] += gy(r, c) * xv(r, c);
      }
    }
  });
}

Var add_tiled(Var x, Var table) {
  Graph& g = graph_of(x, table);
  const Matrix& xv = x.value();
  const Matrix& tv = table.value();
  if (tv.cols() != xv.cols() || tv.rows() == 0 || xv.rows() % tv.rows() != 0) {
    shape_error("add_tiled", xv, tv);
  }
  Matrix y = xv;
  const std::size_t period = tv.rows();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += tv(r % period, c);
  }
  const int xi = x.id(), ti = table.id();
  return g.record("add_tiled", std::move(y), {x, table},
                  [xi, ti, period](Graph& gr, const Matrix& gy) {
                    if (gr.wants(xi)) add_into(gr.grad_mut(xi), gy);
                    if (gr.wants(ti)) {
                      Matrix& gt = gr.grad_mut(ti);
                      for (std::size_t r = 0; r < gy.rows(); ++r) {
                        for (std::size_t c = 0; c < gy.cols(); ++c) gt(r % period, c) += gy(r, c);
                      }
                    }
                  });
}

Var scale(Var x, double s) {
  Matrix y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  const int xi = x.id();
  return x.graph().record("scale", std::move(y), {x}, [xi, s](Graph& gr, const Matrix& gy) {
    add_into(gr.grad_mut(xi), gy, s);
  });
}

Var add_scalar(Var x, double s) {
  Matrix y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s;
  const int xi = x.id();
  return x.graph().record("add_scalar", std::move(y), {x}, [xi](Graph& gr, const Matrix& gy) {
    add_into(gr.grad_mut(xi), gy);
  });
}

Var scale_rows(Var x, std::vector<double> weights) {
  const Matrix& xv = x.value();
  if (weights.size() != xv.rows()) {
    shape_error("scale_rows", std::to_string(weights.size()) + " weights for " +
                                  xv.shape_string());
  }
  Matrix y = xv;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) *= weights[r];
  }
  const int xi = x.id();
  return x.graph().record("scale_rows", std::move(y), {x},
                          [xi, w = std::move(weights)](Graph& gr, const Matrix& gy) {
                            Matrix& gx = gr.grad_mut(xi);
                            for (std::size_t r = 0; r < gy.rows(); ++r) {
                              for (std::size_t c = 0; c < gy.cols(); ++c) gx(r, c) += gy(r, c) * w[r];
                            }
                          });
}

Var mask_rows(Var x, const std::vector<std::uint8_t>& keep) {
  const Matrix& xv = x.value();
  if (keep.size() != xv.rows()) {
    shape_error("mask_rows", std::to_string(keep.size()) + " flags for " + xv.shape_string());
  }
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    if (keep[r]) std::copy(xv.row(r).begin(), xv.row(r).end(), y.row(r).begin());
  }
  const int xi = x.id();
  return x.graph().record("mask_rows", std::move(y), {x},
                          [xi, keep](Graph& gr, const Matrix& gy) {
                            Matrix& gx = gr.grad_mut(xi);
                            for (std::size_t r = 0; r < gy.rows(); ++r) {
                              if (!keep[r]) continue;
                              for (std::size_t c = 0; c < gy.cols(); ++c) gx(r, c) += gy(r, c);
                            }
                          });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var gelu(Var x) {
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var clamp(Var x, double lo, double hi) {
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return v >= lo && v <= hi ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("minimum", a.value(), b.value());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix y(av.rows(), av.cols());
  std::vector<std::uint8_t> pick_a(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    pick_a[i] = av[i] <= bv[i] ? 1 : 0;
    y[i] = pick_a[i] ? av[i] : bv[i];
  }
  const int ai = a.id(), bi = b.id();
  return g.record("minimum", std::move(y), {a, b},
                  [ai, bi, pick = std::move(pick_a)](Graph& gr, const Matrix& gy) {
                    if (gr.wants(ai)) {
                      Matrix& ga = gr.grad_mut(ai);
                      for (std::size_t i = 0; i < ga.size(); ++i) {
                        if (pick[i]) ga[i] += gy[i];
                      }
                    }
                    if (gr.wants(bi)) {
                      Matrix& gb = gr.grad_mut(bi);
                      for (std::size_t i = 0; i < gb.size(); ++i) {
                        if (!pick[i]) gb[i] += gy[i];
                      }
                    }
                  });
}

Var sum(Var x) {
  const Matrix& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const int xi = x.id();
  return x.graph().record("sum", Matrix(1, 1, s), {x}, [xi](Graph& gr, const Matrix& gy) {
    Matrix& gx = gr.grad_mut(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[0];
  });
}

Var mean(Var x) {
  const Matrix& xv = x.value();
  if (xv.size() == 0) shape_error("mean", "empty input");
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const double n = static_cast<double>(xv.size());
  const int xi = x.id();
  return x.graph().record("mean", Matrix(1, 1, s / n), {x}, [xi, n](Graph& gr, const Matrix& gy) {
    Matrix& gx = gr.grad_mut(xi);
    const double d = gy[0] / n;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d;
  });
}

Var row_sum(Var x) {
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v;
    y[r] = s;
  }
  const int xi = x.id();
  return x.graph().record("row_sum", std::move(y), {x}, [xi](Graph& gr, const Matrix& gy) {
    Matrix& gx = gr.grad_mut(xi);
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += gy[r];
    }
  });
}

Var mse(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("mse", a.value(), b.value());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.size() == 0) shape_error("mse", "empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  const double n = static_cast<double>(av.size());
  const int ai = a.id(), bi = b.id();
  return g.record("mse", Matrix(1, 1, s / n), {a, b}, [ai, bi, n](Graph& gr, const Matrix& gy) {
    const Matrix& av = gr.value_of(ai);
    const Matrix& bv = gr.value_of(bi);
    const double k = 2.0 * gy[0] / n;
    if (gr.wants(ai)) {
      Matrix& ga = gr.grad_mut(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (gr.wants(bi)) {
      Matrix& gb = gr.grad_mut(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = graph_of(x, gamma);
  const Matrix& xv = x.value();
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  if (gv.rows() != 1 || gv.cols() != xv.cols()) shape_error("layer_norm gamma", xv, gv);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_error("layer_norm beta", xv, bv);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Matrix xhat(rows, cols);
  std::vector<double> rstd(rows);
  Matrix y(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (double v : xv.row(r)) mu += v;
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : xv.row(r)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat(r, c) = (xv(r, c) - mu) * rstd[r];
      y(r, c) = xhat(r, c) * gv[c] + bv[c];
    }
  }
  const int xi = x.id(), gi = gamma.id(), bi = beta.id();
  return g.record(
      "layer_norm", std::move(y), {x, gamma, beta},
      [xi, gi, bi, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& gr, const Matrix& gy) {
        const std::size_t rows = gy.rows(), cols = gy.cols();
        if (gr.wants(gi)) {
          Matrix& gg = gr.grad_mut(gi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gg[c] += gy(r, c) * xhat(r, c);
          }
        }
        if (gr.wants(bi)) {
          Matrix& gb = gr.grad_mut(bi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gb[c] += gy(r, c);
          }
        }
        if (gr.wants(xi)) {
          const Matrix& gv = gr.value_of(gi);
          Matrix& gx = gr.grad_mut(xi);
          std::vector<double> dxhat(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              dxhat[c] = gy(r, c) * gv[c];
              m1 += dxhat[c];
              m2 += dxhat[c] * xhat(r, c);
            }
            m1 /= static_cast<double>(cols);
            m2 /= static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              gx(r, c) += rstd[r] * (dxhat[c] - m1 - xhat(r, c) * m2);
            }
          }
        }
      });
}

Var softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      y(r, c) = std::exp(row[c] - mx);
      z += y(r, c);
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) y(r, c) /= z;
  }
  const int xi = x.id();
  Graph& g = x.graph();
  const int yi = static_cast<int>(g.node_count());
  return g.record("softmax_rows", std::move(y), {x}, [xi, yi](Graph& gr, const Matrix& gy) {
    const Matrix& yv = gr.value_of(yi);
    Matrix& gx = gr.grad_mut(xi);
    for (std::size_t r = 0; r < gy.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < gy.cols(); ++c) dot += gy(r, c) * yv(r, c);
      for (std::size_t c = 0; c < gy.cols(); ++c) gx(r, c) += yv(r, c) * (gy(r, c) - dot);
    }
  });
}

namespace {

// Records an op with an arbitrary number of inputs by chaining the first
// two through the initializer list and checking the rest on the graph.
Var record_many(Graph& g, const char* op, Matrix value, const std::vector<Var>& inputs,
                Graph::Backward fn) {
  // Graph::record only inspects inputs to decide whether a closure is kept.
  Var any_needing;
  for (Var v : inputs) {
    if (g.wants(v.id())) {
      any_needing = v;
      break;
    }
  }
  if (any_needing.valid()) return g.record(op, std::move(value), {any_needing}, std::move(fn));
  return g.record(op, std::move(value), {}, std::move(fn));
}

}  // namespace

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  Graph& g = parts.front().graph();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (&p.graph() != &g) throw std::logic_error("operands belong to different graphs");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<std::pair<int, std::size_t>> layout;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(), y.data() + r * cols + offset);
    }
    layout.emplace_back(p.id(), offset);
    offset += pv.cols();
  }
  return record_many(g, "concat_cols", std::move(y), parts,
                     [layout = std::move(layout)](Graph& gr, const Matrix& gy) {
                       for (const auto& [id, off] : layout) {
                         if (!gr.wants(id)) continue;
                         Matrix& gp = gr.grad_mut(id);
                         for (std::size_t r = 0; r < gp.rows(); ++r) {
                           for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += gy(r, off + c);
                         }
                       }
                     });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  Graph& g = parts.front().graph();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (&p.graph() != &g) throw std::logic_error("operands belong to different graphs");
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix y(rows, cols);
  std::vector<std::pair<int, std::size_t>> layout;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& pv = p.value();
    std::copy(pv.data(), pv.data() + pv.size(), y.data() + offset * cols);
    layout.emplace_back(p.id(), offset);
    offset += pv.rows();
  }
  return record_many(g, "concat_rows", std::move(y), parts,
                     [layout = std::move(layout), cols](Graph& gr, const Matrix& gy) {
                       for (const auto& [id, off] : layout) {
                         if (!gr.wants(id)) continue;
                         Matrix& gp = gr.grad_mut(id);
                         const double* src = gy.data() + off * cols;
                         for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
                       }
                     });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Matrix& xv = x.value();
  if (start + count > xv.rows()) {
    shape_error("slice_rows", "rows [" + std::to_string(start) + ", " +
                                  std::to_string(start + count) + ") out of " + xv.shape_string());
  }
  const std::size_t cols = xv.cols();
  Matrix y(count, cols,
           std::vector<double>(xv.data() + start * cols, xv.data() + (start + count) * cols));
  const int xi = x.id();
  return x.graph().record("slice_rows", std::move(y), {x},
                          [xi, start, cols](Graph& gr, const Matrix& gy) {
                            Matrix& gx = gr.grad_mut(xi);
                            double* dst = gx.data() + start * cols;
                            for (std::size_t i = 0; i < gy.size(); ++i) dst[i] += gy[i];
                          });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Matrix& xv = x.value();
  if (start + count > xv.cols()) {
    shape_error("slice_cols", "cols [" + std::to_string(start) + ", " +
                                  std::to_string(start + count) + ") out of " + xv.shape_string());
  }
  Matrix y(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) y(r, c) = xv(r, start + c);
  }
  const int xi = x.id();
  return x.graph().record("slice_cols", std::move(y), {x}, [xi, start](Graph& gr, const Matrix& gy) {
    Matrix& gx = gr.grad_mut(xi);
    for (std::size_t r = 0; r < gy.rows(); ++r) {
      for (std::size_t c = 0; c < gy.cols(); ++c) gx(r, start + c) += gy(r, c);
    }
  });
}

Var gather_rows(Var x, std::vector<std::int64_t> index) {
  const Matrix& xv = x.value();
  const std::size_t cols = xv.cols();
  Matrix y(index.size(), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    if (static_cast<std::size_t>(index[i]) >= xv.rows()) {
      shape_error("gather_rows", "row " + std::to_string(index[i]) + " out of " + xv.shape_string());
    }
    const auto src = xv.row(static_cast<std::size_t>(index[i]));
    std::copy(src.begin(), src.end(), y.data() + i * cols);
  }
  const int xi = x.id();
  return x.graph().record("gather_rows", std::move(y), {x},
                          [xi, idx = std::move(index), cols](Graph& gr, const Matrix& gy) {
                            Matrix& gx = gr.grad_mut(xi);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              if (idx[i] < 0) continue;
                              double* dst = gx.data() + static_cast<std::size_t>(idx[i]) * cols;
                              const double* src = gy.data() + i * cols;
                              for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                            }
                          });
}

Var stop_gradient(Var x) { return x.graph().constant(x.value()); }

Var block_masked_mean(Var x, std::size_t block, const std::vector<std::uint8_t>& valid) {
  const Matrix& xv = x.value();
  if (block == 0 || xv.rows() % block != 0 || valid.size() != xv.rows()) {
    shape_error("block_masked_mean", "block " + std::to_string(block) + ", " +
                                         std::to_string(valid.size()) + " flags for " +
                                         xv.shape_string());
  }
  const std::size_t blocks = xv.rows() / block, cols = xv.cols();
  Matrix y(blocks, cols);
  std::vector<double> inv_count(blocks, 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < block; ++t) {
      const std::size_t r = b * block + t;
      if (!valid[r]) continue;
      ++count;
      for (std::size_t c = 0; c < cols; ++c) y(b, c) += xv(r, c);
    }
    if (count > 0) {
      inv_count[b] = 1.0 / static_cast<double>(count);
      for (std::size_t c = 0; c < cols; ++c) y(b, c) *= inv_count[b];
    }
  }
  const int xi = x.id();
  return x.graph().record("block_masked_mean", std::move(y), {x},
                          [xi, block, valid, inv = std::move(inv_count)](Graph& gr, const Matrix& gy) {
                            Matrix& gx = gr.grad_mut(xi);
                            for (std::size_t r = 0; r < gx.rows(); ++r) {
                              if (!valid[r]) continue;
                              const std::size_t b = r / block;
                              for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += gy(b, c) * inv[b];
                            }
                          });
}

Var attention(Var q, Var k, Var v, const AttentionLayout& layout) {
  Graph& g = graph_of(q, k);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  require_same_shape("attention q/k", qv, kv);
  require_same_shape("attention q/v", qv, vv);
  if (layout.heads == 0 || qv.cols() % layout.heads != 0) {
    throw Error(ErrorCode::kHeadDivisibility,
                "attention width " + std::to_string(qv.cols()) + " is not divisible by " +
                    std::to_string(layout.heads) + " heads");
  }
  const std::size_t rows = qv.rows(), width = qv.cols(), T = layout.block;
  if (T == 0 || rows % T != 0) {
    shape_error("attention", std::to_string(rows) + " rows do not split into blocks of " +
                                 std::to_string(T));
  }
  std::vector<std::uint8_t> valid = layout.valid;
  if (valid.empty()) valid.assign(rows, 1);
  if (valid.size() != rows) {
    shape_error("attention", std::to_string(valid.size()) + " mask flags for " + std::to_string(rows) +
                                 " rows");
  }
  const std::size_t H = layout.heads, dh = width / H, blocks = rows / T;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = layout.causal;

  // probs[((b * H + h) * T + i) * T + j]
  std::vector<double> probs(blocks * H * T * T, 0.0);
  Matrix y(rows, width);
  std::vector<double> s(T);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        const std::size_t qi = b * T + i;
        if (!valid[qi]) continue;
        const double* qrow = qv.data() + qi * width + off;
        double mx = -std::numeric_limits<double>::infinity();
        const std::size_t jend = causal ? i + 1 : T;
        for (std::size_t j = 0; j < jend; ++j) {
          const std::size_t kj = b * T + j;
          if (!valid[kj]) continue;
          const double* krow = kv.data() + kj * width + off;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qrow[c] * krow[c];
          s[j] = dot * sc;
          mx = std::max(mx, s[j]);
        }
        double* p = probs.data() + ((b * H + h) * T + i) * T;
        double z = 0.0;
        for (std::size_t j = 0; j < jend; ++j) {
          if (!valid[b * T + j]) continue;
          p[j] = std::exp(s[j] - mx);
          z += p[j];
        }
        if (z == 0.0) continue;
        double* out = y.data() + qi * width + off;
        for (std::size_t j = 0; j < jend; ++j) {
          if (!valid[b * T + j]) continue;
          p[j] /= z;
          const double* vrow = vv.data() + (b * T + j) * width + off;
          for (std::size_t c = 0; c < dh; ++c) out[c] += p[j] * vrow[c];
        }
      }
    }
  }

  const int qi_id = q.id(), ki_id = k.id(), vi_id = v.id();
  // Graph::record only needs to know whether any input wants a gradient.
  const bool any = g.wants(qi_id) || g.wants(ki_id) || g.wants(vi_id);
  Var carrier = g.wants(qi_id) ? q : (g.wants(ki_id) ? k : v);
  auto fn = [=, probs = std::move(probs), valid = std::move(valid)](Graph& gr, const Matrix& gy) {
    const Matrix& qv = gr.value_of(qi_id);
    const Matrix& kv = gr.value_of(ki_id);
    const Matrix& vv = gr.value_of(vi_id);
    Matrix& gq = gr.grad_mut(qi_id);
    Matrix& gk = gr.grad_mut(ki_id);
    Matrix& gv = gr.grad_mut(vi_id);
    std::vector<double> dp(T);
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < T; ++i) {
          const std::size_t qi = b * T + i;
          if (!valid[qi]) continue;
          const double* p = probs.data() + ((b * H + h) * T + i) * T;
          const double* go = gy.data() + qi * width + off;
          const std::size_t jend = causal ? i + 1 : T;
          double pdp = 0.0;
          for (std::size_t j = 0; j < jend; ++j) {
            if (!valid[b * T + j]) continue;
            const std::size_t kj = b * T + j;
            const double* vrow = vv.data() + kj * width + off;
            double d = 0.0;
            for (std::size_t c = 0; c < dh; ++c) d += go[c] * vrow[c];
            dp[j] = d;
            pdp += p[j] * d;
            double* gvr = gv.data() + kj * width + off;
            for (std::size_t c = 0; c < dh; ++c) gvr[c] += p[j] * go[c];
          }
          const double* qrow = qv.data() + qi * width + off;
          double* gqr = gq.data() + qi * width + off;
          for (std::size_t j = 0; j < jend; ++j) {
            if (!valid[b * T + j]) continue;
            const std::size_t kj = b * T + j;
            const double ds = p[j] * (dp[j] - pdp) * sc;
            const double* krow = kv.data() + kj * width + off;
            double* gkr = gk.data() + kj * width + off;
            for (std::size_t c = 0; c < dh; ++c) {
              gqr[c] += ds * krow[c];
              gkr[c] += ds * qrow[c];
            }
          }
        }
      }
    }
  };
  if (!any) return g.record("attention", std::move(y), {}, nullptr);
  return g.record("attention", std::move(y), {carrier}, std::move(fn));
}

}  // namespace dtppo::ad
