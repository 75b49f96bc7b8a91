#include "opd/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "opd/errors.hpp"

namespace opd {
namespace {

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

template <typename F, typename G>
Var unary(Var x, F forward, G derivative_from_output) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  return x.tape().push(std::move(out), {x}, [derivative_from_output](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    if (!t.requires_grad(in)) return;
    const Tensor& y = t.value(self);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * derivative_from_output(y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(a.shape()) +
                         " x " + to_string(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return a.tape().push(std::move(out), {a, b}, [m, k, n](Tape& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) gemm_nt(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) gemm_tn(t.value(ia).data(), g.data(), t.grad(ib).data(), m, k, n);
  });
}

Var matmul_bt(Var a, Var b) {
  require_rank(a, 2, "matmul_bt");
  require_rank(b, 2, "matmul_bt");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
  if (b.value().dim(1) != k) {
    throw DimensionError("matmul_bt: inner dimensions disagree for " + to_string(a.shape()) +
                         " x " + to_string(b.shape()) + "^T");
  }
  Tensor out({m, n});
  gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
  return a.tape().push(std::move(out), {a, b}, [m, k, n](Tape& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.grad(self);
    // dA = G B, dB = G^T A
    if (t.requires_grad(ia)) gemm_nn(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) gemm_tn(g.data(), t.value(ia).data(), t.grad(ib).data(), m, n, k);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.set_requires_grad(false);
  accumulate(out, b.value());
  return a.tape().push(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t in = t.input(self, k);
      if (t.requires_grad(in)) accumulate(t.grad(in), t.grad(self));
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().push(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().push(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return a.tape().push(std::move(out), {a}, [factor](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    if (!t.requires_grad(in)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var add_row(Var matrix, Var row) {
  require_rank(matrix, 2, "add_row");
  require_rank(row, 1, "add_row");
  const std::size_t m = matrix.value().dim(0), n = matrix.value().dim(1);
  if (row.value().dim(0) != n) {
    throw DimensionError("add_row: cannot add " + to_string(row.shape()) + " to rows of " +
                         to_string(matrix.shape()));
  }
  Tensor out = matrix.value();
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += row.value()[j];
  }
  return matrix.tape().push(std::move(out), {matrix, row}, [m, n](Tape& t, std::size_t self) {
    const std::size_t im = t.input(self, 0), ir = t.input(self, 1);
    const Tensor& g = t.grad(self);
    if (t.requires_grad(im)) accumulate(t.grad(im), g);
    if (t.requires_grad(ir)) {
      Tensor& gr = t.grad(ir);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gr[j] += g.at(i, j);
      }
    }
  });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double y) { return 1.0 - y * y; });
}

Var softmax(Var x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  const Tensor& xv = x.value();
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return x.tape().push(std::move(out), {x}, [outer, inner, len](Tape& t, std::size_t self) {
    const std::size_t id = t.input(self, 0);
    if (!t.requires_grad(id)) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(id);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t k = base + j * inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape().push(Tensor::scalar(total), {x}, [](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    if (!t.requires_grad(in)) return;
    const double g = t.grad(self)[0];
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var row_sum(Var x) {
  require_rank(x, 2, "row_sum");
  const std::size_t m = x.value().dim(0), n = x.value().dim(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (double v : x.value().row(i)) acc += v;
    out[i] = acc;
  }
  return x.tape().push(std::move(out), {x}, [m, n](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    if (!t.requires_grad(in)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += g[i];
    }
  });
}

Var mean_rows(Var x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t m = x.value().dim(0), n = x.value().dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += x.value().at(i, j);
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
  return x.tape().push(std::move(out), {x}, [m, n](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    if (!t.requires_grad(in)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(in);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += g[j] * inv;
    }
  });
}

Var rowwise_dot(Var a, Var b) {
  require_rank(a, 2, "rowwise_dot");
  require_same_shape(a, b, "rowwise_dot");
  const std::size_t m = a.value().dim(0), n = a.value().dim(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    const auto ar = a.value().row(i);
    const auto br = b.value().row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += ar[j] * br[j];
    out[i] = acc;
  }
  return a.tape().push(std::move(out), {a, b}, [m, n](Tape& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g[i] * bv.at(i, j);
      }
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb.at(i, j) += g[i] * av.at(i, j);
      }
    }
  });
}

Var gather_rows(Var table, std::span<const std::int32_t> indices) {
  require_rank(table, 2, "gather_rows");
  if (indices.empty()) throw EmptySourceError("gather_rows: no rows selected");
  const std::size_t rows = table.value().dim(0), n = table.value().dim(1);
  Tensor out({indices.size(), n});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = indices[i];
    if (r < 0 || static_cast<std::size_t>(r) >= rows) {
      throw ContractError("gather_rows: index " + std::to_string(r) + " outside table of " +
                          std::to_string(rows) + " rows");
    }
    std::copy_n(table.value().row(r).data(), n, out.row(i).data());
  }
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  return table.tape().push(std::move(out), {table},
                           [idx = std::move(idx), n](Tape& t, std::size_t self) {
                             const std::size_t in = t.input(self, 0);
                             if (!t.requires_grad(in)) return;
                             const Tensor& g = t.grad(self);
                             Tensor& gt = t.grad(in);
                             for (std::size_t i = 0; i < idx.size(); ++i) {
                               double* dst = gt.row(idx[i]).data();
                               const double* src = g.row(i).data();
                               for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                             }
                           });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.value().dim(0), n = x.value().dim(1);
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = x.value().at(i, begin + j);
  }
  return x.tape().push(std::move(out), {x}, [m, w, begin](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    if (!t.requires_grad(in)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) gx.at(i, begin + j) += g.at(i, j);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.value().dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + to_string(parts.front().shape()) +
                           " vs " + to_string(p.shape()));
    }
    widths.push_back(p.value().dim(1));
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, offset + j) = parts[k].value().at(i, j);
    }
    offset += widths[k];
  }
  return parts.front().tape().push(std::move(out), parts, [m, widths](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t in = t.input(self, k);
      if (t.requires_grad(in)) {
        Tensor& gx = t.grad(in);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) gx.at(i, j) += g.at(i, offset + j);
        }
      }
      offset += widths[k];
    }
  });
}

Var clamp(Var x, double lo, double hi) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x.value()[i], lo, hi);
  return x.tape().push(std::move(out), {x}, [lo, hi](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    if (!t.requires_grad(in)) return;
    const Tensor& xv = t.value(in);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] >= lo && xv[i] <= hi) gx[i] += g[i];
    }
  });
}

Var conv1d(Var embedded, Var kernels, Var bias) {
  require_rank(embedded, 2, "conv1d");
  require_rank(kernels, 3, "conv1d");
  require_rank(bias, 1, "conv1d");
  const std::size_t T = embedded.value().dim(0), de = embedded.value().dim(1);
  const std::size_t dc = kernels.value().dim(0), w = kernels.value().dim(1);
  if (w % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(w));
  if (kernels.value().dim(2) != de || bias.value().dim(0) != dc) {
    throw DimensionError("conv1d: kernels " + to_string(kernels.shape()) + " and bias " +
                         to_string(bias.shape()) + " incompatible with input " +
                         to_string(embedded.shape()));
  }
  const auto pad = static_cast<std::ptrdiff_t>(w / 2);
  const double* x = embedded.value().data();
  const double* k = kernels.value().data();
  Tensor out({T, dc});
  for (std::size_t t = 0; t < T; ++t) {
    // window rows [t - pad, t + pad] clipped to the sequence
    const std::ptrdiff_t first = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(t) - pad);
    const std::ptrdiff_t last =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(T) - 1, static_cast<std::ptrdiff_t>(t) + pad);
    const std::size_t j0 = static_cast<std::size_t>(first - (static_cast<std::ptrdiff_t>(t) - pad));
    const std::size_t span = static_cast<std::size_t>(last - first + 1) * de;
    const double* xs = x + static_cast<std::size_t>(first) * de;
    for (std::size_t c = 0; c < dc; ++c) {
      const double* kc = k + (c * w + j0) * de;
      double acc = bias.value()[c];
      for (std::size_t i = 0; i < span; ++i) acc += kc[i] * xs[i];
      out.at(t, c) = acc;
    }
  }
  return embedded.tape().push(
      std::move(out), {embedded, kernels, bias}, [T, de, dc, w, pad](Tape& tp, std::size_t self) {
        const std::size_t ix = tp.input(self, 0), ik = tp.input(self, 1), ib = tp.input(self, 2);
        const Tensor& g = tp.grad(self);
        const bool gx_on = tp.requires_grad(ix), gk_on = tp.requires_grad(ik);
        if (tp.requires_grad(ib)) {
          Tensor& gb = tp.grad(ib);
          for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t c = 0; c < dc; ++c) gb[c] += g.at(t, c);
          }
        }
        if (!gx_on && !gk_on) return;
        const double* x = tp.value(ix).data();
        const double* k = tp.value(ik).data();
        double* gx = gx_on ? tp.grad(ix).data() : nullptr;
        double* gk = gk_on ? tp.grad(ik).data() : nullptr;
        for (std::size_t t = 0; t < T; ++t) {
          const std::ptrdiff_t first =
              std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(t) - pad);
          const std::ptrdiff_t last = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(T) - 1,
                                                               static_cast<std::ptrdiff_t>(t) + pad);
          const std::size_t j0 =
              static_cast<std::size_t>(first - (static_cast<std::ptrdiff_t>(t) - pad));
          const std::size_t span = static_cast<std::size_t>(last - first + 1) * de;
          const std::size_t xoff = static_cast<std::size_t>(first) * de;
          for (std::size_t c = 0; c < dc; ++c) {
            const double gy = g.at(t, c);
            if (gy == 0.0) continue;
            const std::size_t koff = (c * w + j0) * de;
            if (gk) {
              for (std::size_t i = 0; i < span; ++i) gk[koff + i] += gy * x[xoff + i];
            }
            if (gx) {
              for (std::size_t i = 0; i < span; ++i) gx[xoff + i] += gy * k[koff + i];
            }
          }
        }
      });
}

Var bce_loss(Var probs, Var targets) {
  require_same_shape(probs, targets, "bce_loss");
  const Tensor& p = probs.value();
  const Tensor& y = targets.value();
  const auto n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    total -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  return probs.tape().push(Tensor::scalar(total / n), {probs, targets}, [n](Tape& t, std::size_t self) {
    const std::size_t ip = t.input(self, 0), iy = t.input(self, 1);
    const Tensor& p = t.value(ip);
    const Tensor& y = t.value(iy);
    const double g = t.grad(self)[0] / n;
    if (t.requires_grad(ip)) {
      Tensor& gp = t.grad(ip);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < kProbabilityEpsilon || p[i] > 1.0 - kProbabilityEpsilon) continue;
        gp[i] += g * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]));
      }
    }
    if (t.requires_grad(iy)) {
      Tensor& gy = t.grad(iy);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = std::clamp(p[i], kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
        gy[i] += g * (std::log(1.0 - pc) - std::log(pc));
      }
    }
  });
}

Var multi_head_attention(Var queries, Var keys, Var values, const AttentionWeights& w) {
  const std::size_t heads = w.query.size();
  if (heads == 0 || w.key.size() != heads || w.value.size() != heads) {
    throw DimensionError("multi_head_attention: per-head weight lists must be non-empty and equal length");
  }
  require_same_shape(keys, values, "multi_head_attention keys/values");
  std::vector<Var> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var q = matmul(queries, w.query[h]);  // [L x dh]
    const Var k = matmul(keys, w.key[h]);       // [S x dh]
    const Var v = matmul(values, w.value[h]);   // [S x dh]
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.value().dim(1)));
    const Var scores = scale(matmul_bt(q, k), inv_sqrt);  // [L x S]
    outputs.push_back(matmul(softmax(scores, 1), v));
  }
  const Var joined = heads == 1 ? outputs.front() : concat_cols(outputs);
  return matmul(joined, w.output);
}

}  // namespace opd
