#include "camvr/ops.hpp"

#include "camvr/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace camvr::ops {
namespace {

std::atomic<bool> g_fault{false};

void require_same(const char *op, const Var &a, const Var &b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

void require_matrix(const char *op, const Var &a) {
  if (a.value().rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

template <class F> Tensor map(const Tensor &x, F f) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = f(x[i]);
  return y;
}

} // namespace

void set_backward_fault(bool enabled) { g_fault = enabled; }
bool backward_fault() { return g_fault; }

Var matmul(const Var &a, const Var &b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  if (b.value().rows() != k)
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " . " +
                         to_string(b.shape()));
  Tensor out({m, n});
  kernels::gemm(false, false, m, n, k, a.value().data(), b.value().data(), out.data(), false);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, k](Tape &t, const Tensor &g) {
    if (a.requires_grad())
      kernels::gemm(false, true, m, k, n, g.data(), b.value().data(), t.grad_of(a).data(), true);
    if (b.requires_grad())
      kernels::gemm(true, false, k, n, m, a.value().data(), g.data(), t.grad_of(b).data(), true);
  });
}

Var matmul_nt(const Var &a, const Var &b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  if (b.value().cols() != k)
    throw DimensionError("matmul_nt: inner dimensions differ, " + to_string(a.shape()) +
                         " . " + to_string(b.shape()) + "^T");
  Tensor out({m, n});
  kernels::gemm(false, true, m, n, k, a.value().data(), b.value().data(), out.data(), false);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, k](Tape &t, const Tensor &g) {
    if (a.requires_grad())
      kernels::gemm(false, false, m, k, n, g.data(), b.value().data(), t.grad_of(a).data(),
                    true);
    if (b.requires_grad())
      kernels::gemm(true, false, n, k, m, g.data(), a.value().data(), t.grad_of(b).data(), true);
  });
}

Var add(const Var &a, const Var &b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] + b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape &t, const Tensor &g) {
    for (const Var &v : {a, b})
      if (v.requires_grad()) {
        auto &gv = t.grad_of(v);
        for (std::size_t i = 0; i < g.size(); ++i)
          gv[i] += g[i];
      }
  });
}

Var sub(const Var &a, const Var &b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] - b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape &t, const Tensor &g) {
    if (a.requires_grad()) {
      auto &ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto &gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i)
        gb[i] -= g[i];
    }
  });
}

Var mul(const Var &a, const Var &b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] * b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape &t, const Tensor &g) {
    if (a.requires_grad()) {
      auto &ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      auto &gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i)
        gb[i] += g[i] * a.value()[i];
    }
  });
}

Var add_rows(const Var &x, const Var &row) {
  require_matrix("add_rows", x);
  require_matrix("add_rows", row);
  const std::size_t n = x.value().rows(), d = x.value().cols();
  if (row.value().rows() != 1 || row.value().cols() != d)
    throw DimensionError("add_rows: cannot broadcast " + to_string(row.shape()) + " over " +
                         to_string(x.shape()));
  Tensor out(x.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out.at(r, c) = x.value().at(r, c) + row.value()[c];
  return x.tape().record(std::move(out), {x, row}, [x, row, n, d](Tape &t, const Tensor &g) {
    if (x.requires_grad()) {
      auto &gx = t.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i];
    }
    if (row.requires_grad()) {
      auto &gr = t.grad_of(row);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c)
          gr[c] += g[r * d + c];
    }
  });
}

Var broadcast_rows(const Var &row, std::size_t n) {
  require_matrix("broadcast_rows", row);
  if (row.value().rows() != 1 || n == 0)
    throw DimensionError("broadcast_rows: expected a single row, got " + to_string(row.shape()));
  const std::size_t d = row.value().cols();
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(row.value().data().begin(), d, out.data().begin() + std::ptrdiff_t(r * d));
  return row.tape().record(std::move(out), {row}, [row, n, d](Tape &t, const Tensor &g) {
    auto &gr = t.grad_of(row);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        gr[c] += g[r * d + c];
  });
}

Var scale(const Var &x, double c) { return affine(x, c, 0.0); }

Var affine(const Var &x, double a, double b) {
  Tensor out = map(x.value(), [a, b](double v) { return a * v + b; });
  return x.tape().record(std::move(out), {x}, [x, a](Tape &t, const Tensor &g) {
    auto &gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += a * g[i];
  });
}

Var sigmoid(const Var &x) {
  Tensor out = map(x.value(), [](double v) {
    // split by sign so exp never overflows
    if (v >= 0)
      return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  const std::size_t id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, id](Tape &t, const Tensor &g) {
    const Tensor &y = t.value(id);
    const double fault = g_fault ? 1.01 : 1.0;
    auto &gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += fault * g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(const Var &x) {
  Tensor out = map(x.value(), [](double v) { return std::tanh(v); });
  const std::size_t id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, id](Tape &t, const Tensor &g) {
    const Tensor &y = t.value(id);
    auto &gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var softmax_rows(const Var &x) {
  require_matrix("softmax_rows", x);
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double *in = x.value().data().data() + i * c;
    double *o = out.data().data() + i * c;
    const double mx = *std::max_element(in, in + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < c; ++j)
      o[j] /= s;
  }
  const std::size_t id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, id, r, c](Tape &t, const Tensor &g) {
    const Tensor &y = t.value(id);
    auto &gx = t.grad_of(x);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j)
        dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

Var concat_cols(const Var &a, const Var &b) {
  require_matrix("concat_cols", a);
  require_matrix("concat_cols", b);
  const std::size_t n = a.value().rows(), p = a.value().cols(), q = b.value().cols();
  if (b.value().rows() != n)
    throw DimensionError("concat_cols: row counts differ, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  Tensor out({n, p + q});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < p; ++c)
      out.at(r, c) = a.value().at(r, c);
    for (std::size_t c = 0; c < q; ++c)
      out.at(r, p + c) = b.value().at(r, c);
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, n, p, q](Tape &t, const Tensor &g) {
    if (a.requires_grad()) {
      auto &ga = t.grad_of(a);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < p; ++c)
          ga[r * p + c] += g[r * (p + q) + c];
    }
    if (b.requires_grad()) {
      auto &gb = t.grad_of(b);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < q; ++c)
          gb[r * q + c] += g[r * (p + q) + p + c];
    }
  });
}

Var concat_rows(const std::vector<Var> &parts) {
  if (parts.empty())
    throw ContractError("concat_rows: no inputs");
  const std::size_t d = parts.front().value().cols();
  std::size_t n = 0;
  for (const auto &p : parts) {
    require_matrix("concat_rows", p);
    if (p.value().cols() != d)
      throw DimensionError("concat_rows: widths differ, " + to_string(parts.front().shape()) +
                           " vs " + to_string(p.shape()));
    n += p.value().rows();
  }
  Tensor out({n, d});
  std::size_t off = 0;
  for (const auto &p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + std::ptrdiff_t(off));
    off += p.value().size();
  }
  return parts.front().tape().record(std::move(out), parts, [parts](Tape &t, const Tensor &g) {
    std::size_t off = 0;
    for (const auto &p : parts) {
      if (p.requires_grad()) {
        auto &gp = t.grad_of(p);
        for (std::size_t i = 0; i < gp.size(); ++i)
          gp[i] += g[off + i];
      }
      off += p.value().size();
    }
  });
}

Var mean_rows(const Var &x) {
  require_matrix("mean_rows", x);
  const std::size_t n = x.value().rows(), d = x.value().cols();
  Tensor out({1, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out[c] += x.value().at(r, c);
  for (std::size_t c = 0; c < d; ++c)
    out[c] /= double(n);
  return x.tape().record(std::move(out), {x}, [x, n, d](Tape &t, const Tensor &g) {
    auto &gx = t.grad_of(x);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        gx[r * d + c] += g[c] / double(n);
  });
}

Var sum(const Var &x) {
  double s = 0.0;
  for (double v : x.value().data())
    s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape &t, const Tensor &g) {
    auto &gx = t.grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += g[0];
  });
}

Var reshape(const Var &x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape &t, const Tensor &g) {
    auto &gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += g[i];
  });
}

Var conv2d(const Var &x, const Var &k) {
  const Tensor &xv = x.value();
  const Tensor &kv = k.value();
  if (xv.rank() != 3 || kv.rank() != 4)
    throw DimensionError("conv2d: expected [H x W x Cin] and [kh x kw x Cin x Cout], got " +
                         to_string(xv.shape()) + " and " + to_string(kv.shape()));
  if (kv.dim(0) % 2 == 0 || kv.dim(1) % 2 == 0)
    throw ConfigError("conv2d: kernel extents must be odd for same padding, got " +
                      to_string(kv.shape()));
  if (kv.dim(2) != xv.dim(2))
    throw DimensionError("conv2d: input channels " + to_string(xv.shape()) +
                         " do not match kernel " + to_string(kv.shape()));
  const kernels::ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2),
                                  kv.dim(0), kv.dim(1), kv.dim(3)};
  Tensor out({geo.height, geo.width, geo.out_channels});
  kernels::conv2d(geo, xv.data(), kv.data(), out.data());
  return x.tape().record(std::move(out), {x, k}, [x, k, geo](Tape &t, const Tensor &g) {
    if (x.requires_grad())
      kernels::conv2d_grad_input(geo, g.data(), k.value().data(), t.grad_of(x).data());
    if (k.requires_grad())
      kernels::conv2d_grad_kernel(geo, x.value().data(), g.data(), t.grad_of(k).data());
  });
}

Var avg_pool2d(const Var &x, std::size_t f) {
  const Tensor &xv = x.value();
  if (xv.rank() != 3 || f == 0 || xv.dim(0) % f || xv.dim(1) % f)
    throw DimensionError("avg_pool2d: factor " + std::to_string(f) + " does not tile " +
                         to_string(xv.shape()));
  const std::size_t h = xv.dim(0) / f, w = xv.dim(1) / f, c = xv.dim(2), W = xv.dim(1);
  const double inv = 1.0 / double(f * f);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            out[(y * w + xx) * c + ch] += xv[((y * f + dy) * W + xx * f + dx) * c + ch] * inv;
  return x.tape().record(std::move(out), {x}, [x, f, h, w, c, W, inv](Tape &t, const Tensor &g) {
    auto &gx = t.grad_of(x);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx)
            for (std::size_t ch = 0; ch < c; ++ch)
              gx[((y * f + dy) * W + xx * f + dx) * c + ch] += g[(y * w + xx) * c + ch] * inv;
  });
}

Var upsample_nearest(const Var &x, std::size_t f) {
  const Tensor &xv = x.value();
  if (xv.rank() != 3 || f == 0)
    throw DimensionError("upsample_nearest: expected [H x W x C], got " + to_string(xv.shape()));
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2), H = h * f, W = w * f;
  Tensor out({H, W, c});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t xx = 0; xx < W; ++xx)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * W + xx) * c + ch] = xv[((y / f) * w + xx / f) * c + ch];
  return x.tape().record(std::move(out), {x}, [x, f, w, c, H, W](Tape &t, const Tensor &g) {
    auto &gx = t.grad_of(x);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch)
          gx[((y / f) * w + xx / f) * c + ch] += g[(y * W + xx) * c + ch];
  });
}

Var scale_rows(const Var &x, const Var &s) {
  require_matrix("scale_rows", x);
  require_matrix("scale_rows", s);
  const std::size_t n = x.value().rows(), d = x.value().cols();
  if (s.value().rows() != n || s.value().cols() != 1)
    throw DimensionError("scale_rows: scale " + to_string(s.shape()) + " does not match rows of " +
                         to_string(x.shape()));
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out.at(r, c) = x.value().at(r, c) * s.value()[r];
  return x.tape().record(std::move(out), {x, s}, [x, s, n, d](Tape &t, const Tensor &g) {
    if (x.requires_grad()) {
      auto &gx = t.grad_of(x);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c)
          gx[r * d + c] += g[r * d + c] * s.value()[r];
    }
    if (s.requires_grad()) {
      auto &gs = t.grad_of(s);
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c)
          acc += g[r * d + c] * x.value()[r * d + c];
        gs[r] += acc;
      }
    }
  });
}

Var gather_rows(const Var &table, const std::vector<std::size_t> &ids) {
  require_matrix("gather_rows", table);
  if (ids.empty())
    throw ContractError("gather_rows: no ids");
  const std::size_t v = table.value().rows(), d = table.value().cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= v)
      throw ContractError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                          std::to_string(v) + " rows");
    for (std::size_t c = 0; c < d; ++c)
      out.at(r, c) = table.value().at(ids[r], c);
  }
  return table.tape().record(std::move(out), {table}, [table, ids, d](Tape &t, const Tensor &g) {
    auto &gt = t.grad_of(table);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < d; ++c)
        gt[ids[r] * d + c] += g[r * d + c];
  });
}

Var cross_entropy(const Var &logits, std::size_t target) {
  const Tensor &z = logits.value();
  if (target >= z.size())
    throw ContractError("cross_entropy: target " + std::to_string(target) +
                        " outside vocabulary of " + std::to_string(z.size()));
  const double mx = *std::max_element(z.data().begin(), z.data().end());
  double s = 0.0;
  for (double v : z.data())
    s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  const double loss = std::max(0.0, lse - z[target]);
  return logits.tape().record(Tensor::scalar(loss), {logits},
                              [logits, target, lse](Tape &t, const Tensor &g) {
                                auto &gz = t.grad_of(logits);
                                const Tensor &zz = logits.value();
                                for (std::size_t i = 0; i < zz.size(); ++i)
                                  gz[i] += g[0] * std::exp(zz[i] - lse);
                                gz[target] -= g[0];
                              });
}

} // namespace camvr::ops
