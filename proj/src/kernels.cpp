#include "camvr/kernels.hpp"

#include <vector>

namespace camvr::kernels {
namespace {

void gemm_row(bool trans_a, bool trans_b, std::size_t i, std::size_t m, std::size_t n,
              std::size_t k, const double *a, const double *b, double *c, bool accumulate) {
  double *ci = c + i * n;
  if (!trans_b) {
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j)
        ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = trans_a ? a[p * m + i] : a[i * k + p];
      const double *bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j)
        ci[j] += aip * bp[j];
    }
    return;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double *bj = b + j * k;
    double acc = accumulate ? ci[j] : 0.0;
    if (trans_a) {
      for (std::size_t p = 0; p < k; ++p)
        acc += a[p * m + i] * bj[p];
    } else {
      const double *ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p)
        acc += ai[p] * bj[p];
    }
    ci[j] = acc;
  }
}

void conv_row(const ConvGeometry &g, std::size_t y, const double *x, const double *k,
              double *out) {
  const std::size_t ph = g.kernel_h / 2, pw = g.kernel_w / 2;
  const std::size_t cin = g.in_channels, cout = g.out_channels;
  for (std::size_t xx = 0; xx < g.width; ++xx) {
    double *o = out + (y * g.width + xx) * cout;
    for (std::size_t co = 0; co < cout; ++co)
      o[co] = 0.0;
    for (std::size_t dy = 0; dy < g.kernel_h; ++dy) {
      const std::ptrdiff_t sy = std::ptrdiff_t(y + dy) - std::ptrdiff_t(ph);
      if (sy < 0 || sy >= std::ptrdiff_t(g.height))
        continue;
      for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
        const std::ptrdiff_t sx = std::ptrdiff_t(xx + dx) - std::ptrdiff_t(pw);
        if (sx < 0 || sx >= std::ptrdiff_t(g.width))
          continue;
        const double *src = x + (std::size_t(sy) * g.width + std::size_t(sx)) * cin;
        const double *kk = k + (dy * g.kernel_w + dx) * cin * cout;
        for (std::size_t c = 0; c < cin; ++c) {
          const double v = src[c];
          const double *kc = kk + c * cout;
          for (std::size_t co = 0; co < cout; ++co)
            o[co] += v * kc[co];
        }
      }
    }
  }
}

void conv_grad_input_row(const ConvGeometry &g, std::size_t y, const double *grad_out,
                         const double *k, double *grad_x, std::vector<double> &acc) {
  const std::size_t ph = g.kernel_h / 2, pw = g.kernel_w / 2;
  const std::size_t cin = g.in_channels, cout = g.out_channels;
  for (std::size_t xx = 0; xx < g.width; ++xx) {
    acc.assign(cin, 0.0);
    for (std::size_t dy = 0; dy < g.kernel_h; ++dy) {
      // output row oy reads input row y when oy + dy - ph == y
      const std::ptrdiff_t oy = std::ptrdiff_t(y + ph) - std::ptrdiff_t(dy);
      if (oy < 0 || oy >= std::ptrdiff_t(g.height))
        continue;
      for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
        const std::ptrdiff_t ox = std::ptrdiff_t(xx + pw) - std::ptrdiff_t(dx);
        if (ox < 0 || ox >= std::ptrdiff_t(g.width))
          continue;
        const double *go = grad_out + (std::size_t(oy) * g.width + std::size_t(ox)) * cout;
        const double *kk = k + (dy * g.kernel_w + dx) * cin * cout;
        for (std::size_t c = 0; c < cin; ++c) {
          const double *kc = kk + c * cout;
          double s = 0.0;
          for (std::size_t co = 0; co < cout; ++co)
            s += go[co] * kc[co];
          acc[c] += s;
        }
      }
    }
    double *gx = grad_x + (y * g.width + xx) * cin;
    for (std::size_t c = 0; c < cin; ++c)
      gx[c] += acc[c];
  }
}

// tap = (dy * kw + dx) * cin + c
void conv_grad_kernel_tap(const ConvGeometry &g, std::size_t tap, const double *x,
                          const double *grad_out, double *grad_k, std::vector<double> &acc) {
  const std::size_t ph = g.kernel_h / 2, pw = g.kernel_w / 2;
  const std::size_t cin = g.in_channels, cout = g.out_channels;
  const std::size_t c = tap % cin;
  const std::size_t dx = (tap / cin) % g.kernel_w;
  const std::size_t dy = tap / cin / g.kernel_w;
  acc.assign(cout, 0.0);
  for (std::size_t y = 0; y < g.height; ++y) {
    const std::ptrdiff_t sy = std::ptrdiff_t(y + dy) - std::ptrdiff_t(ph);
    if (sy < 0 || sy >= std::ptrdiff_t(g.height))
      continue;
    for (std::size_t xx = 0; xx < g.width; ++xx) {
      const std::ptrdiff_t sx = std::ptrdiff_t(xx + dx) - std::ptrdiff_t(pw);
      if (sx < 0 || sx >= std::ptrdiff_t(g.width))
        continue;
      const double v = x[(std::size_t(sy) * g.width + std::size_t(sx)) * cin + c];
      const double *go = grad_out + (y * g.width + xx) * cout;
      for (std::size_t co = 0; co < cout; ++co)
        acc[co] += v * go[co];
    }
  }
  double *gk = grad_k + tap * cout;
  for (std::size_t co = 0; co < cout; ++co)
    gk[co] += acc[co];
}

} // namespace

void gemm_serial(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 std::span<const double> a, std::span<const double> b, std::span<double> c,
                 bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_row(trans_a, trans_b, i, m, n, k, a.data(), b.data(), c.data(), accumulate);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  const bool par = m * n * k >= kParallelThreshold;
  const std::ptrdiff_t rows = std::ptrdiff_t(m);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_row(trans_a, trans_b, std::size_t(i), m, n, k, a.data(), b.data(), c.data(),
             accumulate);
}

void conv2d_serial(const ConvGeometry &g, std::span<const double> x, std::span<const double> k,
                   std::span<double> out) {
  for (std::size_t y = 0; y < g.height; ++y)
    conv_row(g, y, x.data(), k.data(), out.data());
}

void conv2d(const ConvGeometry &g, std::span<const double> x, std::span<const double> k,
            std::span<double> out) {
  const bool par = g.macs() >= kParallelThreshold;
  const std::ptrdiff_t rows = std::ptrdiff_t(g.height);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t y = 0; y < rows; ++y)
    conv_row(g, std::size_t(y), x.data(), k.data(), out.data());
}

void conv2d_grad_input_serial(const ConvGeometry &g, std::span<const double> grad_out,
                              std::span<const double> k, std::span<double> grad_x) {
  std::vector<double> acc;
  for (std::size_t y = 0; y < g.height; ++y)
    conv_grad_input_row(g, y, grad_out.data(), k.data(), grad_x.data(), acc);
}

void conv2d_grad_input(const ConvGeometry &g, std::span<const double> grad_out,
                       std::span<const double> k, std::span<double> grad_x) {
  const bool par = g.macs() >= kParallelThreshold;
  const std::ptrdiff_t rows = std::ptrdiff_t(g.height);
#pragma omp parallel if (par)
  {
    std::vector<double> acc;
#pragma omp for schedule(static)
    for (std::ptrdiff_t y = 0; y < rows; ++y)
      conv_grad_input_row(g, std::size_t(y), grad_out.data(), k.data(), grad_x.data(), acc);
  }
}

void conv2d_grad_kernel_serial(const ConvGeometry &g, std::span<const double> x,
                               std::span<const double> grad_out, std::span<double> grad_k) {
  std::vector<double> acc;
  const std::size_t taps = g.kernel_h * g.kernel_w * g.in_channels;
  for (std::size_t t = 0; t < taps; ++t)
    conv_grad_kernel_tap(g, t, x.data(), grad_out.data(), grad_k.data(), acc);
}

void conv2d_grad_kernel(const ConvGeometry &g, std::span<const double> x,
                        std::span<const double> grad_out, std::span<double> grad_k) {
  const bool par = g.macs() >= kParallelThreshold;
  const std::ptrdiff_t taps = std::ptrdiff_t(g.kernel_h * g.kernel_w * g.in_channels);
#pragma omp parallel if (par)
  {
    std::vector<double> acc;
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < taps; ++t)
      conv_grad_kernel_tap(g, std::size_t(t), x.data(), grad_out.data(), grad_k.data(), acc);
  }
}

} // namespace camvr::kernels
