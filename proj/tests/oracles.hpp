#pragma once

// Independent reference implementations. Plain loops over std::vector, no
// tape, no kernels: each one is written from the math, not from the library.

#include "camvr/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using camvr::Tensor;
using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor &t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c)
      m[r][c] = t.at(r, c);
  return m;
}

inline Tensor from_mat(const Mat &m) {
  Tensor t({m.size(), m[0].size()});
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < m[0].size(); ++c)
      t.at(r, c) = m[r][c];
  return t;
}

inline Mat matmul(const Mat &a, const Mat &b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < b.size(); ++p)
        s += a[i][p] * b[p][j];
      c[i][j] = s;
    }
  return c;
}

inline Mat transpose(const Mat &a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j)
      t[j][i] = a[i][j];
  return t;
}

inline Mat softmax_rows(Mat x) {
  for (auto &row : x) {
    double m = row[0];
    for (double v : row)
      m = std::max(m, v);
    double z = 0.0;
    for (double &v : row) {
      v = std::exp(v - m);
      z += v;
    }
    for (double &v : row)
      v /= z;
  }
  return x;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Same-padded correlation, x[H][W][Cin], k[kh][kw][Cin][Cout] flattened
// row-major, summed over (dy, dx, ci) ascending.
inline Tensor conv2d(const Tensor &x, const Tensor &k) {
  const long H = long(x.dim(0)), W = long(x.dim(1)), Ci = long(x.dim(2));
  const long kh = long(k.dim(0)), kw = long(k.dim(1)), Co = long(k.dim(3));
  Tensor y({std::size_t(H), std::size_t(W), std::size_t(Co)});
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j)
      for (long o = 0; o < Co; ++o) {
        double s = 0.0;
        for (long dy = 0; dy < kh; ++dy)
          for (long dx = 0; dx < kw; ++dx) {
            const long r = i + dy - kh / 2, c = j + dx - kw / 2;
            if (r < 0 || r >= H || c < 0 || c >= W)
              continue;
            for (long ci = 0; ci < Ci; ++ci)
              s += x[std::size_t((r * W + c) * Ci + ci)] *
                   k[std::size_t(((dy * kw + dx) * Ci + ci) * Co + o)];
          }
        y[std::size_t((i * W + j) * Co + o)] = s;
      }
  return y;
}

// alpha = softmax(T Wq (M Wk)^T / sqrt(Dm)), C = alpha M Wv.
struct Attention {
  Mat alpha, context;
};

inline Attention retrieve(const Mat &T, const Mat &M, const Mat &wq, const Mat &wk,
                          const Mat &wv) {
  const Mat q = matmul(T, wq), k = matmul(M, wk), v = matmul(M, wv);
  Mat logits = matmul(q, transpose(k));
  const double scale = 1.0 / std::sqrt(double(M[0].size()));
  for (auto &row : logits)
    for (auto &x : row)
      x *= scale;
  Attention a;
  a.alpha = softmax_rows(logits);
  a.context = matmul(a.alpha, v);
  return a;
}

// Per slot: z = [E ; M[k]], g = sigmoid(z Wg + bg), c = tanh(z Wm + bm),
// next = (1-g) M[k] + g c.
struct Gate {
  Mat gate, candidate, next;
};

inline Gate gated_update(const std::vector<double> &E, const Mat &M, const Mat &wg,
                         const std::vector<double> &bg, const Mat &wm,
                         const std::vector<double> &bm) {
  Gate out;
  for (const auto &slot : M) {
    std::vector<double> z = E;
    z.insert(z.end(), slot.begin(), slot.end());
    std::vector<double> g(slot.size()), c(slot.size()), n(slot.size());
    for (std::size_t j = 0; j < slot.size(); ++j) {
      double sg = 0.0, sm = 0.0;
      for (std::size_t p = 0; p < z.size(); ++p) {
        sg += z[p] * wg[p][j];
        sm += z[p] * wm[p][j];
      }
      g[j] = sigmoid(sg + bg[j]);
      c[j] = std::tanh(sm + bm[j]);
      n[j] = (1.0 - g[j]) * slot[j] + g[j] * c[j];
    }
    out.gate.push_back(g);
    out.candidate.push_back(c);
    out.next.push_back(n);
  }
  return out;
}

inline Tensor random(camvr::Shape shape, std::mt19937_64 &rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto &v : t.data())
    v = d(rng);
  return t;
}

} // namespace oracle
