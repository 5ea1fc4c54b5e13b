#pragma once

// Differentiable ops over tape values. Matrices are rank-2 [rows x cols];
// spatial grids are rank-3 [H x W x C]. The only broadcast is a 1 x D row
// repeated across N rows (add_rows / broadcast_rows).

#include "camvr/tape.hpp"

#include <cstddef>
#include <vector>

namespace camvr::ops {

Var matmul(const Var &a, const Var &b);    // [m x k] . [k x n]
Var matmul_nt(const Var &a, const Var &b); // [m x k] . [n x k]^T

Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var mul(const Var &a, const Var &b);
Var add_rows(const Var &x, const Var &row); // x[N x D] + row[1 x D] on every row
Var broadcast_rows(const Var &row, std::size_t n);
Var scale(const Var &x, double c);
Var affine(const Var &x, double a, double b); // a*x + b

Var sigmoid(const Var &x);
Var tanh(const Var &x);
Var softmax_rows(const Var &x);

Var concat_cols(const Var &a, const Var &b);
Var concat_rows(const std::vector<Var> &parts);
Var mean_rows(const Var &x); // [N x D] -> [1 x D]
Var sum(const Var &x);       // -> [1 x 1]
Var reshape(const Var &x, Shape shape);

// x[H x W x Cin], k[kh x kw x Cin x Cout] -> [H x W x Cout], zero same-padding.
Var conv2d(const Var &x, const Var &k);
Var avg_pool2d(const Var &x, std::size_t factor);
Var upsample_nearest(const Var &x, std::size_t factor);

Var scale_rows(const Var &x, const Var &s); // x[N x D] * s[N x 1]
Var gather_rows(const Var &table, const std::vector<std::size_t> &ids);

// -log softmax(logits)[target], logits [1 x V].
Var cross_entropy(const Var &logits, std::size_t target);

// Test hook: when enabled, sigmoid's backward is scaled by (1 + 1e-2) so the
// gradient checker has a known-bad path to catch.
void set_backward_fault(bool enabled);
bool backward_fault();

} // namespace camvr::ops
