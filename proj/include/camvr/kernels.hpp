#pragma once

// Dense inner loops used by the tape ops. Every kernel exists twice: a serial
// reference (`*_serial`) and an OpenMP version that partitions output rows
// across threads. Both accumulate each output element over the reduction index
// in ascending order, so the two are bit-identical for any thread count.

#include <cstddef>
#include <span>

namespace camvr::kernels {

// Work below this many multiply-adds stays on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

// C[m x n] (+)= op(A) * op(B), op(X) = X or X^T. A is m x k (k x m if
// trans_a), B is k x n (n x k if trans_b). Row-major, no aliasing.
void gemm_serial(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 std::span<const double> a, std::span<const double> b, std::span<double> c,
                 bool accumulate);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);

struct ConvGeometry {
  std::size_t height, width, in_channels, kernel_h, kernel_w, out_channels;
  std::size_t macs() const {
    return height * width * kernel_h * kernel_w * in_channels * out_channels;
  }
};

// Same-padded (zero) stride-1 correlation. x: H x W x Cin, k: kh x kw x Cin x
// Cout, out: H x W x Cout (overwritten).
void conv2d_serial(const ConvGeometry &g, std::span<const double> x, std::span<const double> k,
                   std::span<double> out);
void conv2d(const ConvGeometry &g, std::span<const double> x, std::span<const double> k,
            std::span<double> out);

// Accumulates dL/dx into grad_x.
void conv2d_grad_input_serial(const ConvGeometry &g, std::span<const double> grad_out,
                              std::span<const double> k, std::span<double> grad_x);
void conv2d_grad_input(const ConvGeometry &g, std::span<const double> grad_out,
                       std::span<const double> k, std::span<double> grad_x);

// Accumulates dL/dk into grad_k.
void conv2d_grad_kernel_serial(const ConvGeometry &g, std::span<const double> x,
                               std::span<const double> grad_out, std::span<double> grad_k);
void conv2d_grad_kernel(const ConvGeometry &g, std::span<const double> x,
                        std::span<const double> grad_out, std::span<double> grad_k);

} // namespace camvr::kernels
