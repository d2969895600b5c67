#pragma once

#include <cstdint>

namespace hetsurv::kernels {

// Data-parallel inner loops behind the tensor ops. Every kernel exists twice:
// a serial reference under kernels::serial and an OpenMP version under
// kernels::par. The dispatch functions below pick the parallel version when
// it is compiled in and the problem is large enough to amortize the fork.
//
// Parallel kernels partition work over independent output elements with a
// static schedule and never reduce floating-point values across threads, so
// serial and parallel results are bit-identical; tests assert exact equality
// and the bench target compares their throughput.

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] += a[m x k] * b[k x n]
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] += a^T * b with a stored [k x m], b [k x n]
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] += a * b^T with a [m x k], b [n x k]
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);

// Row-wise layer normalization: rows x cols input, per-row mean/population
// variance, then affine by gamma/beta. inv_sigma[r] is written for backward.
void layer_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* inv_sigma, int rows, int cols, double eps);

// Submanifold 3x3 convolution on an h x w grid with cin->cout channels.
// Output is produced only at cells with visible[p] != 0, reading only visible
// in-bounds neighbors; all other output cells stay zero. kernel layout is
// [3][3][cin][cout].
void conv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
             const double* bias, double* y, int h, int w, int cin, int cout);
// Gradient w.r.t. x under the same visibility rule (gathered per input cell).
void conv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                    double* gx, int h, int w, int cin, int cout);

// Depthwise variant: kernel [3][3][c], channel i convolved independently.
void dwconv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
               const double* bias, double* y, int h, int w, int c);
void dwconv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                      double* gx, int h, int w, int c);

}  // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
void layer_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* inv_sigma, int rows, int cols, double eps);
void conv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
             const double* bias, double* y, int h, int w, int cin, int cout);
void conv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                    double* gx, int h, int w, int cin, int cout);
void dwconv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
               const double* bias, double* y, int h, int w, int c);
void dwconv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                      double* gx, int h, int w, int c);

}  // namespace par

// Runtime switch, mainly for the benchmark; defaults to true.
bool parallel_enabled();
void set_parallel(bool on);

// Dispatchers used by the ops layer.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
void layer_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* inv_sigma, int rows, int cols, double eps);
void conv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
             const double* bias, double* y, int h, int w, int cin, int cout);
void conv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                    double* gx, int h, int w, int cin, int cout);
void dwconv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
               const double* bias, double* y, int h, int w, int c);
void dwconv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                      double* gx, int h, int w, int c);

}  // namespace hetsurv::kernels
