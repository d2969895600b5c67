#include "hetsurv/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstddef>

namespace hetsurv::kernels {

namespace {

// One output row / cell per iteration keeps each result element fully
// computed by a single thread, which is what makes par == serial bitwise.
constexpr std::int64_t kMatmulParallelMin = 1 << 16;
constexpr std::int64_t kConvParallelMin = 1 << 14;
constexpr std::int64_t kLayerNormParallelMin = 1 << 15;

inline std::size_t idx2(int i, int j, int cols) {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j);
}

inline double conv_cell(const double* x, const std::uint8_t* visible, const double* kernel,
                        const double* bias, int h, int w, int cin, int cout, int i, int j, int oc) {
    double acc = bias ? bias[oc] : 0.0;
    for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
            const int ni = i + di, nj = j + dj;
            if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
            const std::size_t q = idx2(ni, nj, w);
            if (!visible[q]) continue;
            const double* kw = kernel + ((static_cast<std::size_t>(di + 1) * 3 + static_cast<std::size_t>(dj + 1)) *
                                         static_cast<std::size_t>(cin)) * static_cast<std::size_t>(cout);
            const double* xv = x + q * static_cast<std::size_t>(cin);
            for (int ic = 0; ic < cin; ++ic) {
                acc += xv[ic] * kw[static_cast<std::size_t>(ic) * static_cast<std::size_t>(cout) + oc];
            }
        }
    }
    return acc;
}

inline double conv_grad_cell(const double* gy, const std::uint8_t* visible, const double* kernel,
                             int h, int w, int cin, int cout, int i, int j, int ic) {
    // Gather formulation: input cell (i,j) contributes to visible outputs at
    // (i-di, j-dj) via kernel tap (di,dj).
    double acc = 0.0;
    for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
            const int oi = i - di, oj = j - dj;
            if (oi < 0 || oi >= h || oj < 0 || oj >= w) continue;
            const std::size_t p = idx2(oi, oj, w);
            if (!visible[p]) continue;
            const double* kw = kernel + ((static_cast<std::size_t>(di + 1) * 3 + static_cast<std::size_t>(dj + 1)) *
                                         static_cast<std::size_t>(cin) + static_cast<std::size_t>(ic)) *
                                        static_cast<std::size_t>(cout);
            const double* gv = gy + p * static_cast<std::size_t>(cout);
            for (int oc = 0; oc < cout; ++oc) acc += gv[oc] * kw[oc];
        }
    }
    return acc;
}

inline double dwconv_cell(const double* x, const std::uint8_t* visible, const double* kernel,
                          const double* bias, int h, int w, int c, int i, int j, int ch) {
    double acc = bias ? bias[ch] : 0.0;
    for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
            const int ni = i + di, nj = j + dj;
            if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
            const std::size_t q = idx2(ni, nj, w);
            if (!visible[q]) continue;
            acc += x[q * static_cast<std::size_t>(c) + ch] *
                   kernel[(static_cast<std::size_t>(di + 1) * 3 + static_cast<std::size_t>(dj + 1)) *
                              static_cast<std::size_t>(c) + ch];
        }
    }
    return acc;
}

inline double dwconv_grad_cell(const double* gy, const std::uint8_t* visible, const double* kernel,
                               int h, int w, int c, int i, int j, int ch) {
    double acc = 0.0;
    for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
            const int oi = i - di, oj = j - dj;
            if (oi < 0 || oi >= h || oj < 0 || oj >= w) continue;
            const std::size_t p = idx2(oi, oj, w);
            if (!visible[p]) continue;
            acc += gy[p * static_cast<std::size_t>(c) + ch] *
                   kernel[(static_cast<std::size_t>(di + 1) * 3 + static_cast<std::size_t>(dj + 1)) *
                              static_cast<std::size_t>(c) + ch];
        }
    }
    return acc;
}

inline void layer_norm_row(const double* xr, const double* gamma, const double* beta, double* yr,
                           double* inv_sigma_r, int cols, double eps) {
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xr[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double d = xr[j] - mean;
        var += d * d;
    }
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    *inv_sigma_r = inv;
    for (int j = 0; j < cols; ++j) yr[j] = gamma[j] * ((xr[j] - mean) * inv) + beta[j];
}

std::atomic<bool> g_parallel{true};

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        for (int j = 0; j < n; ++j) cr[j] = 0.0;
        for (int p = 0; p < k; ++p) {
            const double av = a[idx2(i, p, k)];
            const double* br = b + idx2(p, 0, n);
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        for (int p = 0; p < k; ++p) {
            const double av = a[idx2(i, p, k)];
            const double* br = b + idx2(p, 0, n);
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        for (int p = 0; p < k; ++p) {
            const double av = a[idx2(p, i, m)];
            const double* br = b + idx2(p, 0, n);
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        const double* ar = a + idx2(i, 0, k);
        for (int j = 0; j < n; ++j) {
            const double* br = b + idx2(j, 0, k);
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] += acc;
        }
    }
}

void layer_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* inv_sigma, int rows, int cols, double eps) {
    for (int r = 0; r < rows; ++r) {
        layer_norm_row(x + idx2(r, 0, cols), gamma, beta, y + idx2(r, 0, cols), inv_sigma + r, cols, eps);
    }
}

void conv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
             const double* bias, double* y, int h, int w, int cin, int cout) {
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const std::size_t p = idx2(i, j, w);
            double* yr = y + p * static_cast<std::size_t>(cout);
            if (!visible[p]) {
                for (int oc = 0; oc < cout; ++oc) yr[oc] = 0.0;
                continue;
            }
            for (int oc = 0; oc < cout; ++oc) {
                yr[oc] = conv_cell(x, visible, kernel, bias, h, w, cin, cout, i, j, oc);
            }
        }
    }
}

void conv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                    double* gx, int h, int w, int cin, int cout) {
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const std::size_t q = idx2(i, j, w);
            double* gr = gx + q * static_cast<std::size_t>(cin);
            if (!visible[q]) continue;  // masked inputs are never read
            for (int ic = 0; ic < cin; ++ic) {
                gr[ic] += conv_grad_cell(gy, visible, kernel, h, w, cin, cout, i, j, ic);
            }
        }
    }
}

void dwconv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
               const double* bias, double* y, int h, int w, int c) {
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const std::size_t p = idx2(i, j, w);
            double* yr = y + p * static_cast<std::size_t>(c);
            if (!visible[p]) {
                for (int ch = 0; ch < c; ++ch) yr[ch] = 0.0;
                continue;
            }
            for (int ch = 0; ch < c; ++ch) {
                yr[ch] = dwconv_cell(x, visible, kernel, bias, h, w, c, i, j, ch);
            }
        }
    }
}

void dwconv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                      double* gx, int h, int w, int c) {
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const std::size_t q = idx2(i, j, w);
            if (!visible[q]) continue;
            double* gr = gx + q * static_cast<std::size_t>(c);
            for (int ch = 0; ch < c; ++ch) {
                gr[ch] += dwconv_grad_cell(gy, visible, kernel, h, w, c, i, j, ch);
            }
        }
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP versions. Same element-level arithmetic as the serial reference.
// ---------------------------------------------------------------------------

namespace par {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        for (int j = 0; j < n; ++j) cr[j] = 0.0;
        for (int p = 0; p < k; ++p) {
            const double av = a[idx2(i, p, k)];
            const double* br = b + idx2(p, 0, n);
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        for (int p = 0; p < k; ++p) {
            const double av = a[idx2(i, p, k)];
            const double* br = b + idx2(p, 0, n);
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        for (int p = 0; p < k; ++p) {
            const double av = a[idx2(p, i, m)];
            const double* br = b + idx2(p, 0, n);
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* cr = c + idx2(i, 0, n);
        const double* ar = a + idx2(i, 0, k);
        for (int j = 0; j < n; ++j) {
            const double* br = b + idx2(j, 0, k);
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] += acc;
        }
    }
}

void layer_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* inv_sigma, int rows, int cols, double eps) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        layer_norm_row(x + idx2(r, 0, cols), gamma, beta, y + idx2(r, 0, cols), inv_sigma + r, cols, eps);
    }
}

void conv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
             const double* bias, double* y, int h, int w, int cin, int cout) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < h * w; ++p) {
        const int i = p / w, j = p % w;
        double* yr = y + static_cast<std::size_t>(p) * static_cast<std::size_t>(cout);
        if (!visible[p]) {
            for (int oc = 0; oc < cout; ++oc) yr[oc] = 0.0;
            continue;
        }
        for (int oc = 0; oc < cout; ++oc) {
            yr[oc] = conv_cell(x, visible, kernel, bias, h, w, cin, cout, i, j, oc);
        }
    }
}

void conv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                    double* gx, int h, int w, int cin, int cout) {
#pragma omp parallel for schedule(static)
    for (int q = 0; q < h * w; ++q) {
        if (!visible[q]) continue;
        const int i = q / w, j = q % w;
        double* gr = gx + static_cast<std::size_t>(q) * static_cast<std::size_t>(cin);
        for (int ic = 0; ic < cin; ++ic) {
            gr[ic] += conv_grad_cell(gy, visible, kernel, h, w, cin, cout, i, j, ic);
        }
    }
}

void dwconv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
               const double* bias, double* y, int h, int w, int c) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < h * w; ++p) {
        const int i = p / w, j = p % w;
        double* yr = y + static_cast<std::size_t>(p) * static_cast<std::size_t>(c);
        if (!visible[p]) {
            for (int ch = 0; ch < c; ++ch) yr[ch] = 0.0;
            continue;
        }
        for (int ch = 0; ch < c; ++ch) {
            yr[ch] = dwconv_cell(x, visible, kernel, bias, h, w, c, i, j, ch);
        }
    }
}

void dwconv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                      double* gx, int h, int w, int c) {
#pragma omp parallel for schedule(static)
    for (int q = 0; q < h * w; ++q) {
        if (!visible[q]) continue;
        const int i = q / w, j = q % w;
        double* gr = gx + static_cast<std::size_t>(q) * static_cast<std::size_t>(c);
        for (int ch = 0; ch < c; ++ch) {
            gr[ch] += dwconv_grad_cell(gy, visible, kernel, h, w, c, i, j, ch);
        }
    }
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatch.
// ---------------------------------------------------------------------------

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

namespace {

inline bool use_par(std::int64_t work, std::int64_t min_work) {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed) && work >= min_work;
#else
    (void)work;
    (void)min_work;
    return false;
#endif
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    if (use_par(static_cast<std::int64_t>(m) * k * n, kMatmulParallelMin))
        par::matmul(a, b, c, m, k, n);
    else
        serial::matmul(a, b, c, m, k, n);
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    if (use_par(static_cast<std::int64_t>(m) * k * n, kMatmulParallelMin))
        par::matmul_acc(a, b, c, m, k, n);
    else
        serial::matmul_acc(a, b, c, m, k, n);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    if (use_par(static_cast<std::int64_t>(m) * k * n, kMatmulParallelMin))
        par::matmul_tn_acc(a, b, c, m, k, n);
    else
        serial::matmul_tn_acc(a, b, c, m, k, n);
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    if (use_par(static_cast<std::int64_t>(m) * k * n, kMatmulParallelMin))
        par::matmul_nt_acc(a, b, c, m, k, n);
    else
        serial::matmul_nt_acc(a, b, c, m, k, n);
}

void layer_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* inv_sigma, int rows, int cols, double eps) {
    if (use_par(static_cast<std::int64_t>(rows) * cols, kLayerNormParallelMin))
        par::layer_norm(x, gamma, beta, y, inv_sigma, rows, cols, eps);
    else
        serial::layer_norm(x, gamma, beta, y, inv_sigma, rows, cols, eps);
}

void conv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
             const double* bias, double* y, int h, int w, int cin, int cout) {
    if (use_par(static_cast<std::int64_t>(h) * w * cin * cout * 9, kConvParallelMin))
        par::conv3x3(x, visible, kernel, bias, y, h, w, cin, cout);
    else
        serial::conv3x3(x, visible, kernel, bias, y, h, w, cin, cout);
}

void conv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                    double* gx, int h, int w, int cin, int cout) {
    if (use_par(static_cast<std::int64_t>(h) * w * cin * cout * 9, kConvParallelMin))
        par::conv3x3_grad_x(gy, visible, kernel, gx, h, w, cin, cout);
    else
        serial::conv3x3_grad_x(gy, visible, kernel, gx, h, w, cin, cout);
}

void dwconv3x3(const double* x, const std::uint8_t* visible, const double* kernel,
               const double* bias, double* y, int h, int w, int c) {
    if (use_par(static_cast<std::int64_t>(h) * w * c * 9, kConvParallelMin))
        par::dwconv3x3(x, visible, kernel, bias, y, h, w, c);
    else
        serial::dwconv3x3(x, visible, kernel, bias, y, h, w, c);
}

void dwconv3x3_grad_x(const double* gy, const std::uint8_t* visible, const double* kernel,
                      double* gx, int h, int w, int c) {
    if (use_par(static_cast<std::int64_t>(h) * w * c * 9, kConvParallelMin))
        par::dwconv3x3_grad_x(gy, visible, kernel, gx, h, w, c);
    else
        serial::dwconv3x3_grad_x(gy, visible, kernel, gx, h, w, c);
}

}  // namespace hetsurv::kernels
