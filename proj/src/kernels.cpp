#include "hashlat/core/kernels.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>

#include "hashlat/core/errors.hpp"

namespace hashlat::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Below this many output cells the OpenMP fork costs more than it saves.
constexpr int64_t kParallelThreshold = 4096;
}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
            ci[j] = acc;
        }
    }
}

namespace detail {

inline void im2col_row(const double* img, int64_t channels, int64_t height, int64_t width,
                       int64_t ksize, int64_t pad, int64_t oh, int64_t ow, double* row) {
    int64_t idx = 0;
    for (int64_t ch = 0; ch < channels; ++ch) {
        const double* plane = img + ch * height * width;
        for (int64_t kh = 0; kh < ksize; ++kh) {
            int64_t ih = oh + kh - pad;
            for (int64_t kw = 0; kw < ksize; ++kw, ++idx) {
                int64_t iw = ow + kw - pad;
                row[idx] = (ih >= 0 && ih < height && iw >= 0 && iw < width)
                               ? plane[ih * width + iw]
                               : 0.0;
            }
        }
    }
}

inline void avgpool2_cell(const double* in, int64_t height, int64_t width, int64_t ch,
                          int64_t oh, int64_t ow, double* out, int64_t oh_dim, int64_t ow_dim) {
    const double* plane = in + ch * height * width;
    int64_t h0 = oh * 2, w0 = ow * 2;
    double s = plane[h0 * width + w0] + plane[h0 * width + w0 + 1] +
               plane[(h0 + 1) * width + w0] + plane[(h0 + 1) * width + w0 + 1];
    out[(ch * oh_dim + oh) * ow_dim + ow] = 0.25 * s;
}

}  // namespace detail

void im2col(const double* img, int64_t channels, int64_t height, int64_t width, int64_t ksize,
            int64_t pad, double* col) {
    const int64_t row_len = channels * ksize * ksize;
    for (int64_t oh = 0; oh < height; ++oh)
        for (int64_t ow = 0; ow < width; ++ow)
            detail::im2col_row(img, channels, height, width, ksize, pad, oh, ow,
                               col + (oh * width + ow) * row_len);
}

void col2im(const double* col, int64_t channels, int64_t height, int64_t width, int64_t ksize,
            int64_t pad, double* img) {
    const int64_t row_len = channels * ksize * ksize;
    for (int64_t oh = 0; oh < height; ++oh) {
        for (int64_t ow = 0; ow < width; ++ow) {
            const double* row = col + (oh * width + ow) * row_len;
            int64_t idx = 0;
            for (int64_t ch = 0; ch < channels; ++ch) {
                double* plane = img + ch * height * width;
                for (int64_t kh = 0; kh < ksize; ++kh) {
                    int64_t ih = oh + kh - pad;
                    for (int64_t kw = 0; kw < ksize; ++kw, ++idx) {
                        int64_t iw = ow + kw - pad;
                        if (ih >= 0 && ih < height && iw >= 0 && iw < width)
                            plane[ih * width + iw] += row[idx];
                    }
                }
            }
        }
    }
}

void avgpool2(const double* in, int64_t channels, int64_t height, int64_t width, double* out) {
    const int64_t oh_dim = height / 2, ow_dim = width / 2;
    for (int64_t ch = 0; ch < channels; ++ch)
        for (int64_t oh = 0; oh < oh_dim; ++oh)
            for (int64_t ow = 0; ow < ow_dim; ++ow)
                detail::avgpool2_cell(in, height, width, ch, oh, ow, out, oh_dim, ow_dim);
}

void avgpool2_backward(const double* dout, int64_t channels, int64_t height, int64_t width,
                       double* din) {
    const int64_t oh_dim = height / 2, ow_dim = width / 2;
    for (int64_t ch = 0; ch < channels; ++ch) {
        double* plane = din + ch * height * width;
        const double* dplane = dout + ch * oh_dim * ow_dim;
        for (int64_t oh = 0; oh < oh_dim; ++oh) {
            for (int64_t ow = 0; ow < ow_dim; ++ow) {
                double g = 0.25 * dplane[oh * ow_dim + ow];
                int64_t h0 = oh * 2, w0 = ow * 2;
                plane[h0 * width + w0] += g;
                plane[h0 * width + w0 + 1] += g;
                plane[(h0 + 1) * width + w0] += g;
                plane[(h0 + 1) * width + w0 + 1] += g;
            }
        }
    }
}

void hamming_scan(const uint64_t* db, int64_t n, int64_t words, const uint64_t* query,
                  int32_t* out) {
    for (int64_t i = 0; i < n; ++i) {
        const uint64_t* code = db + i * words;
        int32_t d = 0;
        for (int64_t w = 0; w < words; ++w) d += std::popcount(code[w] ^ query[w]);
        out[i] = d;
    }
}

}  // namespace serial

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    if (!parallel_enabled() || m * n < kParallelThreshold) {
        serial::matmul_nn(a, b, c, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    if (!parallel_enabled() || m * n < kParallelThreshold) {
        serial::matmul_nt(a, b, c, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    if (!parallel_enabled() || m * n < kParallelThreshold) {
        serial::matmul_tn(a, b, c, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
            ci[j] = acc;
        }
    }
}

void im2col(const double* img, int64_t channels, int64_t height, int64_t width, int64_t ksize,
            int64_t pad, double* col) {
    const int64_t row_len = channels * ksize * ksize;
    const int64_t cells = height * width;
    if (!parallel_enabled() || cells * row_len < kParallelThreshold) {
        serial::im2col(img, channels, height, width, ksize, pad, col);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t cell = 0; cell < cells; ++cell)
        serial::detail::im2col_row(img, channels, height, width, ksize, pad, cell / width,
                                   cell % width, col + cell * row_len);
}

void col2im(const double* col, int64_t channels, int64_t height, int64_t width, int64_t ksize,
            int64_t pad, double* img) {
    // Output cells overlap across col rows; scatter stays serial so the
    // accumulation order is fixed.
    serial::col2im(col, channels, height, width, ksize, pad, img);
}

void avgpool2(const double* in, int64_t channels, int64_t height, int64_t width, double* out) {
    const int64_t oh_dim = height / 2, ow_dim = width / 2;
    const int64_t cells = channels * oh_dim * ow_dim;
    if (!parallel_enabled() || cells < kParallelThreshold) {
        serial::avgpool2(in, channels, height, width, out);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t cell = 0; cell < cells; ++cell) {
        int64_t ch = cell / (oh_dim * ow_dim);
        int64_t rem = cell % (oh_dim * ow_dim);
        serial::detail::avgpool2_cell(in, height, width, ch, rem / ow_dim, rem % ow_dim, out,
                                      oh_dim, ow_dim);
    }
}

void avgpool2_backward(const double* dout, int64_t channels, int64_t height, int64_t width,
                       double* din) {
    // Each input cell receives exactly one contribution, but the write
    // pattern is scatter-shaped; cheap enough to keep serial.
    serial::avgpool2_backward(dout, channels, height, width, din);
}

void hamming_scan(const uint64_t* db, int64_t n, int64_t words, const uint64_t* query,
                  int32_t* out) {
    if (!parallel_enabled() || n < kParallelThreshold) {
        serial::hamming_scan(db, n, words, query, out);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const uint64_t* code = db + i * words;
        int32_t d = 0;
        for (int64_t w = 0; w < words; ++w) d += std::popcount(code[w] ^ query[w]);
        out[i] = d;
    }
}

void jacobi_eigh(std::vector<double>& a, int64_t n, std::vector<double>& eigenvalues,
                 std::vector<double>& eigenvectors) {
    if (static_cast<int64_t>(a.size()) != n * n)
        throw DimensionError("jacobi_eigh: matrix size mismatch");
    eigenvectors.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) eigenvectors[i * n + i] = 1.0;

    auto off_norm = [&]() {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
        return s;
    };

    double diag_scale = 0.0;
    for (int64_t i = 0; i < n; ++i) diag_scale += std::abs(a[i * n + i]);
    diag_scale = std::max(diag_scale / static_cast<double>(n), 1e-300);
    const double tol = 1e-14 * diag_scale * diag_scale * static_cast<double>(n);

    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps && off_norm() > tol; ++sweep) {
        for (int64_t p = 0; p < n - 1; ++p) {
            for (int64_t q = p + 1; q < n; ++q) {
                double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                double app = a[p * n + p], aqq = a[q * n + q];
                double theta = 0.5 * (aqq - app) / apq;
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double cs = 1.0 / std::sqrt(t * t + 1.0);
                double sn = t * cs;
                for (int64_t i = 0; i < n; ++i) {
                    double aip = a[i * n + p], aiq = a[i * n + q];
                    a[i * n + p] = cs * aip - sn * aiq;
                    a[i * n + q] = sn * aip + cs * aiq;
                }
                for (int64_t i = 0; i < n; ++i) {
                    double api = a[p * n + i], aqi = a[q * n + i];
                    a[p * n + i] = cs * api - sn * aqi;
                    a[q * n + i] = sn * api + cs * aqi;
                }
                for (int64_t i = 0; i < n; ++i) {
                    double vip = eigenvectors[i * n + p], viq = eigenvectors[i * n + q];
                    eigenvectors[i * n + p] = cs * vip - sn * viq;
                    eigenvectors[i * n + q] = sn * vip + cs * viq;
                }
            }
        }
    }

    eigenvalues.resize(static_cast<size_t>(n));
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        eigenvalues[i] = a[i * n + i];
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return eigenvalues[x] > eigenvalues[y];
    });
    std::vector<double> ev_sorted(static_cast<size_t>(n));
    std::vector<double> vec_sorted(static_cast<size_t>(n * n));
    for (int64_t j = 0; j < n; ++j) {
        ev_sorted[j] = eigenvalues[order[j]];
        for (int64_t i = 0; i < n; ++i) vec_sorted[i * n + j] = eigenvectors[i * n + order[j]];
    }
    eigenvalues = std::move(ev_sorted);
    eigenvectors = std::move(vec_sorted);
}

void solve_spd(std::vector<double> a, int64_t n, const std::vector<double>& b, int64_t m,
               std::vector<double>& x, double ridge) {
    if (static_cast<int64_t>(a.size()) != n * n || static_cast<int64_t>(b.size()) != n * m)
        throw DimensionError("solve_spd: size mismatch");
    for (int64_t i = 0; i < n; ++i) a[i * n + i] += ridge;

    // In-place lower Cholesky.
    for (int64_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (int64_t p = 0; p < j; ++p) d -= a[j * n + p] * a[j * n + p];
        if (d <= 0.0) throw InvalidValueError("solve_spd: matrix not positive definite");
        d = std::sqrt(d);
        a[j * n + j] = d;
        for (int64_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (int64_t p = 0; p < j; ++p) s -= a[i * n + p] * a[j * n + p];
            a[i * n + j] = s / d;
        }
    }

    x = b;
    // Forward then backward substitution per right-hand side column.
    for (int64_t col = 0; col < m; ++col) {
        for (int64_t i = 0; i < n; ++i) {
            double s = x[i * m + col];
            for (int64_t p = 0; p < i; ++p) s -= a[i * n + p] * x[p * m + col];
            x[i * m + col] = s / a[i * n + i];
        }
        for (int64_t i = n - 1; i >= 0; --i) {
            double s = x[i * m + col];
            for (int64_t p = i + 1; p < n; ++p) s -= a[p * n + i] * x[p * m + col];
            x[i * m + col] = s / a[i * n + i];
        }
    }
}

}  // namespace hashlat::kernels
