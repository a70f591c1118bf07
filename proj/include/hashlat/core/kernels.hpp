#pragma once

#include <cstdint>
#include <vector>

namespace hashlat::kernels {

// Global switch for the OpenMP paths. Every parallel kernel writes only
// independent outputs (reductions stay serial, in fixed order), so flipping
// this never changes results: serial and parallel are bitwise identical.
void set_parallel(bool enabled);
bool parallel_enabled();

// Plain-loop reference implementations. Kept for testing and benchmarking;
// tests assert bitwise equality against the dispatching kernels below.
namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

void im2col(const double* img, int64_t channels, int64_t height, int64_t width,
            int64_t ksize, int64_t pad, double* col);
void col2im(const double* col, int64_t channels, int64_t height, int64_t width,
            int64_t ksize, int64_t pad, double* img);

void avgpool2(const double* in, int64_t channels, int64_t height, int64_t width, double* out);
void avgpool2_backward(const double* dout, int64_t channels, int64_t height, int64_t width,
                       double* din);

void hamming_scan(const uint64_t* db, int64_t n, int64_t words, const uint64_t* query,
                  int32_t* out);

}  // namespace serial

// Dispatching kernels: OpenMP over independent output cells when the parallel
// switch is on and the problem is big enough, the serial reference otherwise.

// c (m x n) = a (m x k) * b (k x n)
void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
// c (m x n) = a (m x k) * b^T, b stored (n x k)
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
// c (m x n) = a^T * b, a stored (k x m), b stored (k x n)
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// 3x3-style patch extraction for stride-1 convolution. col is
// (height*width) x (channels*ksize*ksize), row-major.
void im2col(const double* img, int64_t channels, int64_t height, int64_t width,
            int64_t ksize, int64_t pad, double* col);
// Adjoint of im2col; img must be zeroed by the caller.
void col2im(const double* col, int64_t channels, int64_t height, int64_t width,
            int64_t ksize, int64_t pad, double* img);

// 2x2 average pooling, stride 2; height/width are the input dims (even).
void avgpool2(const double* in, int64_t channels, int64_t height, int64_t width, double* out);
void avgpool2_backward(const double* dout, int64_t channels, int64_t height, int64_t width,
                       double* din);

// Popcount Hamming scan over bit-packed codes: out[i] = popcount(db_i XOR query).
void hamming_scan(const uint64_t* db, int64_t n, int64_t words, const uint64_t* query,
                  int32_t* out);

// Symmetric eigendecomposition (cyclic Jacobi). a is n x n row-major and is
// destroyed. Eigenvalues returned descending, eigenvectors as matrix columns.
void jacobi_eigh(std::vector<double>& a, int64_t n, std::vector<double>& eigenvalues,
                 std::vector<double>& eigenvectors);

// Solves (a + ridge*I) x = b for SPD a (n x n) via Cholesky; b may hold many
// right-hand sides as columns (n x m). Throws InvalidValueError if not SPD.
void solve_spd(std::vector<double> a, int64_t n, const std::vector<double>& b, int64_t m,
               std::vector<double>& x, double ridge = 0.0);

}  // namespace hashlat::kernels
