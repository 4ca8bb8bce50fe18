#pragma once

#include <complex>
#include <cstddef>
#include <string>

// Flat-array kernels used by the field algebra and the Krylov solvers.
// Each kernel has a scalar reference implementation and an AVX2 variant;
// the active path is chosen at runtime (see simd_mode / set_simd_mode).
// Both paths evaluate the same arithmetic DAG, including the blocked
// pairwise reduction tree, so results are bitwise identical across paths.

namespace hmet::kernels {

using cplx = std::complex<double>;

enum class SimdMode { Auto, Scalar, Avx2 };

// Returns the path actually in use ("scalar" or "avx2").
std::string active_path();
void set_simd_mode(SimdMode m);
bool cpu_has_avx2();

// y[i] += a * x[i]
void axpy(cplx a, const cplx* x, cplx* y, std::size_t n);
// z[i] = x[i] + b * y[i]
void xpby(const cplx* x, cplx b, const cplx* y, cplx* z, std::size_t n);
// x[i] *= a
void scal(cplx a, cplx* x, std::size_t n);
// sum_i conj(x[i]) * y[i], fixed 4-accumulator blocked tree
cplx dot(const cplx* x, const cplx* y, std::size_t n);
// sum_i |x[i]|^2 (real), same reduction shape as dot
double norm2sq(const cplx* x, std::size_t n);

// Real-array variants (scalar Poisson solver).
void axpy_d(double a, const double* x, double* y, std::size_t n);
double dot_d(const double* x, const double* y, std::size_t n);

namespace detail {
// Reference implementations, exposed for equivalence tests.
void axpy_scalar(cplx a, const cplx* x, cplx* y, std::size_t n);
void xpby_scalar(const cplx* x, cplx b, const cplx* y, cplx* z, std::size_t n);
void scal_scalar(cplx a, cplx* x, std::size_t n);
cplx dot_scalar(const cplx* x, const cplx* y, std::size_t n);
double norm2sq_scalar(const cplx* x, std::size_t n);
void axpy_d_scalar(double a, const double* x, double* y, std::size_t n);
double dot_d_scalar(const double* x, const double* y, std::size_t n);

#if defined(__x86_64__) || defined(_M_X64)
void axpy_avx2(cplx a, const cplx* x, cplx* y, std::size_t n);
void xpby_avx2(const cplx* x, cplx b, const cplx* y, cplx* z, std::size_t n);
void scal_avx2(cplx a, cplx* x, std::size_t n);
cplx dot_avx2(const cplx* x, const cplx* y, std::size_t n);
double norm2sq_avx2(const cplx* x, std::size_t n);
void axpy_d_avx2(double a, const double* x, double* y, std::size_t n);
double dot_d_avx2(const double* x, const double* y, std::size_t n);
#endif
} // namespace detail

} // namespace hmet::kernels
