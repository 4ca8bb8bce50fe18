#include "hmet/kernels.hpp"

namespace hmet::kernels {

namespace {

SimdMode g_mode = SimdMode::Auto;

bool use_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    if (g_mode == SimdMode::Scalar) return false;
    if (g_mode == SimdMode::Avx2) return true;
    return cpu_has_avx2();
#else
    return false;
#endif
}

} // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

void set_simd_mode(SimdMode m) { g_mode = m; }

std::string active_path() { return use_avx2() ? "avx2" : "scalar"; }

#if defined(__x86_64__) || defined(_M_X64)
#define HMET_DISPATCH(fn, ...) \
    return use_avx2() ? detail::fn##_avx2(__VA_ARGS__) : detail::fn##_scalar(__VA_ARGS__)
#else
#define HMET_DISPATCH(fn, ...) return detail::fn##_scalar(__VA_ARGS__)
#endif

void axpy(cplx a, const cplx* x, cplx* y, std::size_t n) { HMET_DISPATCH(axpy, a, x, y, n); }
void xpby(const cplx* x, cplx b, const cplx* y, cplx* z, std::size_t n) {
    HMET_DISPATCH(xpby, x, b, y, z, n);
}
void scal(cplx a, cplx* x, std::size_t n) { HMET_DISPATCH(scal, a, x, n); }
cplx dot(const cplx* x, const cplx* y, std::size_t n) { HMET_DISPATCH(dot, x, y, n); }
double norm2sq(const cplx* x, std::size_t n) { HMET_DISPATCH(norm2sq, x, n); }
void axpy_d(double a, const double* x, double* y, std::size_t n) { HMET_DISPATCH(axpy_d, a, x, y, n); }
double dot_d(const double* x, const double* y, std::size_t n) { HMET_DISPATCH(dot_d, x, y, n); }

#undef HMET_DISPATCH

} // namespace hmet::kernels
