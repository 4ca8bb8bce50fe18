#include "hmet/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

// AVX2 path. Compiled with -mavx2 for this translation unit only; selected at
// runtime after a cpuid check. Arithmetic mirrors the scalar path operation
// for operation (multiplies, single adds/subs, same reduction slot layout and
// combine order), hence bitwise identical results on finite inputs.

namespace hmet::kernels::detail {

namespace {

// [ar*xr - ai*xi, ar*xi + ai*xr] for two packed complex numbers
inline __m256d cmul_ps(__m256d vr, __m256d vi, __m256d xv) {
    __m256d t1 = _mm256_mul_pd(vr, xv);
    __m256d xs = _mm256_permute_pd(xv, 0x5);
    __m256d t2 = _mm256_mul_pd(vi, xs);
    return _mm256_addsub_pd(t1, t2);
}

} // namespace

void axpy_avx2(cplx a, const cplx* x, cplx* y, std::size_t n) {
    const double* xd = reinterpret_cast<const double*>(x);
    double* yd = reinterpret_cast<double*>(y);
    const __m256d vr = _mm256_set1_pd(a.real());
    const __m256d vi = _mm256_set1_pd(a.imag());
    const std::size_t n2 = n - n % 2;
    for (std::size_t i = 0; i < n2; i += 2) {
        __m256d xv = _mm256_loadu_pd(xd + 2 * i);
        __m256d yv = _mm256_loadu_pd(yd + 2 * i);
        _mm256_storeu_pd(yd + 2 * i, _mm256_add_pd(yv, cmul_ps(vr, vi, xv)));
    }
    const double ar = a.real(), ai = a.imag();
    for (std::size_t i = n2; i < n; ++i) {
        const double xr = xd[2 * i], xi = xd[2 * i + 1];
        yd[2 * i] += ar * xr - ai * xi;
        yd[2 * i + 1] += ar * xi + ai * xr;
    }
}

void xpby_avx2(const cplx* x, cplx b, const cplx* y, cplx* z, std::size_t n) {
    const double* xd = reinterpret_cast<const double*>(x);
    const double* yd = reinterpret_cast<const double*>(y);
    double* zd = reinterpret_cast<double*>(z);
    const __m256d vr = _mm256_set1_pd(b.real());
    const __m256d vi = _mm256_set1_pd(b.imag());
    const std::size_t n2 = n - n % 2;
    for (std::size_t i = 0; i < n2; i += 2) {
        __m256d yv = _mm256_loadu_pd(yd + 2 * i);
        __m256d xv = _mm256_loadu_pd(xd + 2 * i);
        _mm256_storeu_pd(zd + 2 * i, _mm256_add_pd(xv, cmul_ps(vr, vi, yv)));
    }
    const double br = b.real(), bi = b.imag();
    for (std::size_t i = n2; i < n; ++i) {
        const double yr = yd[2 * i], yi = yd[2 * i + 1];
        zd[2 * i] = xd[2 * i] + (br * yr - bi * yi);
        zd[2 * i + 1] = xd[2 * i + 1] + (br * yi + bi * yr);
    }
}

void scal_avx2(cplx a, cplx* x, std::size_t n) {
    double* xd = reinterpret_cast<double*>(x);
    const __m256d vr = _mm256_set1_pd(a.real());
    const __m256d vi = _mm256_set1_pd(a.imag());
    const std::size_t n2 = n - n % 2;
    for (std::size_t i = 0; i < n2; i += 2) {
        __m256d xv = _mm256_loadu_pd(xd + 2 * i);
        _mm256_storeu_pd(xd + 2 * i, cmul_ps(vr, vi, xv));
    }
    const double ar = a.real(), ai = a.imag();
    for (std::size_t i = n2; i < n; ++i) {
        const double xr = xd[2 * i], xi = xd[2 * i + 1];
        xd[2 * i] = ar * xr - ai * xi;
        xd[2 * i + 1] = ar * xi + ai * xr;
    }
}

cplx dot_avx2(const cplx* x, const cplx* y, std::size_t n) {
    const double* xd = reinterpret_cast<const double*>(x);
    const double* yd = reinterpret_cast<const double*>(y);
    const __m256d sign_i = _mm256_set_pd(-0.0, 0.0, -0.0, 0.0);
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    __m256d acc2 = _mm256_setzero_pd(), acc3 = _mm256_setzero_pd();
    const std::size_t n8 = n - n % 8;
    for (std::size_t i = 0; i < n8; i += 8) {
        for (int k = 0; k < 4; ++k) {
            __m256d xv = _mm256_loadu_pd(xd + 2 * i + 4 * k);
            __m256d yv = _mm256_loadu_pd(yd + 2 * i + 4 * k);
            __m256d t1 = _mm256_mul_pd(xv, yv);
            __m256d xn = _mm256_xor_pd(xv, sign_i);
            __m256d ys = _mm256_permute_pd(yv, 0x5);
            __m256d t2 = _mm256_mul_pd(xn, ys);
            __m256d p = _mm256_hadd_pd(t1, t2);
            switch (k) {
                case 0: acc0 = _mm256_add_pd(acc0, p); break;
                case 1: acc1 = _mm256_add_pd(acc1, p); break;
                case 2: acc2 = _mm256_add_pd(acc2, p); break;
                case 3: acc3 = _mm256_add_pd(acc3, p); break;
            }
        }
    }
    __m256d accA = _mm256_add_pd(acc0, acc1);
    __m256d accB = _mm256_add_pd(acc2, acc3);
    __m256d accC = _mm256_add_pd(accA, accB);
    __m128d lo = _mm256_castpd256_pd128(accC);
    __m128d hi = _mm256_extractf128_pd(accC, 1);
    __m128d tv = _mm_add_pd(lo, hi);
    alignas(16) double t[2];
    _mm_store_pd(t, tv);
    double tr = t[0], ti = t[1];
    for (std::size_t i = n8; i < n; ++i) {
        const double xr = xd[2 * i], xi = xd[2 * i + 1];
        const double yr = yd[2 * i], yi = yd[2 * i + 1];
        tr += xr * yr + xi * yi;
        ti += xr * yi - xi * yr;
    }
    return {tr, ti};
}

double norm2sq_avx2(const cplx* x, std::size_t n) {
    const double* xd = reinterpret_cast<const double*>(x);
    const std::size_t m = 2 * n;
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    __m256d acc2 = _mm256_setzero_pd(), acc3 = _mm256_setzero_pd();
    const std::size_t m16 = m - m % 16;
    for (std::size_t p = 0; p < m16; p += 16) {
        __m256d v0 = _mm256_loadu_pd(xd + p);
        __m256d v1 = _mm256_loadu_pd(xd + p + 4);
        __m256d v2 = _mm256_loadu_pd(xd + p + 8);
        __m256d v3 = _mm256_loadu_pd(xd + p + 12);
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(v0, v0));
        acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(v1, v1));
        acc2 = _mm256_add_pd(acc2, _mm256_mul_pd(v2, v2));
        acc3 = _mm256_add_pd(acc3, _mm256_mul_pd(v3, v3));
    }
    __m256d accA = _mm256_add_pd(acc0, acc1);
    __m256d accB = _mm256_add_pd(acc2, acc3);
    __m256d accC = _mm256_add_pd(accA, accB);
    __m128d lo = _mm256_castpd256_pd128(accC);
    __m128d hi = _mm256_extractf128_pd(accC, 1);
    __m128d s2 = _mm_add_pd(lo, hi);
    alignas(16) double t[2];
    _mm_store_pd(t, s2);
    double tot = t[0] + t[1];
    for (std::size_t p = m16; p < m; ++p) tot += xd[p] * xd[p];
    return tot;
}

void axpy_d_avx2(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d yv = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(yv, _mm256_mul_pd(va, xv)));
    }
    for (std::size_t i = n4; i < n; ++i) y[i] += a * x[i];
}

double dot_d_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    __m256d acc2 = _mm256_setzero_pd(), acc3 = _mm256_setzero_pd();
    const std::size_t n16 = n - n % 16;
    for (std::size_t p = 0; p < n16; p += 16) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p)));
        acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(x + p + 4), _mm256_loadu_pd(y + p + 4)));
        acc2 = _mm256_add_pd(acc2, _mm256_mul_pd(_mm256_loadu_pd(x + p + 8), _mm256_loadu_pd(y + p + 8)));
        acc3 = _mm256_add_pd(acc3, _mm256_mul_pd(_mm256_loadu_pd(x + p + 12), _mm256_loadu_pd(y + p + 12)));
    }
    __m256d accA = _mm256_add_pd(acc0, acc1);
    __m256d accB = _mm256_add_pd(acc2, acc3);
    __m256d accC = _mm256_add_pd(accA, accB);
    __m128d lo = _mm256_castpd256_pd128(accC);
    __m128d hi = _mm256_extractf128_pd(accC, 1);
    __m128d s2 = _mm_add_pd(lo, hi);
    alignas(16) double t[2];
    _mm_store_pd(t, s2);
    double tot = t[0] + t[1];
    for (std::size_t p = n16; p < n; ++p) tot += x[p] * y[p];
    return tot;
}

} // namespace hmet::kernels::detail

#endif
