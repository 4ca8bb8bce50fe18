#include "hmet/kernels.hpp"

// Reference path. The reduction kernels accumulate into the same fixed slot
// layout the AVX2 path uses (8 complex slots for dot, 16 double slots for
// norm2sq/dot_d) and combine them in the same order, so both paths produce
// bitwise identical results for every input.

namespace hmet::kernels::detail {

void axpy_scalar(cplx a, const cplx* x, cplx* y, std::size_t n) {
    const double ar = a.real(), ai = a.imag();
    const double* xd = reinterpret_cast<const double*>(x);
    double* yd = reinterpret_cast<double*>(y);
    for (std::size_t i = 0; i < n; ++i) {
        const double xr = xd[2 * i], xi = xd[2 * i + 1];
        yd[2 * i] += ar * xr - ai * xi;
        yd[2 * i + 1] += ar * xi + ai * xr;
    }
}

void xpby_scalar(const cplx* x, cplx b, const cplx* y, cplx* z, std::size_t n) {
    const double br = b.real(), bi = b.imag();
    const double* xd = reinterpret_cast<const double*>(x);
    const double* yd = reinterpret_cast<const double*>(y);
    double* zd = reinterpret_cast<double*>(z);
    for (std::size_t i = 0; i < n; ++i) {
        const double yr = yd[2 * i], yi = yd[2 * i + 1];
        zd[2 * i] = xd[2 * i] + (br * yr - bi * yi);
        zd[2 * i + 1] = xd[2 * i + 1] + (br * yi + bi * yr);
    }
}

void scal_scalar(cplx a, cplx* x, std::size_t n) {
    const double ar = a.real(), ai = a.imag();
    double* xd = reinterpret_cast<double*>(x);
    for (std::size_t i = 0; i < n; ++i) {
        const double xr = xd[2 * i], xi = xd[2 * i + 1];
        xd[2 * i] = ar * xr - ai * xi;
        xd[2 * i + 1] = ar * xi + ai * xr;
    }
}

cplx dot_scalar(const cplx* x, const cplx* y, std::size_t n) {
    const double* xd = reinterpret_cast<const double*>(x);
    const double* yd = reinterpret_cast<const double*>(y);
    double sr[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    double si[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    const std::size_t n8 = n - n % 8;
    for (std::size_t i = 0; i < n8; ++i) {
        const double xr = xd[2 * i], xi = xd[2 * i + 1];
        const double yr = yd[2 * i], yi = yd[2 * i + 1];
        sr[i % 8] += xr * yr + xi * yi;
        si[i % 8] += xr * yi - xi * yr;
    }
    double er = (sr[0] + sr[2]) + (sr[4] + sr[6]);
    double ei = (si[0] + si[2]) + (si[4] + si[6]);
    double orr = (sr[1] + sr[3]) + (sr[5] + sr[7]);
    double oi = (si[1] + si[3]) + (si[5] + si[7]);
    double tr = er + orr;
    double ti = ei + oi;
    for (std::size_t i = n8; i < n; ++i) {
        const double xr = xd[2 * i], xi = xd[2 * i + 1];
        const double yr = yd[2 * i], yi = yd[2 * i + 1];
        tr += xr * yr + xi * yi;
        ti += xr * yi - xi * yr;
    }
    return {tr, ti};
}

double norm2sq_scalar(const cplx* x, std::size_t n) {
    const double* xd = reinterpret_cast<const double*>(x);
    const std::size_t m = 2 * n;
    double s[16] = {0};
    const std::size_t m16 = m - m % 16;
    for (std::size_t p = 0; p < m16; ++p) s[p % 16] += xd[p] * xd[p];
    double c[4];
    for (int j = 0; j < 4; ++j) c[j] = (s[j] + s[4 + j]) + (s[8 + j] + s[12 + j]);
    double tot = (c[0] + c[2]) + (c[1] + c[3]);
    for (std::size_t p = m16; p < m; ++p) tot += xd[p] * xd[p];
    return tot;
}

void axpy_d_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_d_scalar(const double* x, const double* y, std::size_t n) {
    double s[16] = {0};
    const std::size_t n16 = n - n % 16;
    for (std::size_t p = 0; p < n16; ++p) s[p % 16] += x[p] * y[p];
    double c[4];
    for (int j = 0; j < 4; ++j) c[j] = (s[j] + s[4 + j]) + (s[8 + j] + s[12 + j]);
    double tot = (c[0] + c[2]) + (c[1] + c[3]);
    for (std::size_t p = n16; p < n; ++p) tot += x[p] * y[p];
    return tot;
}

} // namespace hmet::kernels::detail
