#include "hmet/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "hmet/kernels.hpp"

namespace hmet {

namespace smat {

namespace {
using EMat = Eigen::MatrixXcd;

EMat to_eigen(const cplx* A, int r) {
    EMat M(r, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) M(i, j) = A[i * r + j];
    return M;
}

void from_eigen(const EMat& M, cplx* A, int r) {
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) A[i * r + j] = M(i, j);
}
} // namespace

void identity(cplx* A, int r) {
    for (int i = 0; i < r * r; ++i) A[i] = 0.0;
    for (int i = 0; i < r; ++i) A[i * r + i] = 1.0;
}

void mul(const cplx* A, const cplx* B, cplx* C, int r) {
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            cplx s = 0.0;
            for (int k = 0; k < r; ++k) s += A[i * r + k] * B[k * r + j];
            C[i * r + j] = s;
        }
}

void mul_acc(const cplx* A, const cplx* B, cplx* C, int r) {
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            cplx s = 0.0;
            for (int k = 0; k < r; ++k) s += A[i * r + k] * B[k * r + j];
            C[i * r + j] += s;
        }
}

void adjoint(const cplx* A, cplx* B, int r) {
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) B[i * r + j] = std::conj(A[j * r + i]);
}

cplx trace(const cplx* A, int r) {
    cplx s = 0.0;
    for (int i = 0; i < r; ++i) s += A[i * r + i];
    return s;
}

double fro_norm(const cplx* A, int r) {
    return std::sqrt(kernels::norm2sq(A, static_cast<std::size_t>(r) * r));
}

void inverse(const cplx* A, cplx* B, int r) {
    Eigen::FullPivLU<EMat> lu(to_eigen(A, r));
    if (!lu.isInvertible()) throw Error("smat::inverse: singular matrix");
    from_eigen(lu.inverse(), B, r);
}

void eig_herm(const cplx* A, double* evals, cplx* evecs, int r) {
    Eigen::SelfAdjointEigenSolver<EMat> es(to_eigen(A, r));
    if (es.info() != Eigen::Success) throw Error("smat::eig_herm: eigensolver failed");
    for (int i = 0; i < r; ++i) evals[i] = es.eigenvalues()(i);
    if (evecs) from_eigen(es.eigenvectors(), evecs, r);
}

void herm_fn(const cplx* A, cplx* B, int r, const std::function<double(double)>& fn) {
    Eigen::SelfAdjointEigenSolver<EMat> es(to_eigen(A, r));
    if (es.info() != Eigen::Success) throw Error("smat::herm_fn: eigensolver failed");
    Eigen::VectorXd fl(r);
    for (int i = 0; i < r; ++i) {
        const double fv = fn(es.eigenvalues()(i));
        if (!std::isfinite(fv)) throw Error("smat::herm_fn: function value not finite");
        fl(i) = fv;
    }
    EMat M = es.eigenvectors() * fl.asDiagonal() * es.eigenvectors().adjoint();
    from_eigen(M, B, r);
}

void svd_vals(const cplx* A, double* svals, int r) {
    Eigen::JacobiSVD<EMat> svd(to_eigen(A, r));
    for (int i = 0; i < r; ++i) svals[i] = svd.singularValues()(i);
}

void cholesky(const cplx* A, cplx* L, int r) {
    Eigen::LLT<EMat> llt(to_eigen(A, r));
    if (llt.info() != Eigen::Success)
        throw Error("smat::cholesky: matrix not positive definite");
    from_eigen(EMat(llt.matrixL()), L, r);
}

void eig_general_vals(const cplx* A, cplx* evals, int r) {
    Eigen::ComplexEigenSolver<EMat> es(to_eigen(A, r), false);
    if (es.info() != Eigen::Success) throw Error("smat::eig_general_vals: eigensolver failed");
    for (int i = 0; i < r; ++i) evals[i] = es.eigenvalues()(i);
}

void eig_general(const cplx* A, cplx* evals, cplx* evecs, int r) {
    Eigen::ComplexEigenSolver<EMat> es(to_eigen(A, r), true);
    if (es.info() != Eigen::Success) throw Error("smat::eig_general: eigensolver failed");
    for (int i = 0; i < r; ++i) evals[i] = es.eigenvalues()(i);
    from_eigen(es.eigenvectors(), evecs, r);
}

void polar_unitary(const cplx* A, cplx* U, int r) {
    Eigen::JacobiSVD<EMat> svd(to_eigen(A, r), Eigen::ComputeFullU | Eigen::ComputeFullV);
    EMat M = svd.matrixU() * svd.matrixV().adjoint();
    from_eigen(M, U, r);
}

} // namespace smat

namespace {

// rotation [c, s; -conj(s), c] with real c zeroing the second component
void make_givens(cplx a, cplx b, double& c, cplx& s, cplx& rr) {
    const double an = std::abs(a), bn = std::abs(b);
    if (bn == 0.0) {
        c = 1.0;
        s = 0.0;
        rr = a;
        return;
    }
    if (an == 0.0) {
        c = 0.0;
        s = std::conj(b) / bn;
        rr = bn;
        return;
    }
    const double t = std::hypot(an, bn);
    c = an / t;
    s = (a / an) * std::conj(b) / t;
    rr = (a / an) * t;
}

} // namespace

GmresResult gmres(const LinOp& A, const cplx* b, cplx* x, std::size_t n,
                  const GmresOpts& opts, const LinOp* precond) {
    using kernels::axpy;
    using kernels::dot;
    using kernels::norm2sq;
    using kernels::scal;

    GmresResult res;
    const double bnorm = std::sqrt(norm2sq(b, n));
    if (bnorm == 0.0) {
        for (std::size_t i = 0; i < n; ++i) x[i] = 0.0;
        res.converged = true;
        return res;
    }
    const double target = std::max(opts.rtol * bnorm, opts.atol);
    const int m = opts.restart;

    std::vector<std::vector<cplx>> V(m + 1, std::vector<cplx>(n));
    std::vector<cplx> H(static_cast<std::size_t>(m + 1) * m, 0.0);
    std::vector<double> cs(m, 0.0);
    std::vector<cplx> sn(m, 0.0), g(m + 1, 0.0);
    std::vector<cplx> w(n), mz(n);
    auto Hat = [&](int i, int k) -> cplx& { return H[i + static_cast<std::size_t>(k) * (m + 1)]; };

    int total = 0;
    while (total < opts.maxiter) {
        A(x, w.data());
        for (std::size_t i = 0; i < n; ++i) w[i] = b[i] - w[i];
        double beta = std::sqrt(norm2sq(w.data(), n));
        res.relres = beta / bnorm;
        if (beta <= target) {
            res.converged = true;
            return res;
        }
        V[0] = w;
        scal(1.0 / beta, V[0].data(), n);
        std::fill(g.begin(), g.end(), cplx(0.0));
        g[0] = beta;

        int k = 0;
        for (; k < m && total < opts.maxiter; ++total) {
            const cplx* vin = V[k].data();
            if (precond) {
                (*precond)(vin, mz.data());
                vin = mz.data();
            }
            A(vin, w.data());
            for (int i = 0; i <= k; ++i) {
                cplx hik = dot(V[i].data(), w.data(), n);
                if (opts.real_space) hik = hik.real();
                Hat(i, k) = hik;
                axpy(-hik, V[i].data(), w.data(), n);
            }
            for (int i = 0; i <= k; ++i) {
                cplx corr = dot(V[i].data(), w.data(), n);
                if (opts.real_space) corr = corr.real();
                Hat(i, k) += corr;
                axpy(-corr, V[i].data(), w.data(), n);
            }
            const double hk1 = std::sqrt(norm2sq(w.data(), n));
            Hat(k + 1, k) = hk1;
            if (hk1 > 0.0) {
                V[k + 1] = w;
                scal(1.0 / hk1, V[k + 1].data(), n);
            }
            for (int i = 0; i < k; ++i) {
                const cplx h0 = Hat(i, k), h1 = Hat(i + 1, k);
                Hat(i, k) = cs[i] * h0 + sn[i] * h1;
                Hat(i + 1, k) = -std::conj(sn[i]) * h0 + cs[i] * h1;
            }
            cplx rr;
            make_givens(Hat(k, k), Hat(k + 1, k), cs[k], sn[k], rr);
            Hat(k, k) = rr;
            Hat(k + 1, k) = 0.0;
            g[k + 1] = -std::conj(sn[k]) * g[k];
            g[k] = cs[k] * g[k];
            ++k;
            if (std::abs(g[k]) <= target || hk1 == 0.0) break;
        }

        // y = H(0:k,0:k)^{-1} g(0:k), then x += (preconditioned) V y
        std::vector<cplx> y(k);
        for (int i = k - 1; i >= 0; --i) {
            cplx s = g[i];
            for (int j = i + 1; j < k; ++j) s -= Hat(i, j) * y[j];
            y[i] = s / Hat(i, i);
        }
        std::fill(w.begin(), w.end(), cplx(0.0));
        for (int i = 0; i < k; ++i) axpy(y[i], V[i].data(), w.data(), n);
        if (precond) {
            (*precond)(w.data(), mz.data());
            for (std::size_t i = 0; i < n; ++i) x[i] += mz[i];
        } else {
            for (std::size_t i = 0; i < n; ++i) x[i] += w[i];
        }

        A(x, w.data());
        for (std::size_t i = 0; i < n; ++i) w[i] = b[i] - w[i];
        beta = std::sqrt(norm2sq(w.data(), n));
        res.relres = beta / bnorm;
        res.iterations = total;
        if (beta <= target) {
            res.converged = true;
            return res;
        }
    }
    res.iterations = total;
    return res;
}

void solve_periodic_tridiag(double a, double b, const cplx* d, cplx* x, int n) {
    if (n < 3) throw Error("solve_periodic_tridiag: need n >= 3");
    if (b == 0.0) {
        if (a == 0.0) throw Error("solve_periodic_tridiag: singular system");
        for (int i = 0; i < n; ++i) x[i] = d[i] / a;
        return;
    }
    const double gamma = (a != 0.0) ? -a : b;
    std::vector<double> diag(n, a);
    diag[0] = a - gamma;
    diag[n - 1] = a - b * b / gamma;

    // Thomas on the corrected (acyclic) tridiagonal system for two right
    // hand sides: the data d and the rank-one carrier u.
    std::vector<double> cp(n);
    std::vector<cplx> y(n);
    std::vector<double> z(n), u(n, 0.0);
    u[0] = gamma;
    u[n - 1] = b;

    double den = diag[0];
    if (den == 0.0) throw Error("solve_periodic_tridiag: breakdown");
    cp[0] = b / den;
    y[0] = d[0] / den;
    z[0] = u[0] / den;
    for (int i = 1; i < n; ++i) {
        den = diag[i] - b * cp[i - 1];
        if (den == 0.0) throw Error("solve_periodic_tridiag: breakdown");
        cp[i] = (i < n - 1 ? b : 0.0) / den;
        y[i] = (d[i] - b * y[i - 1]) / den;
        z[i] = (u[i] - b * z[i - 1]) / den;
    }
    for (int i = n - 2; i >= 0; --i) {
        y[i] -= cp[i] * y[i + 1];
        z[i] -= cp[i] * z[i + 1];
    }

    const double vb = b / gamma;
    const cplx num = y[0] + vb * y[n - 1];
    const double denom = 1.0 + z[0] + vb * z[n - 1];
    if (denom == 0.0) throw Error("solve_periodic_tridiag: singular system");
    const cplx fact = num / denom;
    for (int i = 0; i < n; ++i) x[i] = y[i] - fact * z[i];
}

} // namespace hmet
