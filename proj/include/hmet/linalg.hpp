#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <vector>

#include "hmet/error.hpp"

namespace hmet {

using cplx = std::complex<double>;

// Dense r x r helpers on flat row-major arrays (entry (i,j) at [i*r+j]).
// Fibers are small (r <= 8 in practice), so everything is plain loops with
// Eigen behind factorizations and eigenproblems.
namespace smat {

void identity(cplx* A, int r);
void mul(const cplx* A, const cplx* B, cplx* C, int r);     // C = A B
void mul_acc(const cplx* A, const cplx* B, cplx* C, int r); // C += A B
void adjoint(const cplx* A, cplx* B, int r);                // B = A^dagger
cplx trace(const cplx* A, int r);
double fro_norm(const cplx* A, int r);
void inverse(const cplx* A, cplx* B, int r); // throws on singular input
// Hermitian eigendecomposition, ascending eigenvalues; evecs row-major with
// eigenvector k in column k
void eig_herm(const cplx* A, double* evals, cplx* evecs, int r);
// B = f(A) for Hermitian A via its eigendecomposition
void herm_fn(const cplx* A, cplx* B, int r, const std::function<double(double)>& fn);
// singular values, descending
void svd_vals(const cplx* A, double* svals, int r);
// lower Cholesky factor of Hermitian positive definite A; throws otherwise
void cholesky(const cplx* A, cplx* L, int r);
// eigenvalues of a general matrix (no order guarantee)
void eig_general_vals(const cplx* A, cplx* evals, int r);
// general eigendecomposition; evecs row-major with eigenvector k in column k
void eig_general(const cplx* A, cplx* evals, cplx* evecs, int r);
// closest unitary factor, A = U P with P positive semidefinite
void polar_unitary(const cplx* A, cplx* U, int r);

} // namespace smat

using LinOp = std::function<void(const cplx*, cplx*)>;

struct GmresOpts {
    int restart = 60;
    int maxiter = 2000;
    double rtol = 1e-8;
    double atol = 0.0;
    // Treat the complex arrays as vectors over the reals: Arnoldi uses the
    // Re<.,.> inner product, so the Krylov space is an R-span and the method
    // stays exact for operators that are only real-linear (conjugations,
    // adjoint projections). Needed whenever A involves msym-type maps.
    bool real_space = false;
};

struct GmresResult {
    int iterations = 0;
    double relres = 0.0;
    bool converged = false;
};

// Restarted GMRES with modified Gram-Schmidt (one reorthogonalization pass)
// and complex Givens rotations. x holds the initial guess on entry. When
// precond is given it is applied on the right: the returned x already
// includes it, and residuals are true residuals of A x - b.
GmresResult gmres(const LinOp& A, const cplx* b, cplx* x, std::size_t n,
                  const GmresOpts& opts, const LinOp* precond = nullptr);

// Solves the periodic constant-coefficient tridiagonal system
//   a x[i] + b (x[i-1] + x[i+1]) = d[i]  (indices mod n, n >= 3)
// by the Thomas algorithm plus a rank-one correction.
void solve_periodic_tridiag(double a, double b, const cplx* d, cplx* x, int n);

} // namespace hmet
