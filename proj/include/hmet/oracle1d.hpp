#pragma once

#include "hmet/fields.hpp"

namespace hmet {

// Independent 1-D reference solver. Works on the Hermitian metric values
// directly (r^2 real unknowns per point), discretizes every derivative with
// central differences, and runs a dense Newton iteration with a
// finite-difference Jacobian down the same eps path. Shares containers and
// small dense helpers with the main library but none of its operators.
struct OracleResult {
    bool converged = false;
    EndoField H;
    double final_residual = 0.0;
    double final_eps = 0.0;
    int newton_total = 0;
};

OracleResult oracle_solve_1d(const ConnectionField& C, const EndoField& K0, double eps_min = 1e-6,
                             double tol = 1e-9);

// rescales H by a constant so the volume mean of log det H vanishes
void oracle_normalize(EndoField& H);

// relative weighted L2 distance after normalizing copies of both sides
double oracle_distance(const EndoField& A, const EndoField& B);

enum class MonodromyClass { SemiSimple, NonSemiSimple };

struct ClassifyReport {
    MonodromyClass cls = MonodromyClass::SemiSimple;
    std::vector<cplx> monodromy;
    std::vector<cplx> eigenvalues;
    std::vector<int> alg_mult, geo_mult; // per eigenvalue cluster
    bool constant_coefficient = true;
};

// Diagonalizability of the loop monodromy: seam twist composed with the
// exact flow of the coefficient along the circle (matrix exponential when
// the coefficient is constant, fine-stepped integration otherwise), then
// eigenvalue clustering with a geometric-multiplicity count per cluster.
ClassifyReport oracle_classify(const ConnectionField& C, double cluster_tol = 1e-6);

// dense matrix exponential by scaling and squaring
std::vector<cplx> expm(const std::vector<cplx>& A, int r);

} // namespace hmet
