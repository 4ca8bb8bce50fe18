#pragma once

#include <map>
#include <string>

#include "hmet/continuity.hpp"

namespace hmet {

// Spectral projection of a K-self-adjoint field onto all eigenvalue branches
// at or below a threshold. pi is idempotent and K-self-adjoint; vframe holds
// a K-orthonormal basis of its range per point (r x k, column major by basis
// vector: entry (i, c) at [p*r*k + i*k + c]).
struct ProjectionField {
    EndoField pi;
    int rank = 0;
    std::vector<cplx> vframe;
    double threshold = 0.0; // largest branch mean included
};

struct SpectralSplit {
    bool clustered = false;
    double gap = 0.0;    // smallest gap used to separate clusters
    double spread = 0.0; // eigenvalue range
    std::vector<double> branch_mean; // volume averages, ascending
    std::vector<double> branch_var;  // per-branch variance across the grid
    std::vector<ProjectionField> projections;
};

// Pointwise eigendecomposition through the Hermitian similarity at K,
// volume-averaged eigenvalue branches; every gap above gap_tol * spread
// defines one threshold projection onto the branches below it. Empty when
// the spread itself is below gap_tol. Requires |u|_L2 = 1 (1e-6) and
// K-self-adjointness.
SpectralSplit extract_projections(const MetricField& K, const EndoField& u, double gap_tol = 0.05);

struct InvarianceReport {
    double invariance = 0.0;  // |(1 - Pi)(D+ Pi + [A, Pi])|, range invariance
    double invariance_tw = 0.0; // |Pi delta_K(1 - Pi)|, the adjoint-side defect
    double reducing = 0.0;    // |end_forward(Pi)|, zero iff transport-commuting
    double psi_compat = 0.0;  // |end_forward(Pi) - 2 Pi [psi_K, Pi]|
    double idempotency = 0.0; // |Pi^2 - Pi|
    double sa_defect = 0.0;   // |Pi - Pi^{*K}|
};
InvarianceReport verify_invariance(const ConnectionField& C, const MetricField& K,
                                   const ProjectionField& P);

// Largest principal angle between the ranges of two equal-rank projections,
// measured in the K inner product, maximized over grid points.
double principal_angle_max(const MetricField& K, const ProjectionField& P1,
                           const ProjectionField& P2);

struct DetectorReport {
    bool found = false;
    SpectralSplit split;
    std::vector<InvarianceReport> invariance;
    double best_defect = 0.0; // smallest range-invariance defect among clusters
    std::string message;
};

// Runs extract_projections on u and certifies each threshold projection;
// found when some proper projection has range-invariance defect <= defect_tol.
DetectorReport detect_invariant_subbundle(const ConnectionField& C, const MetricField& K,
                                          const EndoField& u, double gap_tol = 0.05,
                                          double defect_tol = 1e-3);

// Restriction of (C, H) to the range of an idempotent field Pi and to its
// H-orthogonal complement: adapted H-orthonormal frames by sweep propagation,
// block connections from the transported links, seam mismatch collected into
// a constant per-axis twist. Large input defects are reported, not thrown.
struct SplitReport {
    ConnectionField restricted;               // rank = rank(Pi), identity metric
    ConnectionField complement;               // rank = r - rank(Pi)
    std::vector<std::vector<cplx>> seam;      // per-axis k x k twist of restricted
    std::vector<std::vector<cplx>> seam_perp; // per-axis twist of the complement
    double seam_defect = 0.0;                 // non-constancy across the seam
    double beta_upper = 0.0;                  // psi block mixing range -> complement
    double beta_lower = 0.0;                  // complement -> range, ~0 when invariant
    double frame_defect = 0.0;                // |Pi_H V - V|
    double input_residual = 0.0;              // |R(C, H)|_L2 of the data handed in
    double restricted_residual = 0.0;         // |R(restricted, I)|_L2
    double complement_residual = 0.0;         // |R(complement, I)|_L2
};
SplitReport split_harmonic(const ConnectionField& C, const MetricField& H, const EndoField& pi);

// Builds an idempotent transport-commuting field from a basis element of the
// holonomy commutant by Lagrange interpolation on its (constant) spectrum.
// Returns false when only scalars are available.
bool parallel_projection(const ConnectionField& C, EndoField& pi_out, double tol = 1e-8);

// Gauge transform u = exp(sigma), sigma K-self-adjoint, chosen by a
// Newton-Krylov iteration so that the transformed connection is harmonic for
// K itself; seeded with sigma = 1/2 log(K^-1 H).
struct GaugeFixResult {
    ConnectionField fixed;
    EndoField sigma;
    double residual_l2 = 0.0;
    int iters = 0;
    bool converged = false;
};
GaugeFixResult gauge_fix(const ConnectionField& C, const MetricField& K, const MetricField& H,
                         double tol = 1e-8, int maxit = 40);

// Solution uniqueness data: dimension of the transport commutant, the best
// fitting constant c for H1^-1 H2 ~ c id, and the sup-norm deviation from it
// (zero exactly when the two metrics differ by a constant positive factor).
struct UniquenessReport {
    int parallel_dim = 0;
    bool simple = false;
    double scalar_c = 1.0;
    double scalar_dev = 0.0; // max over points of |H1^-1 H2 - c id|_F
};
UniquenessReport uniqueness_check(const ConnectionField& C, const MetricField& H1,
                                  const MetricField& H2, double tol = 1e-8);

} // namespace hmet
