#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hmet/decomposition.hpp"

namespace hmet {

enum class SolveMode { Newton, Flow };

struct SolverConfig {
    double eps_start = 1.0;
    double eps_min = 1e-6;
    double eps_ratio = 0.5;
    double newton_tol = 1e-10; // on the L2 norm of R - eps log f
    int newton_maxit = 160;
    double gmres_rtol = 1e-6;
    int gmres_restart = 60;
    int gmres_maxit = 500;
    int blowup_stall = 8;    // declared failures before giving up
    double blowup_l2 = 1e3;  // |log f|_L2 ceiling
    SolveMode mode = SolveMode::Newton;
    double flow_eta = 0.0;   // descent step, 0 picks 0.5 h_min^2
    double flow_tol = 1e-8;
    int flow_maxsteps = 4000;
};

struct StageRecord {
    double eps = 0.0;
    int iters = 0;
    double residual_l2 = 0.0; // |R - eps log f|_L2 at exit
    double logf_l2 = 0.0;
    double logf_linf = 0.0; // largest eigenvalue magnitude of log f
    double energy = 0.0;
    double fmin = 0.0, fmax = 0.0; // eigenvalue range of f
    bool converged = false;
};

struct ContinuationTrace {
    std::vector<StageRecord> stages;
};

void write_trace_csv(const ContinuationTrace& t, std::ostream& os);

enum class OutcomeStatus { Harmonic, BlowUp, Inconclusive };

struct SolveOutcome {
    OutcomeStatus status = OutcomeStatus::Inconclusive;
    std::optional<MetricField> H;      // final metric (last completed stage)
    std::optional<MetricField> K_base; // reference metric the path runs over
    EndoField logf;                    // log(K_base^-1 H), K_base-self-adjoint
    EndoField u_limit;                 // trace-projected, L2(K)-normalized logf
    ContinuationTrace trace;
    double final_residual = 0.0; // |R|_L2 at the final metric
    double final_eps = 0.0;      // 0 when harmonic
    std::string message;
};

// Conformal correction of a starting metric: multiplies K0 by a scalar
// factor exp(phi) chosen so the trace of the residual nearly vanishes
// pointwise (Poisson solve plus a short scalar Newton polish). The trace of
// the residual integrates to zero for any metric, which makes the Poisson
// problem solvable.
MetricField initial_metric(const ConnectionField& C, const MetricField& K0);

// The per-stage map N(v) = R(K e^v) - eps v whose zero is the stage
// solution, and its directional derivative at v along dv. Exposed so the
// analytic linearization can be checked against finite differences.
EndoField stage_map(const ConnectionField& C, const MetricField& K, double eps,
                    const EndoField& v);
EndoField stage_map_dir(const ConnectionField& C, const MetricField& K, double eps,
                        const EndoField& v, const EndoField& dv);

// Path following in eps for R(H_eps) = eps log(K^-1 H_eps) from eps_start
// down to eps_min and then eps = 0. Newton-Krylov per stage with analytic
// directional derivatives; failed stages shrink the step geometrically.
// Ends Harmonic when the eps = 0 stage converges, BlowUp when progress
// stalls or |log f| passes the ceiling.
SolveOutcome continuity_solve(const ConnectionField& C, const MetricField& K0,
                              const SolverConfig& cfg, std::ostream* log = nullptr);

} // namespace hmet
