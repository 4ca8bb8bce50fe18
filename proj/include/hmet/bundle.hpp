#pragma once

#include <functional>

#include "hmet/fields.hpp"

namespace hmet {

// Link transport along axis mu: U_mu(x) = I - h_mu A_mu(x). A section with
// vanishing covariant forward difference satisfies s(x + e_mu) = U_mu(x) s(x).
EndoField link_transport(const ConnectionField& C, int mu);

// (D+_mu s)(x) + A_mu(x) s(x), twist applied inside the shifted evaluation
SectionField cov_forward(const ConnectionField& C, const SectionField& s, int mu);

// induced connection on endomorphisms:
//   (D+_mu f)(x) + A_mu(x) f(x) - f(x + e_mu) A_mu(x)
// Its kernel is exactly f(x + e_mu) = U_mu f U_mu^-1 (transport-commuting
// endomorphisms), and the Leibniz rule against sections holds exactly.
EndoField end_forward(const ConnectionField& C, const EndoField& f, int mu);

// plaquette curvature (dim 2); identically zero field in dim 1
EndoField curvature(const ConnectionField& C);

// gauge action by an invertible frame change u:
//   A'_mu(x) = u(x + e_mu) A_mu(x) u(x)^-1 - (D+_mu u)(x) u(x)^-1
// With the shifted factor the transported links transform exactly by
// U' = u(x + e_mu) U u(x)^-1 and sections by s' = u s.
ConnectionField gauge_act(const EndoField& u, const ConnectionField& C);
EndoField gauge_act_metric(const EndoField& u, const EndoField& k); // u^-dagger K u^-1
SectionField gauge_act_section(const EndoField& u, const SectionField& s);

// adjoint with respect to a metric: K^-1 v^dagger K
EndoField madjoint(const MetricField& K, const EndoField& v);
// (v + madjoint(v)) / 2
EndoField msym(const MetricField& K, const EndoField& v);
double msa_defect(const MetricField& K, const EndoField& v);

// functional calculus for K-self-adjoint fields via the Hermitian similarity
// W = L^dagger v L^-dagger, K = L L^dagger
EndoField ksa_fn(const MetricField& K, const EndoField& v, const std::function<double(double)>& fn);
EndoField ksa_exp(const MetricField& K, const EndoField& v);
EndoField ksa_log(const MetricField& K, const EndoField& f);  // needs positive spectrum
EndoField ksa_sqrt(const MetricField& K, const EndoField& f); // needs positive spectrum

// eigendecomposition of a K-self-adjoint fiber: real ascending lam, and if
// requested the (K-orthonormal) eigenvector matrix P with inverse Q, so that
// v = P diag(lam) Q, Q = P^-1, P^dagger K P = I
void ksa_eigs(const MetricField& K, const EndoField& v, int p, double* lam, cplx* P = nullptr,
              cplx* Q = nullptr);

// Eigendata of a K-self-adjoint field cached for every point, used to apply
// exp and the derivative of exp repeatedly at one Newton iterate.
struct DexpCache {
    int r = 0;
    int np = 0;
    std::vector<double> lam; // np * r
    std::vector<cplx> P, Q;  // np * r * r each

    const double* lam_at(int p) const { return lam.data() + static_cast<std::size_t>(p) * r; }
    const cplx* p_at(int p) const { return P.data() + static_cast<std::size_t>(p) * r * r; }
    const cplx* q_at(int p) const { return Q.data() + static_cast<std::size_t>(p) * r * r; }
};

DexpCache make_dexp_cache(const MetricField& K, const EndoField& v);
// out = exp(scale * v) at point p
void cache_exp(const DexpCache& c, int p, double scale, cplx* out);
// m = exp(-v) * (d/dt exp(v + t w))|_0 at point p; this is H^-1 dH for
// H = K exp(v), the quantity the Jacobian assembly consumes
void dexp_log_apply(const DexpCache& c, int p, const cplx* w, cplx* m);
// inverse map: recover w = (d/dt log(exp(v) e^{t m}))|_0 from m = H^-1 dH
void dlog_apply(const DexpCache& c, int p, const cplx* m, cplx* w);

// monodromy of the loop along axis mu through transverse index t, based at
// index 0 of that axis: seam twist composed with the ordered link product
std::vector<cplx> holonomy(const ConnectionField& C, int mu, int transverse = 0);

// Basis of transport-commuting endomorphisms (kernel of end_forward on all
// axes). Candidates come from the commutant of the axis monodromies and are
// kept when their propagated defect max_mu |end_forward|_L2 stays below
// tol * (1 + |A|_L2). Scalars are always present.
struct ParallelBasis {
    std::vector<EndoField> basis;
    std::vector<double> defects;
};
ParallelBasis parallel_endomorphisms(const ConnectionField& C, double tol = 1e-8);

} // namespace hmet
