#pragma once

#include "hmet/bundle.hpp"

namespace hmet {

// Splitting of a connection against a metric H into a metric-compatible part
// and an H-self-adjoint one-form part psi:
//   psi_mu = (A_mu + A^H_mu - P_mu) / 2,
//   A^H_mu = H^-1 A_mu^dagger H,  P_mu = H^-1 (D+_mu H),
// with D+ evaluated through the seam twist. The defining relation
//   H psi_mu = (H A_mu + A_mu^dagger H - D+_mu H) / 2
// holds exactly, as does H-self-adjointness of psi.
struct Decomposition {
    FormEndoField psi;  // self-adjoint part
    FormEndoField amet; // compatible-part coefficients, A - psi
    FormEndoField aH;   // H^-1 A^dagger H
    FormEndoField pfld; // H^-1 D+ H
};

Decomposition decompose(const ConnectionField& C, const MetricField& H);

// E = 1/2 sum_x w sum_mu Re tr(psi psi^{*H})
double energy(const Decomposition& d, const MetricField& H);
double energy(const ConnectionField& C, const MetricField& H);

// First variation of the energy under H_t = H exp(t s), s H-self-adjoint:
//   d/dt E = -1/2 sum_x w Re tr(R s)  exactly, with
//   R = -sum_mu { D-_mu psi_mu + [psi_mu, A^H_mu] + P_mu psi_mu
//                 - shift_down(psi_mu P_mu) }.
// R is H-self-adjoint and sum_x w tr R = 0 (both exactly in exact
// arithmetic, to roundoff here).
EndoField residual_from(const ConnectionField& C, const MetricField& H, const Decomposition& d);
EndoField residual(const ConnectionField& C, const MetricField& H);

// Change of the splitting under H = K f, f positive K-self-adjoint:
//   psi_H = psi_K - 1/2 f^-1 (delta f),
//   (delta f)_mu = (I + h P_K,mu) D+_mu f + [P_K,mu - A^K_mu, f]
// exactly when stencil_corrected; dropping the h P_K D+f correction leaves
// an O(h) discrepancy that vanishes under grid refinement.
FormEndoField delta_met(const ConnectionField& C, const MetricField& K, const EndoField& f,
                        bool stencil_corrected = true);

struct MetricChangeCheck {
    double exact_defect;       // with the stencil correction, roundoff
    double uncorrected_defect; // without it, O(h)
};
MetricChangeCheck check_metric_change(const ConnectionField& C, const MetricField& K,
                                      const EndoField& f);

// Transport-consistency endomorphisms M_mu = H^-1 U^dagger H(+e_mu) U with
// U the link transport. M is H-self-adjoint, equals I - 2 h psi + O(h^2),
// and under a gauge change u transforms exactly by M -> u M u^-1 (the
// pointwise psi and R only do so up to O(h)).
FormEndoField link_sym(const ConnectionField& C, const MetricField& H);

// energy and its exact H-gradient built from S_mu = (I - M_mu) / (2 h_mu):
//   E_link = 1/2 sum w sum_mu Re tr(S S^{*H}),
//   d/dt E_link = -1/2 sum w Re tr(R_link s)
EndoField link_residual(const ConnectionField& C, const MetricField& H);
double link_energy(const ConnectionField& C, const MetricField& H);

// Compares the splitting data of (C, H) with that of the gauge-transformed
// pair. The transport-consistency objects agree to roundoff; the pointwise
// objects carry an O(h) discretization defect reported for diagnostics.
struct GaugeCheck {
    double m_defect = 0.0;             // |M' - u M u^-1|, roundoff
    double link_energy_defect = 0.0;   // |E_link' - E_link|, roundoff
    double link_residual_defect = 0.0; // |R_link' - u R_link u^-1|, roundoff
    double psi_defect = 0.0;           // |psi' - u psi u^-1|, O(h)
    double residual_defect = 0.0;      // |R' - u R u^-1|, O(h)
    double energy_defect = 0.0;        // |E' - E|, O(h)
};
GaugeCheck check_gauge_equivariance(const ConnectionField& C, const MetricField& H,
                                    const EndoField& u);

} // namespace hmet
