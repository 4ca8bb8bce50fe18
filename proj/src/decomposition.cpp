#include "hmet/decomposition.hpp"

#include <cmath>

#include "hmet/kernels.hpp"

namespace hmet {

namespace {

// out = x y at every point
void pw_mul(const EndoField& x, const EndoField& y, EndoField& out) {
    for (int p = 0; p < x.g->npoints(); ++p) smat::mul(x.at(p), y.at(p), out.at(p), x.r);
}

double rel_fro_diff(const EndoField& x, const EndoField& y) {
    EndoField d = x;
    kernels::axpy(-1.0, y.a.data(), d.a.data(), d.a.size());
    return fro_l2(d);
}

} // namespace

Decomposition decompose(const ConnectionField& C, const MetricField& H) {
    const int r = C.r, rr = r * r;
    const int np = C.g->npoints();
    Decomposition d;
    d.psi = FormEndoField(C.g, r);
    d.amet = FormEndoField(C.g, r);
    d.aH = FormEndoField(C.g, r);
    d.pfld = FormEndoField(C.g, r);

    std::vector<cplx> t1(rr), t2(rr);
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const EndoField hplus = shift_metric(H.values(), C.twist, mu, +1);
        const double invh = 1.0 / C.g->spacing(mu);
        for (int p = 0; p < np; ++p) {
            const cplx* a = C.A[mu].at(p);
            const cplx* hv = H.at(p);
            const cplx* hi = H.inv_at(p);
            // A^H = H^-1 A^dagger H
            smat::adjoint(a, t1.data(), r);
            smat::mul(hi, t1.data(), t2.data(), r);
            smat::mul(t2.data(), hv, d.aH[mu].at(p), r);
            // P = H^-1 (H(+e) - H) / h
            const cplx* hp = hplus.at(p);
            for (int i = 0; i < rr; ++i) t1[i] = (hp[i] - hv[i]) * invh;
            smat::mul(hi, t1.data(), d.pfld[mu].at(p), r);
            cplx* psi = d.psi[mu].at(p);
            const cplx* aH = d.aH[mu].at(p);
            const cplx* pf = d.pfld[mu].at(p);
            for (int i = 0; i < rr; ++i) psi[i] = 0.5 * (a[i] + aH[i] - pf[i]);
            cplx* am = d.amet[mu].at(p);
            for (int i = 0; i < rr; ++i) am[i] = a[i] - psi[i];
        }
    }
    return d;
}

double energy(const Decomposition& d, const MetricField& H) {
    const int r = d.psi.comp[0].r;
    const int np = H.grid()->npoints();
    double e = 0.0;
    std::vector<cplx> t(r * r);
    for (int mu = 0; mu < d.psi.naxes(); ++mu) {
        const EndoField adj = madjoint(H, d.psi[mu]);
        for (int p = 0; p < np; ++p) {
            smat::mul(d.psi[mu].at(p), adj.at(p), t.data(), r);
            e += smat::trace(t.data(), r).real();
        }
    }
    return 0.5 * H.grid()->weight() * e;
}

double energy(const ConnectionField& C, const MetricField& H) {
    return energy(decompose(C, H), H);
}

EndoField residual_from(const ConnectionField& C, const MetricField&, const Decomposition& d) {
    const int r = C.r, rr = r * r;
    const int np = C.g->npoints();
    EndoField R(C.g, r);
    std::vector<cplx> t1(rr), t2(rr);
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const EndoField& psi = d.psi[mu];
        const EndoField& aH = d.aH[mu];
        const EndoField& pf = d.pfld[mu];
        const EndoField psim = shift_endo(psi, C.twist, mu, -1);
        EndoField psip(C.g, r);
        pw_mul(psi, pf, psip);
        const EndoField psipm = shift_endo(psip, C.twist, mu, -1);
        const double invh = 1.0 / C.g->spacing(mu);
        for (int p = 0; p < np; ++p) {
            cplx* out = R.at(p);
            const cplx* ps = psi.at(p);
            const cplx* pm = psim.at(p);
            // D- psi
            for (int i = 0; i < rr; ++i) t1[i] = (ps[i] - pm[i]) * invh;
            // + [psi, A^H]
            smat::mul(ps, aH.at(p), t2.data(), r);
            for (int i = 0; i < rr; ++i) t1[i] += t2[i];
            smat::mul(aH.at(p), ps, t2.data(), r);
            for (int i = 0; i < rr; ++i) t1[i] -= t2[i];
            // + P psi
            smat::mul(pf.at(p), ps, t2.data(), r);
            for (int i = 0; i < rr; ++i) t1[i] += t2[i];
            // - (psi P)(x - e)
            const cplx* sm = psipm.at(p);
            for (int i = 0; i < rr; ++i) out[i] -= t1[i] - sm[i];
        }
    }
    return R;
}

EndoField residual(const ConnectionField& C, const MetricField& H) {
    return residual_from(C, H, decompose(C, H));
}

FormEndoField delta_met(const ConnectionField& C, const MetricField& K, const EndoField& f,
                        bool stencil_corrected) {
    const int r = C.r, rr = r * r;
    const int np = C.g->npoints();
    const Decomposition dk = decompose(C, K);
    FormEndoField out(C.g, r);
    std::vector<cplx> t1(rr), t2(rr);
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const EndoField fp = shift_endo(f, C.twist, mu, +1);
        const double h = C.g->spacing(mu);
        const double invh = 1.0 / h;
        for (int p = 0; p < np; ++p) {
            cplx* o = out[mu].at(p);
            // D+ f, optionally with the (I + h P_K) stencil factor
            for (int i = 0; i < rr; ++i) t1[i] = (fp.at(p)[i] - f.at(p)[i]) * invh;
            if (stencil_corrected) {
                smat::mul(dk.pfld[mu].at(p), t1.data(), t2.data(), r);
                for (int i = 0; i < rr; ++i) t1[i] += h * t2[i];
            }
            // + [P_K - A^K, f]
            for (int i = 0; i < rr; ++i)
                t2[i] = dk.pfld[mu].at(p)[i] - dk.aH[mu].at(p)[i];
            std::vector<cplx> c1(rr), c2(rr);
            smat::mul(t2.data(), f.at(p), c1.data(), r);
            smat::mul(f.at(p), t2.data(), c2.data(), r);
            for (int i = 0; i < rr; ++i) o[i] = t1[i] + c1[i] - c2[i];
        }
    }
    return out;
}

MetricChangeCheck check_metric_change(const ConnectionField& C, const MetricField& K,
                                      const EndoField& f) {
    const int r = C.r, rr = r * r;
    const int np = C.g->npoints();
    EndoField hvals(C.g, r);
    pw_mul(K.values(), f, hvals);
    const MetricField H(hvals);
    const Decomposition dH = decompose(C, H);
    const Decomposition dK = decompose(C, K);

    EndoField finv(C.g, r);
    for (int p = 0; p < np; ++p) smat::inverse(f.at(p), finv.at(p), r);

    MetricChangeCheck res{0.0, 0.0};
    std::vector<cplx> t(rr);
    for (int pass = 0; pass < 2; ++pass) {
        const FormEndoField delta = delta_met(C, K, f, pass == 0);
        double acc = 0.0;
        for (int mu = 0; mu < C.g->dim(); ++mu) {
            EndoField pred(C.g, r);
            for (int p = 0; p < np; ++p) {
                smat::mul(finv.at(p), delta[mu].at(p), t.data(), r);
                const cplx* pk = dK.psi[mu].at(p);
                for (int i = 0; i < rr; ++i) pred.at(p)[i] = pk[i] - 0.5 * t[i];
            }
            const double dmu = rel_fro_diff(dH.psi[mu], pred);
            acc += dmu * dmu;
        }
        (pass == 0 ? res.exact_defect : res.uncorrected_defect) = std::sqrt(acc);
    }
    return res;
}

FormEndoField link_sym(const ConnectionField& C, const MetricField& H) {
    const int r = C.r, rr = r * r;
    const int np = C.g->npoints();
    FormEndoField M(C.g, r);
    std::vector<cplx> ua(rr), t1(rr), t2(rr);
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const EndoField U = link_transport(C, mu);
        const EndoField hplus = shift_metric(H.values(), C.twist, mu, +1);
        for (int p = 0; p < np; ++p) {
            smat::adjoint(U.at(p), ua.data(), r);
            smat::mul(ua.data(), hplus.at(p), t1.data(), r);
            smat::mul(t1.data(), U.at(p), t2.data(), r);
            smat::mul(H.inv_at(p), t2.data(), M[mu].at(p), r);
        }
    }
    return M;
}

namespace {

// S_mu = (I - M_mu) / (2 h_mu) and its H-adjoint
void link_s_fields(const ConnectionField& C, const MetricField& H, FormEndoField& S,
                   FormEndoField& Sadj) {
    const FormEndoField M = link_sym(C, H);
    const int r = C.r, rr = r * r;
    S = FormEndoField(C.g, r);
    Sadj = FormEndoField(C.g, r);
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const double sc = 1.0 / (2.0 * C.g->spacing(mu));
        for (int p = 0; p < C.g->npoints(); ++p) {
            cplx* s = S[mu].at(p);
            const cplx* m = M[mu].at(p);
            for (int i = 0; i < rr; ++i) s[i] = -sc * m[i];
            for (int i = 0; i < r; ++i) s[i * r + i] += sc;
        }
        Sadj[mu] = madjoint(H, S[mu]);
    }
}

} // namespace

double link_energy(const ConnectionField& C, const MetricField& H) {
    FormEndoField S, Sadj;
    link_s_fields(C, H, S, Sadj);
    const int r = C.r;
    std::vector<cplx> t(r * r);
    double e = 0.0;
    for (int mu = 0; mu < C.g->dim(); ++mu)
        for (int p = 0; p < C.g->npoints(); ++p) {
            smat::mul(S[mu].at(p), Sadj[mu].at(p), t.data(), r);
            e += smat::trace(t.data(), r).real();
        }
    return 0.5 * C.g->weight() * e;
}

EndoField link_residual(const ConnectionField& C, const MetricField& H) {
    const int r = C.r, rr = r * r;
    const int np = C.g->npoints();
    FormEndoField S, Sadj;
    link_s_fields(C, H, S, Sadj);
    const FormEndoField M = link_sym(C, H);

    EndoField G(C.g, r);
    std::vector<cplx> t1(rr), t2(rr);
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const double sc = 1.0 / (2.0 * C.g->spacing(mu));
        const EndoField U = link_transport(C, mu);
        EndoField uinv(C.g, r);
        for (int p = 0; p < np; ++p) smat::inverse(U.at(p), uinv.at(p), r);
        // carrier = U S^{*H} M U^-1, shifted down one step
        EndoField carrier(C.g, r);
        for (int p = 0; p < np; ++p) {
            smat::mul(U.at(p), Sadj[mu].at(p), t1.data(), r);
            smat::mul(t1.data(), M[mu].at(p), t2.data(), r);
            smat::mul(t2.data(), uinv.at(p), carrier.at(p), r);
        }
        const EndoField carrier_m = shift_endo(carrier, C.twist, mu, -1);
        for (int p = 0; p < np; ++p) {
            cplx* g = G.at(p);
            // + M S^{*H} / (2h) - carrier(x - e) / (2h) + 1/2 [S, S^{*H}]
            smat::mul(M[mu].at(p), Sadj[mu].at(p), t1.data(), r);
            for (int i = 0; i < rr; ++i) g[i] += sc * (t1[i] - carrier_m.at(p)[i]);
            smat::mul(S[mu].at(p), Sadj[mu].at(p), t1.data(), r);
            smat::mul(Sadj[mu].at(p), S[mu].at(p), t2.data(), r);
            for (int i = 0; i < rr; ++i) g[i] += 0.5 * (t1[i] - t2[i]);
        }
    }
    // R_link = -2 G, projected onto the H-self-adjoint part
    EndoField R = msym(H, G);
    kernels::scal(-2.0, R.a.data(), R.a.size());
    return R;
}

GaugeCheck check_gauge_equivariance(const ConnectionField& C, const MetricField& H,
                                    const EndoField& u) {
    GaugeCheck out;
    const int r = C.r;
    const int np = C.g->npoints();

    const ConnectionField Cg = gauge_act(u, C);
    const MetricField Hg(gauge_act_metric(u, H.values()));
    EndoField uinv(C.g, r);
    for (int p = 0; p < np; ++p) smat::inverse(u.at(p), uinv.at(p), r);
    auto conj_u = [&](const EndoField& x) {
        EndoField t1(C.g, r), t2(C.g, r);
        pw_mul(u, x, t1);
        pw_mul(t1, uinv, t2);
        return t2;
    };

    const FormEndoField M = link_sym(C, H);
    const FormEndoField Mg = link_sym(Cg, Hg);
    double md2 = 0.0;
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const double d = rel_fro_diff(Mg[mu], conj_u(M[mu]));
        md2 += d * d;
    }
    out.m_defect = std::sqrt(md2);

    out.link_energy_defect = std::fabs(link_energy(Cg, Hg) - link_energy(C, H));
    out.link_residual_defect = rel_fro_diff(link_residual(Cg, Hg), conj_u(link_residual(C, H)));

    const Decomposition d0 = decompose(C, H);
    const Decomposition d1 = decompose(Cg, Hg);
    double pd2 = 0.0;
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const double dd = rel_fro_diff(d1.psi[mu], conj_u(d0.psi[mu]));
        pd2 += dd * dd;
    }
    out.psi_defect = std::sqrt(pd2);
    out.residual_defect =
        rel_fro_diff(residual_from(Cg, Hg, d1), conj_u(residual_from(C, H, d0)));
    out.energy_defect = std::fabs(energy(d1, Hg) - energy(d0, H));
    return out;
}

} // namespace hmet
