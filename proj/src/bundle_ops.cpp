#include "hmet/bundle.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "hmet/kernels.hpp"

namespace hmet {

EndoField link_transport(const ConnectionField& C, int mu) {
    EndoField u(C.g, C.r);
    const double h = C.g->spacing(mu);
    for (int p = 0; p < C.g->npoints(); ++p) {
        smat::identity(u.at(p), C.r);
        const cplx* a = C.A[mu].at(p);
        cplx* up = u.at(p);
        for (int i = 0; i < C.r * C.r; ++i) up[i] -= h * a[i];
    }
    return u;
}

SectionField cov_forward(const ConnectionField& C, const SectionField& s, int mu) {
    SectionField sp = shift_section(s, C.twist, mu, +1);
    SectionField out(C.g, C.r);
    const double invh = 1.0 / C.g->spacing(mu);
    const int r = C.r;
    for (int p = 0; p < C.g->npoints(); ++p) {
        const cplx* a = C.A[mu].at(p);
        for (int i = 0; i < r; ++i) {
            cplx acc = (sp.at(p)[i] - s.at(p)[i]) * invh;
            for (int j = 0; j < r; ++j) acc += a[i * r + j] * s.at(p)[j];
            out.at(p)[i] = acc;
        }
    }
    return out;
}

EndoField end_forward(const ConnectionField& C, const EndoField& f, int mu) {
    EndoField fp = shift_endo(f, C.twist, mu, +1);
    EndoField out(C.g, C.r);
    const double invh = 1.0 / C.g->spacing(mu);
    const int r = C.r, rr = r * r;
    for (int p = 0; p < C.g->npoints(); ++p) {
        cplx* o = out.at(p);
        const cplx* fpp = fp.at(p);
        const cplx* fc = f.at(p);
        for (int i = 0; i < rr; ++i) o[i] = (fpp[i] - fc[i]) * invh;
        smat::mul_acc(C.A[mu].at(p), fc, o, r);
        // o -= f(x+e) A
        std::vector<cplx> t(rr);
        smat::mul(fpp, C.A[mu].at(p), t.data(), r);
        for (int i = 0; i < rr; ++i) o[i] -= t[i];
    }
    return out;
}

EndoField curvature(const ConnectionField& C) {
    EndoField out(C.g, C.r);
    if (C.g->dim() == 1) return out;
    const EndoField a1s0 = shift_endo(C.A[1], C.twist, 0, +1); // A_1(x + e_0)
    const EndoField a0s1 = shift_endo(C.A[0], C.twist, 1, +1); // A_0(x + e_1)
    const double ih0 = 1.0 / C.g->spacing(0), ih1 = 1.0 / C.g->spacing(1);
    const int r = C.r, rr = r * r;
    std::vector<cplx> t(rr);
    for (int p = 0; p < C.g->npoints(); ++p) {
        cplx* o = out.at(p);
        for (int i = 0; i < rr; ++i)
            o[i] = (a1s0.at(p)[i] - C.A[1].at(p)[i]) * ih0 -
                   (a0s1.at(p)[i] - C.A[0].at(p)[i]) * ih1;
        smat::mul_acc(a0s1.at(p), C.A[1].at(p), o, r);
        smat::mul(a1s0.at(p), C.A[0].at(p), t.data(), r);
        for (int i = 0; i < rr; ++i) o[i] -= t[i];
    }
    return out;
}

ConnectionField gauge_act(const EndoField& u, const ConnectionField& C) {
    ConnectionField out(C.g, C.r);
    out.twist = C.twist;
    const int r = C.r, rr = r * r;
    EndoField uinv(C.g, r);
    for (int p = 0; p < C.g->npoints(); ++p) smat::inverse(u.at(p), uinv.at(p), r);
    std::vector<cplx> t(rr);
    for (int mu = 0; mu < C.g->dim(); ++mu) {
        const EndoField up = shift_endo(u, C.twist, mu, +1);
        const double invh = 1.0 / C.g->spacing(mu);
        for (int p = 0; p < C.g->npoints(); ++p) {
            // A' = u(x+e) A u^-1 - (u(x+e) - u) u^-1 / h
            cplx* o = out.A[mu].at(p);
            smat::mul(C.A[mu].at(p), uinv.at(p), t.data(), r);
            smat::mul(up.at(p), t.data(), o, r);
            smat::mul(up.at(p), uinv.at(p), t.data(), r);
            for (int i = 0; i < rr; ++i) o[i] -= t[i] * invh;
            for (int i = 0; i < r; ++i) o[i * r + i] += invh;
        }
    }
    return out;
}

EndoField gauge_act_metric(const EndoField& u, const EndoField& k) {
    const int r = k.r, rr = r * r;
    EndoField out(k.g, r);
    std::vector<cplx> uinv(rr), uinva(rr), t(rr);
    for (int p = 0; p < k.g->npoints(); ++p) {
        smat::inverse(u.at(p), uinv.data(), r);
        smat::adjoint(uinv.data(), uinva.data(), r);
        smat::mul(uinva.data(), k.at(p), t.data(), r);
        smat::mul(t.data(), uinv.data(), out.at(p), r);
    }
    return out;
}

SectionField gauge_act_section(const EndoField& u, const SectionField& s) {
    SectionField out(s.g, s.r);
    const int r = s.r;
    for (int p = 0; p < s.g->npoints(); ++p)
        for (int i = 0; i < r; ++i) {
            cplx acc = 0.0;
            for (int j = 0; j < r; ++j) acc += u.at(p)[i * r + j] * s.at(p)[j];
            out.at(p)[i] = acc;
        }
    return out;
}

EndoField madjoint(const MetricField& K, const EndoField& v) {
    const int r = v.r, rr = r * r;
    EndoField out(v.g, r);
    std::vector<cplx> va(rr), t(rr);
    for (int p = 0; p < v.g->npoints(); ++p) {
        smat::adjoint(v.at(p), va.data(), r);
        smat::mul(K.inv_at(p), va.data(), t.data(), r);
        smat::mul(t.data(), K.at(p), out.at(p), r);
    }
    return out;
}

EndoField msym(const MetricField& K, const EndoField& v) {
    EndoField adj = madjoint(K, v);
    EndoField out(v.g, v.r);
    for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] = 0.5 * (v.a[i] + adj.a[i]);
    return out;
}

double msa_defect(const MetricField& K, const EndoField& v) {
    EndoField adj = madjoint(K, v);
    kernels::axpy(-1.0, v.a.data(), adj.a.data(), adj.a.size());
    return fro_l2(adj);
}

namespace {

// W = L^dagger v L^-dagger, the Hermitian face of a K-self-adjoint fiber
void similar_herm(const MetricField& K, const cplx* v, int p, cplx* w, int r) {
    std::vector<cplx> la(r * r), lia(r * r), t(r * r);
    smat::adjoint(K.l_at(p), la.data(), r);
    smat::adjoint(K.linv_at(p), lia.data(), r);
    smat::mul(la.data(), v, t.data(), r);
    smat::mul(t.data(), lia.data(), w, r);
}

} // namespace

EndoField ksa_fn(const MetricField& K, const EndoField& v,
                 const std::function<double(double)>& fn) {
    const int r = v.r, rr = r * r;
    EndoField out(v.g, r);
    std::vector<cplx> w(rr), fw(rr), la(rr), lia(rr), t(rr);
    for (int p = 0; p < v.g->npoints(); ++p) {
        similar_herm(K, v.at(p), p, w.data(), r);
        smat::herm_fn(w.data(), fw.data(), r, fn);
        smat::adjoint(K.l_at(p), la.data(), r);
        smat::adjoint(K.linv_at(p), lia.data(), r);
        smat::mul(lia.data(), fw.data(), t.data(), r);
        smat::mul(t.data(), la.data(), out.at(p), r);
    }
    return out;
}

EndoField ksa_exp(const MetricField& K, const EndoField& v) {
    return ksa_fn(K, v, [](double x) { return std::exp(x); });
}

EndoField ksa_log(const MetricField& K, const EndoField& f) {
    return ksa_fn(K, f, [](double x) {
        if (x <= 0.0) throw Error("ksa_log: nonpositive eigenvalue");
        return std::log(x);
    });
}

EndoField ksa_sqrt(const MetricField& K, const EndoField& f) {
    return ksa_fn(K, f, [](double x) {
        if (x < 0.0) throw Error("ksa_sqrt: negative eigenvalue");
        return std::sqrt(x);
    });
}

void ksa_eigs(const MetricField& K, const EndoField& v, int p, double* lam, cplx* P, cplx* Q) {
    const int r = v.r, rr = r * r;
    std::vector<cplx> w(rr), u(rr), la(rr), lia(rr);
    similar_herm(K, v.at(p), p, w.data(), r);
    smat::eig_herm(w.data(), lam, (P || Q) ? u.data() : nullptr, r);
    if (P) {
        smat::adjoint(K.linv_at(p), lia.data(), r);
        smat::mul(lia.data(), u.data(), P, r);
    }
    if (Q) {
        std::vector<cplx> ua(rr);
        smat::adjoint(u.data(), ua.data(), r);
        smat::adjoint(K.l_at(p), la.data(), r);
        smat::mul(ua.data(), la.data(), Q, r);
    }
}

DexpCache make_dexp_cache(const MetricField& K, const EndoField& v) {
    DexpCache c;
    c.r = v.r;
    c.np = v.g->npoints();
    c.lam.resize(static_cast<std::size_t>(c.np) * c.r);
    c.P.resize(static_cast<std::size_t>(c.np) * c.r * c.r);
    c.Q.resize(static_cast<std::size_t>(c.np) * c.r * c.r);
    for (int p = 0; p < c.np; ++p)
        ksa_eigs(K, v, p, c.lam.data() + static_cast<std::size_t>(p) * c.r,
                 c.P.data() + static_cast<std::size_t>(p) * c.r * c.r,
                 c.Q.data() + static_cast<std::size_t>(p) * c.r * c.r);
    return c;
}

void cache_exp(const DexpCache& c, int p, double scale, cplx* out) {
    const int r = c.r;
    std::vector<cplx> t(r * r);
    const double* lam = c.lam_at(p);
    const cplx* P = c.p_at(p);
    const cplx* Q = c.q_at(p);
    for (int i = 0; i < r; ++i) {
        const double e = std::exp(scale * lam[i]);
        for (int j = 0; j < r; ++j) t[i * r + j] = e * Q[i * r + j];
    }
    smat::mul(P, t.data(), out, r);
}

void dexp_log_apply(const DexpCache& c, int p, const cplx* w, cplx* m) {
    const int r = c.r;
    std::vector<cplx> g(r * r), t(r * r);
    const double* lam = c.lam_at(p);
    const cplx* P = c.p_at(p);
    const cplx* Q = c.q_at(p);
    smat::mul(Q, w, t.data(), r);
    smat::mul(t.data(), P, g.data(), r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            const double d = lam[i] - lam[j];
            const double fac = (std::fabs(d) < 1e-300) ? 1.0 : -std::expm1(-d) / d;
            g[i * r + j] *= fac;
        }
    smat::mul(P, g.data(), t.data(), r);
    smat::mul(t.data(), Q, m, r);
}

void dlog_apply(const DexpCache& c, int p, const cplx* m, cplx* w) {
    const int r = c.r;
    std::vector<cplx> g(r * r), t(r * r);
    const double* lam = c.lam_at(p);
    const cplx* P = c.p_at(p);
    const cplx* Q = c.q_at(p);
    smat::mul(Q, m, t.data(), r);
    smat::mul(t.data(), P, g.data(), r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            const double d = lam[i] - lam[j];
            const double fac = (std::fabs(d) < 1e-300) ? 1.0 : -std::expm1(-d) / d;
            g[i * r + j] /= fac;
        }
    smat::mul(P, g.data(), t.data(), r);
    smat::mul(t.data(), Q, w, r);
}

std::vector<cplx> holonomy(const ConnectionField& C, int mu, int transverse) {
    const int r = C.r, rr = r * r;
    const int n = C.g->size(mu);
    std::vector<cplx> m(rr), t(rr), u(rr);
    smat::identity(m.data(), r);
    const double h = C.g->spacing(mu);
    for (int i = 0; i < n; ++i) {
        const int p = (mu == 0) ? C.g->index(i, transverse) : C.g->index(transverse, i);
        const cplx* a = C.A[mu].at(p);
        for (int k = 0; k < rr; ++k) u[k] = -h * a[k];
        for (int k = 0; k < r; ++k) u[k * r + k] += 1.0;
        smat::mul(u.data(), m.data(), t.data(), r);
        m = t;
    }
    if (C.twist.nontrivial[mu]) {
        smat::mul(C.twist.inv(mu), m.data(), t.data(), r);
        m = t;
    }
    return m;
}

ParallelBasis parallel_endomorphisms(const ConnectionField& C, double tol) {
    const int r = C.r, rr = r * r;
    const int dim = C.g->dim();

    // commutant of the axis monodromies, by SVD null space of stacked
    // Sylvester operators M X - X M on row-major vectorized X
    std::vector<std::vector<cplx>> gens;
    for (int mu = 0; mu < dim; ++mu) gens.push_back(holonomy(C, mu, 0));

    Eigen::MatrixXcd S(static_cast<int>(gens.size()) * rr, rr);
    S.setZero();
    for (std::size_t gidx = 0; gidx < gens.size(); ++gidx) {
        const cplx* M = gens[gidx].data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) {
                const int row = static_cast<int>(gidx) * rr + i * r + j;
                // (M X)_{ij} = sum_k M_{ik} X_{kj};  (X M)_{ij} = sum_k X_{ik} M_{kj}
                for (int k = 0; k < r; ++k) {
                    S(row, k * r + j) += M[i * r + k];
                    S(row, i * r + k) -= M[k * r + j];
                }
            }
    }
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(S, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv(0) : 0.0;
    const double ns_tol = 1e-10 * std::max(1.0, smax);

    double amax = 0.0;
    for (int mu = 0; mu < dim; ++mu) amax = std::max(amax, fro_linf(C.A[mu]));

    std::vector<EndoField> links;
    std::vector<EndoField> links_inv;
    for (int mu = 0; mu < dim; ++mu) {
        links.push_back(link_transport(C, mu));
        EndoField li(C.g, r);
        for (int p = 0; p < C.g->npoints(); ++p) smat::inverse(links[mu].at(p), li.at(p), r);
        links_inv.push_back(std::move(li));
    }

    ParallelBasis out;
    const int ncand = static_cast<int>(sv.size());
    for (int c = 0; c < rr; ++c) {
        if (c < ncand && sv(c) > ns_tol) continue;
        EndoField f(C.g, r);
        for (int i = 0; i < rr; ++i) f.at(0)[i] = svd.matrixV()(i, c);

        // propagate f(x + e_mu) = U f U^-1 outward from the base point,
        // staying inside the chart so no seam conjugation is needed
        auto step = [&](int pfrom, int pto, int mu) {
            std::vector<cplx> t(rr);
            smat::mul(links[mu].at(pfrom), f.at(pfrom), t.data(), r);
            smat::mul(t.data(), links_inv[mu].at(pfrom), f.at(pto), r);
        };
        if (dim == 1) {
            for (int i = 0; i + 1 < C.g->size(0); ++i) step(i, i + 1, 0);
        } else {
            for (int i1 = 0; i1 + 1 < C.g->size(1); ++i1)
                step(C.g->index(0, i1), C.g->index(0, i1 + 1), 1);
            for (int i0 = 0; i0 + 1 < C.g->size(0); ++i0)
                for (int i1 = 0; i1 < C.g->size(1); ++i1)
                    step(C.g->index(i0, i1), C.g->index(i0 + 1, i1), 0);
        }

        double defect2 = 0.0;
        for (int mu = 0; mu < dim; ++mu) {
            const double d = fro_l2(end_forward(C, f, mu));
            defect2 += d * d;
        }
        const double defect = std::sqrt(defect2);
        const double scale = fro_l2(f) * (1.0 + amax);
        if (defect > tol * std::max(scale, 1e-300)) continue;

        // a genuinely parallel f has constant spectrum, so tr f^k must not
        // move across the grid; guard against accepting a drifting candidate
        bool constant_traces = true;
        {
            const int np = C.g->npoints();
            std::vector<cplx> fp(rr), t(rr);
            for (int k = 1; k <= r && constant_traces; ++k) {
                cplx ref = 0.0;
                double pscale = 0.0, drift = 0.0;
                for (int p = 0; p < np; ++p) {
                    if (k == 1) {
                        std::copy(f.at(p), f.at(p) + rr, t.data());
                    } else {
                        std::vector<cplx> prev(rr);
                        std::copy(f.at(p), f.at(p) + rr, prev.data());
                        for (int j = 1; j < k; ++j) {
                            smat::mul(prev.data(), f.at(p), t.data(), r);
                            prev.swap(t);
                        }
                        prev.swap(t);
                    }
                    const cplx trv = smat::trace(t.data(), r);
                    pscale = std::max(pscale, smat::fro_norm(t.data(), r));
                    if (p == 0) ref = trv;
                    drift = std::max(drift, std::abs(trv - ref));
                }
                if (drift > 1e-8 * std::max(1.0, std::sqrt(static_cast<double>(r)) * pscale))
                    constant_traces = false;
            }
        }
        if (!constant_traces) continue;

        out.basis.push_back(std::move(f));
        out.defects.push_back(defect);
    }
    return out;
}

} // namespace hmet
