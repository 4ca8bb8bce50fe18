#include "hmet/continuity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "hmet/kernels.hpp"

namespace hmet {

namespace {

void pw_mul(const EndoField& x, const EndoField& y, EndoField& out) {
    for (int p = 0; p < x.g->npoints(); ++p) smat::mul(x.at(p), y.at(p), out.at(p), x.r);
}

// L2 norm induced by K on K-self-adjoint fields
double ksa_l2(const MetricField& K, const EndoField& v) {
    const EndoField adj = madjoint(K, v);
    const int r = v.r;
    std::vector<cplx> t(r * r);
    double s = 0.0;
    for (int p = 0; p < v.g->npoints(); ++p) {
        smat::mul(v.at(p), adj.at(p), t.data(), r);
        s += smat::trace(t.data(), r).real();
    }
    return std::sqrt(std::max(0.0, v.g->weight() * s));
}

// v -= (integral tr v / (r vol)) I; the residual is invariant under scalar
// rescalings of f, so this is a free normalization
void trace_project(EndoField& v) {
    const int r = v.r;
    double s = 0.0;
    for (int p = 0; p < v.g->npoints(); ++p) s += smat::trace(v.at(p), r).real();
    const double mean = s / (static_cast<double>(v.g->npoints()) * r);
    for (int p = 0; p < v.g->npoints(); ++p)
        for (int i = 0; i < r; ++i) v.at(p)[i * r + i] -= mean;
}

bool all_finite(const cplx* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(a[i].real()) || !std::isfinite(a[i].imag())) return false;
    return true;
}

// Exact solver for (1/2 laplacian - sigma), the principal part of the stage
// Jacobian, applied entrywise over the fiber components. Periodic tridiagonal
// in 1-D; discrete Fourier diagonalization per axis in 2-D (plain matrix DFT,
// grids are small).
class ShiftedLapSolver {
public:
    ShiftedLapSolver(GridPtr g, int r, double sigma) : g_(std::move(g)), r_(r), sigma_(sigma) {
        if (g_->dim() == 2) {
            build_dft(g_->size(0), w0_);
            build_dft(g_->size(1), w1_);
            lam0_ = modes(0);
            lam1_ = modes(1);
        }
    }

    void apply(const cplx* in, cplx* out) const {
        const int rr = r_ * r_;
        const int np = g_->npoints();
        std::vector<cplx> slice(np), tmp(np);
        for (int e = 0; e < rr; ++e) {
            for (int p = 0; p < np; ++p) slice[p] = in[static_cast<std::size_t>(p) * rr + e];
            if (g_->dim() == 1) {
                const double h = g_->spacing(0);
                const double a = -1.0 / (h * h) - sigma_;
                const double b = 0.5 / (h * h);
                solve_periodic_tridiag(a, b, slice.data(), tmp.data(), np);
            } else {
                solve2d(slice.data(), tmp.data());
            }
            for (int p = 0; p < np; ++p) out[static_cast<std::size_t>(p) * rr + e] = tmp[p];
        }
    }

private:
    static void build_dft(int n, std::vector<cplx>& w) {
        w.resize(static_cast<std::size_t>(n) * n);
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                const long long jk = (1LL * j * k) % n;
                const double ph = -2.0 * M_PI * static_cast<double>(jk) / n;
                w[static_cast<std::size_t>(j) * n + k] = {std::cos(ph), std::sin(ph)};
            }
    }

    std::vector<double> modes(int mu) const {
        const int n = g_->size(mu);
        const double h = g_->spacing(mu);
        std::vector<double> lam(n);
        for (int k = 0; k < n; ++k)
            lam[k] = 2.0 * (std::cos(2.0 * M_PI * k / n) - 1.0) / (h * h);
        return lam;
    }

    void solve2d(const cplx* in, cplx* out) const {
        const int n0 = g_->size(0), n1 = g_->size(1);
        std::vector<cplx> a(in, in + n0 * n1), b(static_cast<std::size_t>(n0) * n1);
        // forward transform along axis 1 then axis 0
        for (int i0 = 0; i0 < n0; ++i0)
            for (int k = 0; k < n1; ++k) {
                cplx s = 0.0;
                for (int j = 0; j < n1; ++j)
                    s += w1_[static_cast<std::size_t>(j) * n1 + k] * a[i0 * n1 + j];
                b[i0 * n1 + k] = s;
            }
        for (int k1 = 0; k1 < n1; ++k1)
            for (int k = 0; k < n0; ++k) {
                cplx s = 0.0;
                for (int j = 0; j < n0; ++j)
                    s += w0_[static_cast<std::size_t>(j) * n0 + k] * b[j * n1 + k1];
                a[k * n1 + k1] = s;
            }
        for (int k0 = 0; k0 < n0; ++k0)
            for (int k1 = 0; k1 < n1; ++k1)
                a[k0 * n1 + k1] /= 0.5 * (lam0_[k0] + lam1_[k1]) - sigma_;
        // inverse transforms
        for (int k1 = 0; k1 < n1; ++k1)
            for (int k = 0; k < n0; ++k) {
                cplx s = 0.0;
                for (int j = 0; j < n0; ++j)
                    s += std::conj(w0_[static_cast<std::size_t>(j) * n0 + k]) * a[j * n1 + k1];
                b[k * n1 + k1] = s / static_cast<double>(n0);
            }
        for (int i0 = 0; i0 < n0; ++i0)
            for (int k = 0; k < n1; ++k) {
                cplx s = 0.0;
                for (int j = 0; j < n1; ++j)
                    s += std::conj(w1_[static_cast<std::size_t>(j) * n1 + k]) * b[i0 * n1 + j];
                out[i0 * n1 + k] = s / static_cast<double>(n1);
            }
    }

    GridPtr g_;
    int r_;
    double sigma_;
    std::vector<cplx> w0_, w1_;
    std::vector<double> lam0_, lam1_;
};

// State of one continuation stage rebuilt at every Newton iterate.
struct StageState {
    const ConnectionField* C = nullptr;
    const MetricField* K = nullptr;
    double eps = 0.0;

    EndoField v;
    DexpCache dc;
    std::optional<MetricField> H;
    Decomposition d;
    EndoField R, N;
    double nnorm = 0.0;
    double lam_min = 0.0, lam_max = 0.0;

    void build(const EndoField& vin) {
        v = vin;
        dc = make_dexp_cache(*K, v);
        const int r = v.r;
        lam_min = 1e300;
        lam_max = -1e300;
        for (int p = 0; p < dc.np; ++p)
            for (int i = 0; i < r; ++i) {
                lam_min = std::min(lam_min, dc.lam_at(p)[i]);
                lam_max = std::max(lam_max, dc.lam_at(p)[i]);
            }
        if (lam_max > 200.0 || lam_min < -200.0)
            throw Error("stage: log f eigenvalue out of range");
        EndoField hv(v.g, r);
        std::vector<cplx> f(r * r);
        for (int p = 0; p < dc.np; ++p) {
            cache_exp(dc, p, 1.0, f.data());
            smat::mul(K->at(p), f.data(), hv.at(p), r);
        }
        if (!all_finite(hv.a.data(), hv.a.size())) throw Error("stage: metric overflow");
        H.emplace(std::move(hv), 1e-10);
        d = decompose(*C, *H);
        R = residual_from(*C, *H, d);
        N = R;
        kernels::axpy(-eps, v.a.data(), N.a.data(), N.a.size());
        nnorm = fro_l2(N);
    }

    // directional derivative of N at the current iterate
    void jacobian_apply(const cplx* in, cplx* out) const {
        const auto& g = C->g;
        const int r = C->r, rr = r * r, np = g->npoints();
        EndoField m(g, r);
        for (int p = 0; p < np; ++p)
            dexp_log_apply(dc, p, in + static_cast<std::size_t>(p) * rr, m.at(p));
        dresidual_from_m(m, out);
        const std::size_t n = m.a.size();
        for (std::size_t i = 0; i < n; ++i) out[i] -= eps * in[i];
    }

    // derivative of N for a right-multiplicative update H -> H exp(t s).
    // The perturbation is handed over as s = H^-1 dH directly, so no
    // exponential kernel enters the residual part; only the eps log(K^-1 H)
    // term pulls the direction back through the inverse kernel.
    void jacobian_mult(const cplx* in, cplx* out) const {
        const int r = C->r, rr = r * r, np = C->g->npoints();
        EndoField m(C->g, r);
        m.a.assign(in, in + m.a.size());
        dresidual_from_m(m, out);
        if (eps != 0.0) {
            std::vector<cplx> w(rr);
            for (int p = 0; p < np; ++p) {
                dlog_apply(dc, p, in + static_cast<std::size_t>(p) * rr, w.data());
                cplx* o = out + static_cast<std::size_t>(p) * rr;
                for (int i = 0; i < rr; ++i) o[i] -= eps * w[i];
            }
        }
    }

    // chain rule for the residual under a metric variation with m = H^-1 dH
    void dresidual_from_m(const EndoField& m, cplx* out) const {
        const auto& g = C->g;
        const int r = C->r, rr = r * r, np = g->npoints();
        EndoField dR(g, r);
        std::vector<cplx> t1(rr), t2(rr);
        for (int mu = 0; mu < g->dim(); ++mu) {
            const EndoField& psi = d.psi[mu];
            const EndoField& aH = d.aH[mu];
            const EndoField& P = d.pfld[mu];
            const EndoField mp = shift_endo(m, C->twist, mu, +1);
            const double invh = 1.0 / g->spacing(mu);

            EndoField dAH(g, r), dP(g, r), dpsi(g, r);
            for (int p = 0; p < np; ++p) {
                smat::mul(aH.at(p), m.at(p), t1.data(), r);
                smat::mul(m.at(p), aH.at(p), t2.data(), r);
                cplx* o = dAH.at(p);
                for (int i = 0; i < rr; ++i) o[i] = t1[i] - t2[i];
                // dP = D+ m + P m(+e) - m P
                cplx* q = dP.at(p);
                for (int i = 0; i < rr; ++i) q[i] = (mp.at(p)[i] - m.at(p)[i]) * invh;
                smat::mul(P.at(p), mp.at(p), t1.data(), r);
                smat::mul(m.at(p), P.at(p), t2.data(), r);
                for (int i = 0; i < rr; ++i) q[i] += t1[i] - t2[i];
                cplx* s = dpsi.at(p);
                for (int i = 0; i < rr; ++i) s[i] = 0.5 * (o[i] - q[i]);
            }

            const EndoField dpsim = shift_endo(dpsi, C->twist, mu, -1);
            EndoField carrier(g, r);
            for (int p = 0; p < np; ++p) {
                smat::mul(dpsi.at(p), P.at(p), t1.data(), r);
                smat::mul(psi.at(p), dP.at(p), t2.data(), r);
                cplx* c = carrier.at(p);
                for (int i = 0; i < rr; ++i) c[i] = t1[i] + t2[i];
            }
            const EndoField carrier_m = shift_endo(carrier, C->twist, mu, -1);

            for (int p = 0; p < np; ++p) {
                cplx* o = dR.at(p);
                const cplx* s = dpsi.at(p);
                const cplx* sm = dpsim.at(p);
                // D- dpsi
                for (int i = 0; i < rr; ++i) t1[i] = (s[i] - sm[i]) * invh;
                // + [dpsi, aH] + [psi, dAH]
                smat::mul(s, aH.at(p), t2.data(), r);
                for (int i = 0; i < rr; ++i) t1[i] += t2[i];
                smat::mul(aH.at(p), s, t2.data(), r);
                for (int i = 0; i < rr; ++i) t1[i] -= t2[i];
                smat::mul(psi.at(p), dAH.at(p), t2.data(), r);
                for (int i = 0; i < rr; ++i) t1[i] += t2[i];
                smat::mul(dAH.at(p), psi.at(p), t2.data(), r);
                for (int i = 0; i < rr; ++i) t1[i] -= t2[i];
                // + dP psi + P dpsi
                smat::mul(dP.at(p), psi.at(p), t2.data(), r);
                for (int i = 0; i < rr; ++i) t1[i] += t2[i];
                smat::mul(P.at(p), s, t2.data(), r);
                for (int i = 0; i < rr; ++i) t1[i] += t2[i];
                // - (dpsi P + psi dP)(x - e)
                for (int i = 0; i < rr; ++i) o[i] -= t1[i] - carrier_m.at(p)[i];
            }
        }
        std::copy(dR.a.begin(), dR.a.end(), out);
    }
};

} // namespace

EndoField stage_map(const ConnectionField& C, const MetricField& K, double eps,
                    const EndoField& v) {
    StageState st;
    st.C = &C;
    st.K = &K;
    st.eps = eps;
    st.build(v);
    return st.N;
}

EndoField stage_map_dir(const ConnectionField& C, const MetricField& K, double eps,
                        const EndoField& v, const EndoField& dv) {
    StageState st;
    st.C = &C;
    st.K = &K;
    st.eps = eps;
    st.build(v);
    EndoField out(C.g, C.r);
    st.jacobian_apply(dv.a.data(), out.a.data());
    return out;
}

namespace {

struct StageOutcome {
    bool ok = false;
    int iters = 0;
    double gmres_rel = 0.0; // worst inner relative residual seen
    int gmres_it = 0;
    double ls_slope_fd = 0.0;  // measured slope of |F|^2 at a failed search
    double ls_slope_lin = 0.0; // slope the linear model predicted
    double damping = 0.0;      // largest Levenberg shift the stage needed
};

StageOutcome newton_stage(StageState& st, const SolverConfig& cfg) {
    StageOutcome out;
    const auto& g = st.C->g;
    const std::size_t n = st.v.a.size();
    const double sigma = std::max(st.eps, 1e-8);
    const ShiftedLapSolver pre(g, st.C->r, sigma);
    const int rr = st.C->r * st.C->r;

    // Levenberg shift carried across iterations. Far from the limit the
    // linearization can be nearly singular along solution-family directions
    // (their eps damping evaporates when the two self-adjoint structures
    // tilt apart), which produces astronomically long steps; the shift puts
    // a floor under those modes and is driven back to zero once plain steps
    // are accepted again, restoring the quadratic tail.
    // beyond ~1e2 the damped direction is a pure gradient step scaled 1/lam
    // and delivers no measurable decrease, so there is no point escalating
    double lam = 0.0;
    const double lam_max = 1e2;

    for (int it = 0; it < cfg.newton_maxit; ++it) {
        if (st.nnorm <= cfg.newton_tol) {
            out.ok = true;
            out.iters = it;
            return out;
        }

        // The Newton step is taken in the geometry the equation lives in:
        // a right-multiplicative update H <- H exp(s) with s self-adjoint
        // for H, written in Cholesky coordinates sc = L^dag s L^-dag with
        // H = L L^dag. In these coordinates the metric pairing is the plain
        // Frobenius inner product, self-adjointness is literal hermiticity,
        // and the linearized operator keeps the conditioning of the actual
        // Hessian (roughly Laplacian over eps) instead of picking up
        // exponential factors from a mismatched ambient inner product.
        const MetricField hbase = *st.H;
        EndoField ltf(g, st.C->r), litf(g, st.C->r);
        for (int p = 0; p < g->npoints(); ++p) {
            smat::adjoint(hbase.chol().at(p), ltf.at(p), st.C->r);
            smat::adjoint(hbase.chol_inv().at(p), litf.at(p), st.C->r);
        }
        std::vector<cplx> t1(rr);
        auto to_coord = [&](const EndoField& X) {
            EndoField o(g, st.C->r);
            for (int p = 0; p < g->npoints(); ++p) {
                smat::mul(ltf.at(p), X.at(p), t1.data(), st.C->r);
                smat::mul(t1.data(), litf.at(p), o.at(p), st.C->r);
            }
            return o;
        };
        auto from_coord = [&](const EndoField& Xc) {
            EndoField o(g, st.C->r);
            for (int p = 0; p < g->npoints(); ++p) {
                smat::mul(litf.at(p), Xc.at(p), t1.data(), st.C->r);
                smat::mul(t1.data(), ltf.at(p), o.at(p), st.C->r);
            }
            return o;
        };
        auto hermit = [&](EndoField& X) {
            const int r = st.C->r;
            for (int p = 0; p < g->npoints(); ++p) {
                cplx* xp = X.at(p);
                for (int i = 0; i < r; ++i) {
                    xp[i * r + i] = xp[i * r + i].real();
                    for (int j = i + 1; j < r; ++j) {
                        const cplx a = 0.5 * (xp[i * r + j] + std::conj(xp[j * r + i]));
                        xp[i * r + j] = a;
                        xp[j * r + i] = std::conj(a);
                    }
                }
            }
        };

        EndoField nc = to_coord(st.N);
        hermit(nc);
        std::vector<cplx> rhs(n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = -nc.a[i];

        LinOp jraw = [&](const cplx* in, cplx* o) {
            EndoField sc(g, st.C->r);
            sc.a.assign(in, in + n);
            hermit(sc);
            const EndoField s = from_coord(sc);
            st.jacobian_mult(s.a.data(), o);
            EndoField jo(g, st.C->r);
            jo.a.assign(o, o + n);
            jo = to_coord(jo);
            hermit(jo);
            std::copy(jo.a.begin(), jo.a.end(), o);
        };
        // the operator is symmetric in this frame but indefinite near the
        // limit: next to a fold of the solution family a band of soft modes
        // crosses zero, and a one-sided Levenberg shift turns those modes
        // into ascent directions. The regularized step used instead is
        // s = -J (J^2 + lam^2)^-1 nc, whose slope is a strict sum of
        // -mu^2/(mu^2+lam^2) terms whatever the signs of the eigenvalues mu,
        // and which tends to the plain Newton step as lam -> 0. Rather than
        // squaring the system (which squares its conditioning), s is taken
        // as -Re y from the complex-shifted solve (J - i lam) y = nc; the
        // shifted spectrum mu - i lam stays a distance lam from zero. The
        // complexified action splits z = a + i b over the frame's real
        // (hermitian) subspace and applies the real-linear operator to both
        LinOp jc = [&](const cplx* in, cplx* o) {
            const int r = st.C->r;
            EndoField za(g, r), zb(g, r);
            for (int p = 0; p < g->npoints(); ++p) {
                const cplx* zp = in + static_cast<std::size_t>(p) * rr;
                cplx* ap = za.at(p);
                cplx* bp = zb.at(p);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < r; ++j) {
                        const cplx zij = zp[i * r + j];
                        const cplx zji = std::conj(zp[j * r + i]);
                        ap[i * r + j] = 0.5 * (zij + zji);
                        bp[i * r + j] = cplx(0.0, -0.5) * (zij - zji);
                    }
            }
            std::vector<cplx> ja(n), jb(n);
            jraw(za.a.data(), ja.data());
            jraw(zb.a.data(), jb.data());
            for (std::size_t i = 0; i < n; ++i)
                o[i] = ja[i] + cplx(0.0, 1.0) * jb[i] - cplx(0.0, lam) * in[i];
        };
        GmresOpts go;
        go.restart = cfg.gmres_restart;
        go.maxiter = cfg.gmres_maxit;
        go.rtol = cfg.gmres_rtol;
        go.real_space = true;
        GmresOpts go_c = go;
        go_c.real_space = false;

        // merit: residual norm in the frozen coordinates of this iterate.
        // The inner solve is exact in these coordinates, so the slope along
        // the step is known there; the plain norm differs from it by the
        // non-isometric change of frame and a step that descends in
        // coordinates can look like ascent in the plain norm near the limit
        const double wgt = g->weight();
        auto coord_merit = [&](const EndoField& N) {
            EndoField t = to_coord(N);
            hermit(t);
            return wgt * kernels::norm2sq(t.a.data(), t.a.size());
        };
        const double phi0 = wgt * kernels::norm2sq(nc.a.data(), nc.a.size());
        const EndoField vbase = st.v;
        const EndoField fbase = mul_fields(st.K->inverse(), hbase.values());
        // near the limit legitimate stage steps move log f by order one per
        // point, so only flag proposals well beyond that
        const double cap = 4.0;

        bool stepped = false;
        for (int attempt = 0; attempt < 8 && !stepped; ++attempt) {
            // the preconditioner shift has to follow the damping, otherwise
            // a damped system is solved through a wildly mismatched inverse
            std::optional<ShiftedLapSolver> pre_l;
            if (lam > 0.0) pre_l.emplace(g, st.C->r, std::sqrt(sigma * sigma + lam * lam));
            const ShiftedLapSolver& prec = pre_l ? *pre_l : pre;
            LinOp pop = [&](const cplx* in, cplx* o) { prec.apply(in, o); };
            std::vector<cplx> x(n, 0.0);
            GmresResult gr;
            if (lam > 0.0) {
                gr = gmres(jc, nc.a.data(), x.data(), n, go_c, &pop);
                for (std::size_t i = 0; i < n; ++i) x[i] = -x[i];
            } else {
                gr = gmres(jraw, rhs.data(), x.data(), n, go, &pop);
            }
            out.gmres_rel = std::max(out.gmres_rel, gr.relres);
            out.gmres_it = std::max(out.gmres_it, gr.iterations);
            if (!all_finite(x.data(), n)) return out;

            EndoField sc(g, st.C->r);
            sc.a.assign(x.begin(), x.end());
            hermit(sc);
            EndoField ds = from_coord(sc);
            if (st.eps == 0.0) trace_project(ds);

            // geodesic step length per point; one unit already changes the
            // metric by a factor e, so larger proposals signal a nearly
            // singular system rather than genuine progress
            double smax = 0.0;
            for (int p = 0; p < g->npoints(); ++p) {
                double fp = 0.0;
                const cplx* sp = sc.at(p);
                for (int i = 0; i < rr; ++i) fp += std::norm(sp[i]);
                smax = std::max(smax, fp);
            }
            smax = std::sqrt(smax);
            const double scale = smax > cap ? cap / smax : 1.0;
            if (scale < 1.0) kernels::scal(scale, ds.a.data(), ds.a.size());

            // the merit slope along the step, computed directly; for the
            // squared system it is nonpositive by construction, and the
            // sufficient-decrease test must demand a fraction of this value,
            // not of phi0, because heavy damping shrinks it legitimately
            std::vector<cplx> js(n);
            jraw(x.data(), js.data());
            cplx ndot = 0.0;
            for (std::size_t i = 0; i < n; ++i) ndot += std::conj(nc.a[i]) * js[i];
            double slope0 = scale * 2.0 * wgt * ndot.real();
            slope0 = std::min(slope0, -1e-12 * phi0 * scale);
            auto stepped_v = [&](double t) {
                EndoField sfld = ds;
                kernels::scal(t, sfld.a.data(), sfld.a.size());
                return ksa_log(*st.K, mul_fields(fbase, ksa_exp(hbase, sfld)));
            };
            double alpha = 1.0;
            bool accepted = false;
            double phi_acc = phi0;
            for (int bt = 0; bt < 24; ++bt) {
                double phia = -1.0;
                try {
                    st.build(stepped_v(alpha));
                    phia = coord_merit(st.N);
                    if (std::getenv("HMET_DEBUG_LS"))
                        std::fprintf(stderr, "    bt %d alpha %.3e dphi %.6e need %.6e\n",
                                     bt, alpha, phia - phi0, 1e-4 * alpha * slope0);
                    if (phia <= phi0 + 1e-4 * alpha * slope0) {
                        accepted = true;
                        phi_acc = phia;
                        break;
                    }
                } catch (const Error&) {
                    // candidate left the admissible region; shrink hard
                    if (std::getenv("HMET_DEBUG_LS"))
                        std::fprintf(stderr, "    bt %d alpha %.3e threw\n", bt, alpha);
                }
                if (phia >= 0.0) {
                    // fit a quadratic through phi0, the initial slope and the
                    // failed value; plain halving wastes most of the admitted
                    // range when the basin boundary is not a power of two
                    double denom = phia - phi0 - slope0 * alpha;
                    double cand = denom > 0.0 ? -0.5 * slope0 * alpha * alpha / denom
                                              : 0.5 * alpha;
                    alpha = std::min(std::max(cand, 0.1 * alpha), 0.5 * alpha);
                } else {
                    alpha *= 0.5;
                }
                if (alpha < 1e-7) break;
            }
            if (std::getenv("HMET_DEBUG_STAGE"))
                std::fprintf(stderr,
                             "  it %d att %d lam %.3e smax %.3e alpha %.3e acc %d res %.6e phi0 %.6e "
                             "slope %.3e dphi %.3e\n",
                             it, attempt, lam, smax, alpha, accepted ? 1 : 0, st.nnorm, phi0,
                             slope0, phi0 - phi_acc);
            if (accepted) {
                stepped = true;
                // drive the damping by step quality, not by the bare
                // accept/reject bit, or the stage settles into a clamped
                // limit cycle of huge proposals taken in tiny fractions.
                // rho compares the decrease achieved against the linear
                // model; a trusted full step relaxes the damping, a poor or
                // heavily cut one tightens it gently so the shift stays in
                // the band where steps are well sized
                const double pred = -slope0 * alpha;
                const double rho = pred > 0.0 ? (phi0 - phi_acc) / pred : 1.0;
                if (alpha >= 1.0 - 1e-12 && rho >= 0.75 && smax <= cap) {
                    lam *= 0.5;
                    if (lam < 1e-12) lam = 0.0;
                } else if (alpha < 0.25 || rho < 0.25) {
                    lam = std::max(lam * 2.0, 0.25 * sigma);
                    out.damping = std::max(out.damping, lam);
                }
                break;
            }

            // record the finite-difference slope of the merit along the step
            // versus the value the linear model predicts; a sign mismatch
            // marks a direction bug rather than a short basin
            try {
                const double dsn = std::sqrt(kernels::norm2sq(ds.a.data(), ds.a.size()));
                if (dsn > 0.0) {
                    st.build(stepped_v(1e-7 / dsn));
                    out.ls_slope_fd = (coord_merit(st.N) - phi0) / (1e-7 / dsn);
                    out.ls_slope_lin = slope0;
                }
            } catch (const Error&) {
            }
            st.build(vbase);
            if (lam >= lam_max) break;
            lam = std::max(lam * 4.0, 0.25 * sigma);
            out.damping = std::max(out.damping, lam);
        }
        if (!stepped) {
            try {
                st.build(vbase);
            } catch (const Error&) {
            }
            out.iters = it;
            return out;
        }
    }
    out.ok = st.nnorm <= cfg.newton_tol;
    out.iters = cfg.newton_maxit;
    return out;
}

StageOutcome flow_stage(StageState& st, const SolverConfig& cfg) {
    StageOutcome out;
    const auto& g = st.C->g;
    double hmin = g->spacing(0);
    if (g->dim() == 2) hmin = std::min(hmin, g->spacing(1));
    const double eta0 = cfg.flow_eta > 0.0 ? cfg.flow_eta : 0.5 * hmin * hmin;
    const int r = st.C->r;

    auto merit = [&](const StageState& s) {
        double tv2 = 0.0;
        std::vector<cplx> t(r * r);
        for (int p = 0; p < g->npoints(); ++p) {
            smat::mul(s.v.at(p), s.v.at(p), t.data(), r);
            tv2 += smat::trace(t.data(), r).real();
        }
        tv2 *= g->weight();
        return energy(s.d, *s.H) + 0.25 * s.eps * tv2;
    };

    for (int step = 0; step < cfg.flow_maxsteps; ++step) {
        if (st.nnorm <= cfg.flow_tol) {
            out.ok = true;
            out.iters = step;
            return out;
        }
        const double m0 = merit(st);
        EndoField s = msym(*st.H, st.N);
        EndoField f(g, r);
        for (int p = 0; p < g->npoints(); ++p) cache_exp(st.dc, p, 1.0, f.at(p));
        EndoField vbase = st.v;

        double eta = eta0;
        bool accepted = false;
        for (int bt = 0; bt < 10; ++bt) {
            try {
                const EndoField e = ksa_fn(*st.H, s, [eta](double x) { return std::exp(eta * x); });
                EndoField f2(g, r);
                pw_mul(f, e, f2);
                const EndoField v2 = ksa_log(*st.K, f2);
                st.build(v2);
                if (merit(st) <= m0) {
                    accepted = true;
                    break;
                }
            } catch (const Error&) {
            }
            eta *= 0.5;
        }
        if (!accepted) {
            try {
                st.build(vbase);
            } catch (const Error&) {
            }
            out.iters = step;
            return out;
        }
    }
    out.ok = st.nnorm <= cfg.flow_tol;
    out.iters = cfg.flow_maxsteps;
    return out;
}

StageRecord record_from(const StageState& st, const StageOutcome& so) {
    StageRecord rec;
    rec.eps = st.eps;
    rec.iters = so.iters;
    rec.residual_l2 = st.nnorm;
    rec.logf_l2 = ksa_l2(*st.K, st.v);
    rec.logf_linf = std::max(std::fabs(st.lam_min), std::fabs(st.lam_max));
    rec.energy = energy(st.d, *st.H);
    rec.fmin = std::exp(st.lam_min);
    rec.fmax = std::exp(st.lam_max);
    rec.converged = so.ok;
    return rec;
}

} // namespace

void write_trace_csv(const ContinuationTrace& t, std::ostream& os) {
    os << "eps,iters,residual_l2,logf_l2,logf_linf,energy,fmin,fmax\n";
    char buf[512];
    for (const auto& s : t.stages) {
        std::snprintf(buf, sizeof(buf),
                      "%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.eps, s.iters,
                      s.residual_l2, s.logf_l2, s.logf_linf, s.energy, s.fmin, s.fmax);
        os << buf;
    }
}

MetricField initial_metric(const ConnectionField& C, const MetricField& K0) {
    const int r = C.r;
    const int np = C.g->npoints();
    ScalarField phi(C.g);
    EndoField kv = K0.values();
    MetricField K(kv);
    double last = 0.0, stop = 0.0;
    for (int it = 0; it < 8; ++it) {
        const ScalarField tr = trace_re(residual(C, K));
        const double tl = linf_norm(tr);
        if (it == 0) stop = 1e-11 * std::max(1.0, tl);
        if (tl <= stop) break;
        if (it > 0 && tl >= 0.5 * last) break;
        last = tl;
        ScalarField rhs(C.g);
        for (int p = 0; p < np; ++p) rhs.v[p] = -(2.0 / r) * tr.v[p];
        PoissonResult pr;
        try {
            pr = poisson_solve(rhs, 1e-13, 1e-6);
        } catch (const Error&) {
            break;
        }
        for (int p = 0; p < np; ++p) phi.v[p] += pr.u.v[p];
        EndoField kv2 = K0.values();
        for (int p = 0; p < np; ++p) {
            const double s = std::exp(phi.v[p]);
            cplx* k = kv2.at(p);
            for (int i = 0; i < r * r; ++i) k[i] *= s;
        }
        K = MetricField(std::move(kv2));
    }
    return K;
}

SolveOutcome continuity_solve(const ConnectionField& C, const MetricField& K0,
                              const SolverConfig& cfg, std::ostream* log) {
    C.validate();
    SolveOutcome out;

    // conformal polish of the start; the path runs over this base, and the
    // blow-up direction below is measured against it
    const MetricField Khat = initial_metric(C, K0);
    EndoField Rhat = residual(C, Khat);
    out.K_base.emplace(Khat.values());

    // The first stage solves R(H) = eps log f from log f = 0, and its
    // solution is close to R(K)/eps. Raising the start of the path until
    // eps dominates the spectrum of R(K) keeps that stage mildly nonlinear
    // even when the starting residual is large (seam-concentrated data).
    double eps = cfg.eps_start;
    {
        std::vector<double> lam(C.r);
        double lmax = 0.0;
        for (int p = 0; p < C.g->npoints(); ++p) {
            ksa_eigs(*out.K_base, Rhat, p, lam.data());
            for (int i = 0; i < C.r; ++i) lmax = std::max(lmax, std::abs(lam[i]));
        }
        while (eps < 4.0 * lmax) eps *= 2.0;
        if (log && eps != cfg.eps_start)
            (*log) << "raised path start to eps " << eps << "\n";
    }

    StageState st;
    st.C = &C;
    st.K = &*out.K_base;
    st.eps = eps;

    EndoField v(C.g, C.r);
    EndoField v_good = v;
    double eps_good = -1.0;
    bool have_good = false;
    int stall = 0;
    std::string stop_reason;

    // secant predictor along the path, parameterized by log eps; on a
    // blow-up ray v grows linearly in log(1/eps), so extrapolating the last
    // two converged stages keeps Newton inside its fast basin
    EndoField hist_v[2] = {EndoField(C.g, C.r), EndoField(C.g, C.r)};
    double hist_t[2] = {0.0, 0.0};
    int nhist = 0;

    for (int guard = 0; guard < 400; ++guard) {
        st.eps = eps;
        bool built = true;
        StageOutcome so;
        try {
            EndoField vstart = v;
            if (eps > 0.0 && nhist == 2 && hist_t[0] - hist_t[1] > 1e-12) {
                const double theta =
                    std::min(2.0, (hist_t[1] - std::log(eps)) / (hist_t[0] - hist_t[1]));
                if (theta > 0.0)
                    vstart = add_scaled(hist_v[1], theta,
                                        add_scaled(hist_v[1], -1.0, hist_v[0]));
            }
            st.build(vstart);
            so = (cfg.mode == SolveMode::Newton) ? newton_stage(st, cfg) : flow_stage(st, cfg);
        } catch (const Error& e) {
            built = false;
            so.ok = false;
        }
        if (built) {
            StageRecord rec = record_from(st, so);
            out.trace.stages.push_back(rec);
            if (log) {
                (*log) << "eps " << rec.eps << (rec.converged ? " ok " : " fail ") << "iters "
                       << rec.iters << " res " << rec.residual_l2 << " |logf| " << rec.logf_l2
                       << " gmres " << so.gmres_it << "/" << so.gmres_rel;
                if (so.damping > 0.0) (*log) << " lm " << so.damping;
                if (!rec.converged && so.ls_slope_lin != 0.0)
                    (*log) << " slope " << so.ls_slope_fd << " want " << so.ls_slope_lin;
                (*log) << "\n";
            }
        }

        if (built && so.ok) {
            v = st.v;
            v_good = v;
            eps_good = eps;
            have_good = true;
            if (eps > 0.0) {
                if (nhist == 2) {
                    hist_v[0] = std::move(hist_v[1]);
                    hist_t[0] = hist_t[1];
                    hist_v[1] = v;
                    hist_t[1] = std::log(eps);
                } else {
                    hist_v[nhist] = v;
                    hist_t[nhist] = std::log(eps);
                    ++nhist;
                }
            }
            const double vl2 = ksa_l2(*out.K_base, v);
            if (vl2 > cfg.blowup_l2) {
                out.status = OutcomeStatus::BlowUp;
                stop_reason = "log f exceeded the L2 ceiling";
                break;
            }
            if (eps == 0.0) {
                out.status = OutcomeStatus::Harmonic;
                stop_reason = "eps = 0 stage converged";
                break;
            }
            eps = (eps <= cfg.eps_min * (1.0 + 1e-12)) ? 0.0 : std::max(eps * cfg.eps_ratio, cfg.eps_min);
        } else {
            ++stall;
            if (!have_good) {
                out.status = OutcomeStatus::Inconclusive;
                stop_reason = "first stage failed";
                break;
            }
            v = v_good;
            if (stall >= cfg.blowup_stall) {
                out.status = OutcomeStatus::BlowUp;
                stop_reason = "progress stalled";
                break;
            }
            if (eps == 0.0) {
                // the harmonic stage is attempted from the path floor; when
                // it fails there the path has nowhere left to go
                if (eps_good <= cfg.eps_min * (1.0 + 1e-12)) {
                    out.status = OutcomeStatus::BlowUp;
                    stop_reason = "harmonic stage failed at the path floor";
                    break;
                }
                eps = std::max(eps_good * cfg.eps_ratio, cfg.eps_min);
                continue;
            }
            const double next = std::sqrt(eps_good * eps);
            if (next <= 1e-13 || next >= eps_good) {
                out.status = OutcomeStatus::BlowUp;
                stop_reason = "step size exhausted";
                break;
            }
            eps = next;
        }
    }
    if (out.status == OutcomeStatus::Inconclusive && stop_reason.empty())
        stop_reason = "stage budget exhausted";

    // final normalization: free scalar shift zeroing the integrated trace
    if (have_good) {
        trace_project(v_good);
        StageState fin;
        fin.C = &C;
        fin.K = &*out.K_base;
        fin.eps = 0.0;
        try {
            fin.build(v_good);
        } catch (const Error&) {
            // the unprojected state was admissible moments ago; fall back
            v_good = v;
            fin.build(v_good);
        }
        out.H.emplace(fin.H->values());
        out.logf = v_good;
        out.final_residual = fro_l2(fin.R);
        out.final_eps = (out.status == OutcomeStatus::Harmonic) ? 0.0 : eps_good;
        out.u_limit = v_good;
        const double un = ksa_l2(*out.K_base, out.u_limit);
        if (un > 0.0) kernels::scal(1.0 / un, out.u_limit.a.data(), out.u_limit.a.size());
    } else {
        out.H.emplace(Khat.values());
        out.logf = EndoField(C.g, C.r);
        out.u_limit = EndoField(C.g, C.r);
        out.final_residual = fro_l2(residual(C, Khat));
        out.final_eps = cfg.eps_start;
    }
    std::ostringstream msg;
    msg << stop_reason << "; final residual " << out.final_residual << " at eps "
        << out.final_eps;
    out.message = msg.str();
    return out;
}

} // namespace hmet
