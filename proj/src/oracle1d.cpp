#include "hmet/oracle1d.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace hmet {

namespace {

using EMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Hermitian coordinates per point: r diagonal entries, then (re, im) pairs
// of the strict upper triangle scaled by sqrt(2) so the packing is an
// isometry for the Frobenius norm.
int herm_dof(int r) { return r * r; }

void pack_herm(const cplx* M, int r, double scale, double* out) {
    int q = 0;
    for (int i = 0; i < r; ++i) out[q++] = scale * M[i * r + i].real();
    const double s2 = std::sqrt(2.0) * scale;
    for (int i = 0; i < r; ++i)
        for (int j = i + 1; j < r; ++j) {
            out[q++] = s2 * M[i * r + j].real();
            out[q++] = s2 * M[i * r + j].imag();
        }
}

void unpack_herm(const double* in, int r, cplx* M) {
    int q = 0;
    for (int i = 0; i < r; ++i) M[i * r + i] = in[q++];
    const double is2 = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < r; ++i)
        for (int j = i + 1; j < r; ++j) {
            const double re = in[q++] * is2, im = in[q++] * is2;
            M[i * r + j] = cplx(re, im);
            M[j * r + i] = cplx(re, -im);
        }
}

struct OracleWork {
    const ConnectionField* C = nullptr;
    GridPtr g;
    int r = 0, n = 0, ndof = 0;
    double h = 0.0, w = 0.0;
    EndoField K0;
    EndoField l0, l0inv; // cholesky of K0 and its inverse

    EndoField metric_from(const Eigen::VectorXd& th) const {
        EndoField H(g, r);
        for (int p = 0; p < n; ++p)
            unpack_herm(th.data() + static_cast<std::size_t>(p) * herm_dof(r), r, H.at(p));
        return H;
    }

    bool positive(const EndoField& H) const {
        std::vector<cplx> L(static_cast<std::size_t>(r) * r);
        for (int p = 0; p < n; ++p) {
            try {
                smat::cholesky(H.at(p), L.data(), r);
            } catch (const Error&) {
                return false;
            }
        }
        return true;
    }

    // log(K0^-1 H) through the Hermitian similarity at K0
    void logf_at(const EndoField& H, int p, cplx* out) const {
        const int rr = r * r;
        std::vector<cplx> f(rr), wm(rr), t(rr), la(rr), lia(rr);
        std::vector<cplx> k0inv(rr);
        smat::inverse(K0.at(p), k0inv.data(), r);
        smat::mul(k0inv.data(), H.at(p), f.data(), r);
        smat::adjoint(l0.at(p), la.data(), r);
        smat::adjoint(l0inv.at(p), lia.data(), r);
        smat::mul(la.data(), f.data(), t.data(), r);
        smat::mul(t.data(), lia.data(), wm.data(), r); // Hermitian, positive
        for (int i = 0; i < r; ++i)
            for (int j = i; j < r; ++j) {
                const cplx avg = 0.5 * (wm[i * r + j] + std::conj(wm[j * r + i]));
                wm[i * r + j] = avg;
                wm[j * r + i] = std::conj(avg);
            }
        std::vector<cplx> lw(rr);
        smat::herm_fn(wm.data(), lw.data(), r, [](double x) {
            if (x <= 0.0) throw Error("oracle: metric ratio lost positivity");
            return std::log(x);
        });
        smat::mul(lia.data(), lw.data(), t.data(), r);
        smat::mul(t.data(), la.data(), out, r);
    }

    // packed residual of R(H) - eps log(K0^-1 H); components carry sqrt(w)
    // so the vector 2-norm is the weighted L2 norm of the mismatch
    Eigen::VectorXd residual_vec(const Eigen::VectorXd& th, double eps) const {
        EndoField H = metric_from(th);
        const Twist& tw = C->twist;
        EndoField Hp = shift_metric(H, tw, 0, +1);
        EndoField Hm = shift_metric(H, tw, 0, -1);
        const int rr = r * r;
        EndoField psi(g, r), aH(g, r), pf(g, r);
        std::vector<cplx> hinv(rr), t1(rr), t2(rr), ad(rr);
        for (int p = 0; p < n; ++p) {
            smat::inverse(H.at(p), hinv.data(), r);
            const cplx* a = C->A[0].at(p);
            smat::adjoint(a, ad.data(), r);
            smat::mul(hinv.data(), ad.data(), t1.data(), r);
            smat::mul(t1.data(), H.at(p), aH.at(p), r);
            for (int i = 0; i < rr; ++i) t1[i] = (Hp.at(p)[i] - Hm.at(p)[i]) / (2.0 * h);
            smat::mul(hinv.data(), t1.data(), pf.at(p), r);
            for (int i = 0; i < rr; ++i)
                psi.at(p)[i] = 0.5 * (a[i] + aH.at(p)[i] - pf.at(p)[i]);
        }
        EndoField psip = shift_endo(psi, tw, 0, +1);
        EndoField psim = shift_endo(psi, tw, 0, -1);
        Eigen::VectorXd out(ndof);
        std::vector<cplx> R(rr), v(rr), G(rr);
        const double sw = std::sqrt(w);
        for (int p = 0; p < n; ++p) {
            for (int i = 0; i < rr; ++i) R[i] = (psip.at(p)[i] - psim.at(p)[i]) / (2.0 * h);
            smat::mul(psi.at(p), aH.at(p), t1.data(), r);
            smat::mul(aH.at(p), psi.at(p), t2.data(), r);
            for (int i = 0; i < rr; ++i) R[i] += t1[i] - t2[i];
            smat::mul(pf.at(p), psi.at(p), t1.data(), r);
            smat::mul(psi.at(p), pf.at(p), t2.data(), r);
            for (int i = 0; i < rr; ++i) R[i] = -(R[i] + t1[i] - t2[i]);
            if (eps != 0.0) {
                logf_at(H, p, v.data());
                for (int i = 0; i < rr; ++i) R[i] -= eps * v[i];
            }
            smat::mul(H.at(p), R.data(), G.data(), r);
            for (int i = 0; i < r; ++i)
                for (int j = i; j < r; ++j) {
                    const cplx avg = 0.5 * (G[i * r + j] + std::conj(G[j * r + i]));
                    G[i * r + j] = avg;
                    G[j * r + i] = std::conj(avg);
                }
            pack_herm(G.data(), r, sw, out.data() + static_cast<std::size_t>(p) * rr);
        }
        return out;
    }
};

} // namespace

OracleResult oracle_solve_1d(const ConnectionField& C, const EndoField& K0, double eps_min,
                             double tol) {
    if (C.g->dim() != 1) throw Error("oracle_solve_1d: one-dimensional base required");
    if (C.g->size(0) < 5) throw Error("oracle_solve_1d: grid too small for the central stencil");

    OracleWork wk;
    wk.C = &C;
    wk.g = C.g;
    wk.r = C.r;
    wk.n = C.g->npoints();
    wk.ndof = wk.n * herm_dof(C.r);
    wk.h = C.g->spacing(0);
    wk.w = C.g->weight();
    wk.K0 = K0;
    wk.l0 = EndoField(wk.g, wk.r);
    wk.l0inv = EndoField(wk.g, wk.r);
    for (int p = 0; p < wk.n; ++p) {
        smat::cholesky(K0.at(p), wk.l0.at(p), wk.r);
        smat::inverse(wk.l0.at(p), wk.l0inv.at(p), wk.r);
    }

    Eigen::VectorXd th(wk.ndof);
    for (int p = 0; p < wk.n; ++p)
        pack_herm(K0.at(p), wk.r, 1.0, th.data() + static_cast<std::size_t>(p) * herm_dof(wk.r));

    std::vector<double> eps_path;
    for (double e = 1.0; e >= eps_min; e *= 0.5) eps_path.push_back(e);
    eps_path.push_back(0.0);

    OracleResult res;
    res.H = wk.metric_from(th);
    for (double eps : eps_path) {
        Eigen::VectorXd F = wk.residual_vec(th, eps);
        double nrm = F.norm();
        bool stage_ok = nrm <= tol;
        for (int it = 0; it < 30 && !stage_ok; ++it) {
            Eigen::MatrixXd J(wk.ndof, wk.ndof);
            for (int j = 0; j < wk.ndof; ++j) {
                const double dj = 1e-6 * std::max(1.0, std::abs(th[j]));
                Eigen::VectorXd tp = th;
                tp[j] += dj;
                J.col(j) = (wk.residual_vec(tp, eps) - F) / dj;
            }
            Eigen::VectorXd d;
            if (eps == 0.0)
                d = J.colPivHouseholderQr().solve(-F);
            else
                d = J.partialPivLu().solve(-F);
            if (!d.allFinite()) break;
            double alpha = 1.0;
            bool accepted = false;
            for (int bt = 0; bt < 20; ++bt) {
                Eigen::VectorXd tn = th + alpha * d;
                EndoField Hn = wk.metric_from(tn);
                if (wk.positive(Hn)) {
                    Eigen::VectorXd Fn;
                    bool feval_ok = true;
                    try {
                        Fn = wk.residual_vec(tn, eps);
                    } catch (const Error&) {
                        feval_ok = false;
                    }
                    if (feval_ok && Fn.norm() <= (1.0 - 1e-4 * alpha) * nrm) {
                        th = tn;
                        F = Fn;
                        nrm = Fn.norm();
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            ++res.newton_total;
            if (!accepted) break;
            stage_ok = nrm <= tol;
        }
        res.final_eps = eps;
        res.final_residual = nrm;
        if (!stage_ok) {
            res.converged = false;
            res.H = wk.metric_from(th);
            return res;
        }
        res.H = wk.metric_from(th);
    }
    res.converged = true;
    return res;
}

void oracle_normalize(EndoField& H) {
    const int r = H.r;
    const int n = H.g->npoints();
    std::vector<cplx> L(static_cast<std::size_t>(r) * r);
    double acc = 0.0;
    for (int p = 0; p < n; ++p) {
        smat::cholesky(H.at(p), L.data(), r);
        for (int i = 0; i < r; ++i) acc += 2.0 * std::log(L[i * r + i].real());
    }
    const double c = acc / n;
    const double s = std::exp(-c / r);
    for (auto& z : H.a) z *= s;
}

double oracle_distance(const EndoField& A, const EndoField& B) {
    EndoField an = A, bn = B;
    oracle_normalize(an);
    oracle_normalize(bn);
    const double db = fro_l2(bn);
    return fro_l2(add_scaled(an, -1.0, bn)) / std::max(db, 1e-300);
}

std::vector<cplx> expm(const std::vector<cplx>& A, int r) {
    double a1 = 0.0; // max column sum
    for (int j = 0; j < r; ++j) {
        double s = 0.0;
        for (int i = 0; i < r; ++i) s += std::abs(A[i * r + j]);
        a1 = std::max(a1, s);
    }
    int sq = 0;
    double sc = 1.0;
    while (a1 * sc > 0.5) {
        sc *= 0.5;
        ++sq;
    }
    const int rr = r * r;
    std::vector<cplx> B(rr);
    for (int i = 0; i < rr; ++i) B[i] = A[i] * sc;
    std::vector<cplx> term(rr), out(rr, 0.0), t(rr);
    smat::identity(out.data(), r);
    smat::identity(term.data(), r);
    for (int k = 1; k <= 24; ++k) {
        smat::mul(term.data(), B.data(), t.data(), r);
        for (int i = 0; i < rr; ++i) {
            term[i] = t[i] / static_cast<double>(k);
            out[i] += term[i];
        }
    }
    for (int s = 0; s < sq; ++s) {
        smat::mul(out.data(), out.data(), t.data(), r);
        out.swap(t);
    }
    return out;
}

ClassifyReport oracle_classify(const ConnectionField& C, double cluster_tol) {
    if (C.g->dim() != 1) throw Error("oracle_classify: one-dimensional base required");
    const int r = C.r;
    const int rr = r * r;
    const int n = C.g->size(0);
    const double L = C.g->length(0);
    const double h = C.g->spacing(0);

    ClassifyReport rep;
    double cdev = 0.0, a0n = smat::fro_norm(C.A[0].at(0), r);
    for (int p = 1; p < n; ++p) {
        std::vector<cplx> d(rr);
        for (int i = 0; i < rr; ++i) d[i] = C.A[0].at(p)[i] - C.A[0].at(0)[i];
        cdev = std::max(cdev, smat::fro_norm(d.data(), r));
    }
    rep.constant_coefficient = cdev <= 1e-13 * (1.0 + a0n);

    std::vector<cplx> Y(rr);
    if (rep.constant_coefficient) {
        std::vector<cplx> mA(rr);
        for (int i = 0; i < rr; ++i) mA[i] = -L * C.A[0].at(0)[i];
        Y = expm(mA, r);
    } else {
        // flow of Y' = -A(x) Y with piecewise-linear coefficient samples;
        // the sample beyond the last node is the seam-conjugated first one
        smat::identity(Y.data(), r);
        const int sub = 8;
        const double dt = h / sub;
        std::vector<cplx> k1(rr), k2(rr), k3(rr), k4(rr), t(rr), Ax(rr);
        std::vector<cplx> awrap(C.A[0].at(0), C.A[0].at(0) + rr);
        if (C.twist.nontrivial[0]) {
            std::vector<cplx> tmp(rr);
            smat::mul(C.twist.mat(0), C.A[0].at(0), tmp.data(), r);
            smat::mul(tmp.data(), C.twist.inv(0), awrap.data(), r);
        }
        auto coef = [&](int p, double frac, cplx* out) {
            const cplx* a = C.A[0].at(p);
            const cplx* b = (p + 1 < n) ? C.A[0].at(p + 1) : awrap.data();
            for (int i = 0; i < rr; ++i) out[i] = -((1.0 - frac) * a[i] + frac * b[i]);
        };
        for (int p = 0; p < n; ++p)
            for (int s = 0; s < sub; ++s) {
                const double f0 = static_cast<double>(s) / sub;
                const double fh = (s + 0.5) / sub;
                const double f1 = (s + 1.0) / sub;
                coef(p, f0, Ax.data());
                smat::mul(Ax.data(), Y.data(), k1.data(), r);
                for (int i = 0; i < rr; ++i) t[i] = Y[i] + 0.5 * dt * k1[i];
                coef(p, fh, Ax.data());
                smat::mul(Ax.data(), t.data(), k2.data(), r);
                for (int i = 0; i < rr; ++i) t[i] = Y[i] + 0.5 * dt * k2[i];
                smat::mul(Ax.data(), t.data(), k3.data(), r);
                for (int i = 0; i < rr; ++i) t[i] = Y[i] + dt * k3[i];
                coef(p, f1, Ax.data());
                smat::mul(Ax.data(), t.data(), k4.data(), r);
                for (int i = 0; i < rr; ++i)
                    Y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
    }
    rep.monodromy.resize(rr);
    if (C.twist.nontrivial[0]) {
        smat::mul(C.twist.inv(0), Y.data(), rep.monodromy.data(), r);
    } else {
        rep.monodromy = Y;
    }

    std::vector<cplx> ev(r);
    smat::eig_general_vals(rep.monodromy.data(), ev.data(), r);
    rep.eigenvalues = ev;
    double scale = 1.0;
    for (int i = 0; i < r; ++i) scale = std::max(scale, std::abs(ev[i]));
    const double ctol = cluster_tol * scale;

    std::vector<int> grp(r, -1);
    int ng = 0;
    for (int i = 0; i < r; ++i) {
        if (grp[i] >= 0) continue;
        grp[i] = ng;
        bool grew = true;
        while (grew) {
            grew = false;
            for (int a = 0; a < r; ++a)
                if (grp[a] == ng)
                    for (int b = 0; b < r; ++b)
                        if (grp[b] < 0 && std::abs(ev[a] - ev[b]) <= ctol) {
                            grp[b] = ng;
                            grew = true;
                        }
        }
        ++ng;
    }

    bool ss = true;
    std::vector<double> sv(r);
    for (int gsel = 0; gsel < ng; ++gsel) {
        int alg = 0;
        cplx mu = 0.0;
        for (int i = 0; i < r; ++i)
            if (grp[i] == gsel) {
                ++alg;
                mu += ev[i];
            }
        mu /= static_cast<double>(alg);
        std::vector<cplx> Mm(rep.monodromy);
        for (int i = 0; i < r; ++i) Mm[i * r + i] -= mu;
        smat::svd_vals(Mm.data(), sv.data(), r);
        const double cut = 1e-10 * std::max(1.0, sv[0]);
        int geo = 0;
        for (int i = 0; i < r; ++i)
            if (sv[i] <= cut) ++geo;
        rep.alg_mult.push_back(alg);
        rep.geo_mult.push_back(geo);
        if (geo < alg) ss = false;
    }
    rep.cls = ss ? MonodromyClass::SemiSimple : MonodromyClass::NonSemiSimple;
    return rep;
}

} // namespace hmet
