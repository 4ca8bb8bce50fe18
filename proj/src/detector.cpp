#include "hmet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "hmet/kernels.hpp"

namespace hmet {

namespace {

// C = A (m x n) * B (n x q), row major
void rmul(const cplx* A, int m, int n, const cplx* B, int q, cplx* C) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < q; ++j) {
            cplx s = 0.0;
            for (int l = 0; l < n; ++l) s += A[i * n + l] * B[l * q + j];
            C[i * q + j] = s;
        }
    }
}

// B = A^dagger, A is m x n
void adj_rect(const cplx* A, int m, int n, cplx* B) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) B[j * m + i] = std::conj(A[i * n + j]);
}

double fro_rect(const cplx* A, int m, int n) {
    return std::sqrt(kernels::norm2sq(A, static_cast<std::size_t>(m) * n));
}

// Modified Gram-Schmidt in the Hm inner product. Candidates are column
// vectors cand[c * r + i]; writes the kept columns into out (r x kout row
// major, stride kout). Returns the number kept. With pivoting the largest
// remaining column is taken first; without it the input order is preserved
// and a short column is an error reported through the return count.
int mgs_h(const cplx* Hm, int r, std::vector<cplx>& cand, int ncand, bool pivot, cplx* out,
          int kout) {
    std::vector<cplx> hv(static_cast<std::size_t>(r));
    std::vector<char> used(ncand, 0);
    std::vector<double> nrm(ncand, 0.0);
    auto hdot = [&](const cplx* u, const cplx* v) {
        for (int i = 0; i < r; ++i) {
            cplx s = 0.0;
            for (int j = 0; j < r; ++j) s += Hm[i * r + j] * v[j];
            hv[i] = s;
        }
        cplx acc = 0.0;
        for (int i = 0; i < r; ++i) acc += std::conj(u[i]) * hv[i];
        return acc;
    };
    double scale = 0.0;
    for (int c = 0; c < ncand; ++c) {
        nrm[c] = std::sqrt(std::max(0.0, hdot(cand.data() + c * r, cand.data() + c * r).real()));
        scale = std::max(scale, nrm[c]);
    }
    const double drop = 1e-8 * std::max(scale, 1e-300);
    int k = 0;
    std::vector<cplx> kept(static_cast<std::size_t>(kout) * r);
    for (int step = 0; step < ncand && k < kout; ++step) {
        int c = -1;
        if (pivot) {
            double best = drop;
            for (int j = 0; j < ncand; ++j)
                if (!used[j] && nrm[j] > best) {
                    best = nrm[j];
                    c = j;
                }
            if (c < 0) break;
        } else {
            c = step;
        }
        used[c] = 1;
        cplx* w = cand.data() + c * r;
        for (int pass = 0; pass < 2; ++pass) {
            for (int j = 0; j < k; ++j) {
                const cplx ov = hdot(kept.data() + j * r, w);
                for (int i = 0; i < r; ++i) w[i] -= ov * kept[j * r + i];
            }
        }
        const double wn = std::sqrt(std::max(0.0, hdot(w, w).real()));
        if (wn <= drop) {
            if (!pivot) return k; // ordered propagation hit a short column
            continue;
        }
        for (int i = 0; i < r; ++i) kept[k * r + i] = w[i] / wn;
        ++k;
        if (pivot)
            for (int j = 0; j < ncand; ++j)
                if (!used[j])
                    nrm[j] = std::sqrt(std::max(
                        0.0, hdot(cand.data() + j * r, cand.data() + j * r).real()));
    }
    for (int i = 0; i < r; ++i)
        for (int c = 0; c < k; ++c) out[i * kout + c] = kept[c * r + i];
    return k;
}

// columns of the r x k block M at point p inside a frame vector
const cplx* frame_at(const std::vector<cplx>& vf, int p, int r, int k) {
    return vf.data() + static_cast<std::size_t>(p) * r * k;
}
cplx* frame_at(std::vector<cplx>& vf, int p, int r, int k) {
    return vf.data() + static_cast<std::size_t>(p) * r * k;
}

void columns_to_cand(const cplx* M, int r, int k, std::vector<cplx>& cand) {
    cand.assign(static_cast<std::size_t>(k) * r, 0.0);
    for (int c = 0; c < k; ++c)
        for (int i = 0; i < r; ++i) cand[c * r + i] = M[i * k + c];
}

// accumulate |(1 - Pi) X|^2 over the grid for a per-axis field X
double left_complement_norm2(const EndoField& pi, const EndoField& x) {
    const auto& g = *pi.g;
    const int r = pi.r;
    std::vector<cplx> t(static_cast<std::size_t>(r) * r);
    double acc = 0.0;
    for (int p = 0; p < g.npoints(); ++p) {
        smat::mul(pi.at(p), x.at(p), t.data(), r);
        for (int i = 0; i < r * r; ++i) t[i] = x.at(p)[i] - t[i];
        const double f = fro_rect(t.data(), r, r);
        acc += g.weight() * f * f;
    }
    return acc;
}

// accumulate |Pi X|^2 over the grid
double left_project_norm2(const EndoField& pi, const EndoField& x) {
    const auto& g = *pi.g;
    const int r = pi.r;
    std::vector<cplx> t(static_cast<std::size_t>(r) * r);
    double acc = 0.0;
    for (int p = 0; p < g.npoints(); ++p) {
        smat::mul(pi.at(p), x.at(p), t.data(), r);
        const double f = fro_rect(t.data(), r, r);
        acc += g.weight() * f * f;
    }
    return acc;
}

} // namespace

SpectralSplit extract_projections(const MetricField& K, const EndoField& u, double gap_tol) {
    const GridPtr& g = K.grid();
    const int r = K.rank();
    const int np = g->npoints();
    if (u.r != r) throw Error("extract_projections: rank mismatch");
    if (msa_defect(K, u) > 1e-8 * std::max(1.0, fro_linf(u)))
        throw Error("extract_projections: input is not K-self-adjoint");

    std::vector<double> lam(static_cast<std::size_t>(np) * r);
    std::vector<cplx> evec(static_cast<std::size_t>(np) * r * r);
    double n2 = 0.0;
    for (int p = 0; p < np; ++p) {
        double* lp = lam.data() + static_cast<std::size_t>(p) * r;
        ksa_eigs(K, u, p, lp, evec.data() + static_cast<std::size_t>(p) * r * r);
        for (int i = 0; i < r; ++i) n2 += g->weight() * lp[i] * lp[i];
    }
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
        throw Error("extract_projections: input is not L2-normalized");

    SpectralSplit out;
    out.branch_mean.assign(r, 0.0);
    out.branch_var.assign(r, 0.0);
    for (int p = 0; p < np; ++p)
        for (int i = 0; i < r; ++i)
            out.branch_mean[i] += g->weight() * lam[static_cast<std::size_t>(p) * r + i];
    for (int i = 0; i < r; ++i) out.branch_mean[i] /= g->volume();
    for (int p = 0; p < np; ++p)
        for (int i = 0; i < r; ++i) {
            const double d = lam[static_cast<std::size_t>(p) * r + i] - out.branch_mean[i];
            out.branch_var[i] += g->weight() * d * d;
        }
    for (int i = 0; i < r; ++i) out.branch_var[i] /= g->volume();

    out.spread = out.branch_mean[r - 1] - out.branch_mean[0];
    if (r < 2 || out.spread < gap_tol) return out;

    std::vector<int> cut; // threshold after branch i
    double mingap = 0.0;
    for (int i = 0; i + 1 < r; ++i) {
        const double gp = out.branch_mean[i + 1] - out.branch_mean[i];
        if (gp > gap_tol * out.spread) {
            cut.push_back(i);
            mingap = (mingap == 0.0) ? gp : std::min(mingap, gp);
        }
    }
    if (cut.empty()) return out;
    out.clustered = true;
    out.gap = mingap;

    // one projection per threshold, onto every branch at or below it
    std::vector<cplx> vvd(static_cast<std::size_t>(r) * r);
    for (int s : cut) {
        const int k = s + 1;
        ProjectionField P;
        P.rank = k;
        P.pi = EndoField(g, r);
        P.vframe.assign(static_cast<std::size_t>(np) * r * k, 0.0);
        P.threshold = out.branch_mean[s];
        for (int p = 0; p < np; ++p) {
            const cplx* V = evec.data() + static_cast<std::size_t>(p) * r * r;
            cplx* vf = frame_at(P.vframe, p, r, k);
            for (int i = 0; i < r; ++i)
                for (int c = 0; c < k; ++c) vf[i * k + c] = V[i * r + c];
            for (int i = 0; i < r; ++i)
                for (int l = 0; l < r; ++l) {
                    cplx s2 = 0.0;
                    for (int c = 0; c < k; ++c) s2 += vf[i * k + c] * std::conj(vf[l * k + c]);
                    vvd[i * r + l] = s2;
                }
            smat::mul(vvd.data(), K.at(p), P.pi.at(p), r);
        }
        out.projections.push_back(std::move(P));
    }
    return out;
}

InvarianceReport verify_invariance(const ConnectionField& C, const MetricField& K,
                                   const ProjectionField& P) {
    const GridPtr& g = C.g;
    const int r = C.r;
    const EndoField& pi = P.pi;
    InvarianceReport rep;

    EndoField pi2 = mul_fields(pi, pi);
    rep.idempotency = fro_l2(add_scaled(pi2, -1.0, pi));
    rep.sa_defect = fro_l2(add_scaled(pi, -1.0, madjoint(K, pi)));

    double red2 = 0.0, inv2 = 0.0, tw2 = 0.0, psi2 = 0.0;
    Decomposition dec = decompose(C, K);
    FormEndoField dm = delta_met(C, K, pi, true);
    for (int mu = 0; mu < g->dim(); ++mu) {
        EndoField ef = end_forward(C, pi, mu);
        const double rf = fro_l2(ef);
        red2 += rf * rf;

        // D+ Pi + [A, Pi], both factors at the base point
        EndoField x = shift_endo(pi, C.twist, mu, +1);
        const double invh = 1.0 / g->spacing(mu);
        for (int p = 0; p < g->npoints(); ++p) {
            const cplx* a = C.A[mu].at(p);
            std::vector<cplx> ap(static_cast<std::size_t>(r) * r), pa(static_cast<std::size_t>(r) * r);
            smat::mul(a, pi.at(p), ap.data(), r);
            smat::mul(pi.at(p), a, pa.data(), r);
            cplx* xp = x.at(p);
            for (int i = 0; i < r * r; ++i)
                xp[i] = (xp[i] - pi.at(p)[i]) * invh + ap[i] - pa[i];
        }
        inv2 += left_complement_norm2(pi, x);
        // Pi delta_K(1 - Pi) = -Pi delta_K(Pi) since the derivation kills the
        // identity; this is the adjoint-side counterpart of the defect above
        tw2 += left_project_norm2(pi, dm[mu]);

        // end_forward(Pi) - 2 Pi [psi, Pi]
        EndoField br = mul_fields(dec.psi[mu], pi);
        EndoField bl = mul_fields(pi, dec.psi[mu]);
        EndoField comm = add_scaled(br, -1.0, bl);
        EndoField corr = mul_fields(pi, comm);
        EndoField diff = add_scaled(ef, -2.0, corr);
        const double pf = fro_l2(diff);
        psi2 += pf * pf;
    }
    rep.reducing = std::sqrt(red2);
    rep.invariance = std::sqrt(inv2);
    rep.invariance_tw = std::sqrt(tw2);
    rep.psi_compat = std::sqrt(psi2);
    return rep;
}

double principal_angle_max(const MetricField& K, const ProjectionField& P1,
                           const ProjectionField& P2) {
    if (P1.rank != P2.rank) throw Error("principal_angle_max: ranks differ");
    const GridPtr& g = K.grid();
    const int r = K.rank();
    const int k = P1.rank;
    std::vector<cplx> kv(static_cast<std::size_t>(r) * k), v1a(static_cast<std::size_t>(k) * r),
        m(static_cast<std::size_t>(k) * k);
    std::vector<double> sv(k);
    double worst = 0.0;
    for (int p = 0; p < g->npoints(); ++p) {
        rmul(K.at(p), r, r, frame_at(P2.vframe, p, r, k), k, kv.data());
        adj_rect(frame_at(P1.vframe, p, r, k), r, k, v1a.data());
        rmul(v1a.data(), k, r, kv.data(), k, m.data());
        smat::svd_vals(m.data(), sv.data(), k);
        const double c = std::clamp(sv[k - 1], -1.0, 1.0);
        worst = std::max(worst, std::acos(c));
    }
    return worst;
}

DetectorReport detect_invariant_subbundle(const ConnectionField& C, const MetricField& K,
                                          const EndoField& u, double gap_tol, double defect_tol) {
    DetectorReport rep;
    rep.split = extract_projections(K, u, gap_tol);
    std::ostringstream msg;
    if (!rep.split.clustered) {
        msg << "no eigenvalue clustering (spread " << rep.split.spread << ", gap_tol " << gap_tol
            << ")";
        rep.message = msg.str();
        return rep;
    }
    double best = -1.0;
    for (const auto& P : rep.split.projections) {
        rep.invariance.push_back(verify_invariance(C, K, P));
        const double d = rep.invariance.back().invariance;
        if (best < 0.0 || d < best) best = d;
    }
    rep.best_defect = best;
    rep.found = best <= defect_tol;
    msg << rep.split.projections.size() << " clusters, gap " << rep.split.gap
        << ", best range-invariance defect " << best;
    rep.message = msg.str();
    return rep;
}

bool parallel_projection(const ConnectionField& C, EndoField& pi_out, double tol) {
    ParallelBasis pb = parallel_endomorphisms(C, tol);
    const int r = C.r;
    const int np = C.g->npoints();

    std::vector<EndoField> cands;
    for (const auto& f : pb.basis) {
        cplx tr = 0.0;
        for (int i = 0; i < r; ++i) tr += f.at(0)[i * r + i];
        EndoField dev = f;
        for (int p = 0; p < np; ++p)
            for (int i = 0; i < r; ++i) dev.at(p)[i * r + i] -= tr / static_cast<double>(r);
        if (fro_l2(dev) > 1e-8 * std::max(1.0, fro_l2(f))) cands.push_back(f);
    }
    if (cands.empty()) return false;
    // deterministic combination as a fallback candidate when single elements
    // have collapsed spectrum
    if (cands.size() > 1) {
        EndoField combo = cands[0];
        for (std::size_t j = 1; j < cands.size(); ++j)
            combo = add_scaled(combo, 1.0 / std::sqrt(2.0 + static_cast<double>(j)), cands[j]);
        cands.push_back(combo);
    }

    struct Choice {
        int cand = -1;
        double score = 0.0;
        std::vector<cplx> ref; // eigenvalues of the chosen group
        double assign = 0.0;   // assignment radius
        int size = 0;
    } best;

    std::vector<cplx> ev(r);
    for (std::size_t ci = 0; ci < cands.size(); ++ci) {
        smat::eig_general_vals(cands[ci].at(0), ev.data(), r);
        double scale = 1.0;
        for (int i = 0; i < r; ++i) scale = std::max(scale, std::abs(ev[i]));
        const double ctol = 1e-6 * scale;
        // greedy grouping by proximity
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
        if (ng < 2) continue;
        for (int gsel = 0; gsel < ng; ++gsel) {
            double sep = -1.0;
            int size = 0;
            for (int a = 0; a < r; ++a) {
                if (grp[a] != gsel) continue;
                ++size;
                for (int b = 0; b < r; ++b)
                    if (grp[b] != gsel) {
                        const double d = std::abs(ev[a] - ev[b]);
                        if (sep < 0.0 || d < sep) sep = d;
                    }
            }
            if (size == 0 || size == r) continue;
            if (sep > best.score) {
                best.cand = static_cast<int>(ci);
                best.score = sep;
                best.size = size;
                best.assign = 0.45 * sep;
                best.ref.clear();
                for (int a = 0; a < r; ++a)
                    if (grp[a] == gsel) best.ref.push_back(ev[a]);
            }
        }
    }
    if (best.cand < 0) return false;

    const EndoField& f = cands[best.cand];
    pi_out = EndoField(C.g, r);
    std::vector<cplx> vals(r), vec(static_cast<std::size_t>(r) * r), vinv(static_cast<std::size_t>(r) * r);
    for (int p = 0; p < np; ++p) {
        smat::eig_general(f.at(p), vals.data(), vec.data(), r);
        try {
            smat::inverse(vec.data(), vinv.data(), r);
        } catch (const Error&) {
            return false;
        }
        int taken = 0;
        cplx* out = pi_out.at(p);
        std::fill(out, out + r * r, cplx(0.0));
        for (int j = 0; j < r; ++j) {
            double dmin = 1e300;
            for (const cplx& rf : best.ref) dmin = std::min(dmin, std::abs(vals[j] - rf));
            if (dmin > best.assign) continue;
            ++taken;
            for (int i = 0; i < r; ++i)
                for (int l = 0; l < r; ++l) out[i * r + l] += vec[i * r + j] * vinv[j * r + l];
        }
        if (taken != best.size) return false; // spectral branches crossed
    }
    // two idempotency polish sweeps: Pi <- 3 Pi^2 - 2 Pi^3
    std::vector<cplx> p2(static_cast<std::size_t>(r) * r), p3(static_cast<std::size_t>(r) * r);
    for (int sweep = 0; sweep < 2; ++sweep)
        for (int p = 0; p < np; ++p) {
            cplx* out = pi_out.at(p);
            smat::mul(out, out, p2.data(), r);
            smat::mul(p2.data(), out, p3.data(), r);
            for (int i = 0; i < r * r; ++i) out[i] = 3.0 * p2[i] - 2.0 * p3[i];
        }
    return true;
}

SplitReport split_harmonic(const ConnectionField& C, const MetricField& H, const EndoField& pi) {
    const GridPtr& g = C.g;
    const int r = C.r;
    const int np = g->npoints();
    const int dim = g->dim();
    if (pi.r != r) throw Error("split_harmonic: rank mismatch");

    double trm = 0.0;
    for (int p = 0; p < np; ++p) trm += smat::trace(pi.at(p), r).real();
    const int k = static_cast<int>(std::lround(trm / np));
    if (k <= 0 || k >= r) throw Error("split_harmonic: projection is trivial or full rank");
    const int kc = r - k;

    SplitReport rep;
    rep.input_residual = fro_l2(residual(C, H));

    // adapted frames by sweep propagation, for the range of prj
    std::vector<cplx> cand, tmp(static_cast<std::size_t>(r) * r);
    auto sweep_frames = [&](const EndoField& prj, int kk, std::vector<cplx>& fr) {
        fr.assign(static_cast<std::size_t>(np) * r * kk, 0.0);
        auto seed_point = [&](int p) {
            cand.assign(static_cast<std::size_t>(r) * r, 0.0);
            for (int c = 0; c < r; ++c)
                for (int i = 0; i < r; ++i) cand[c * r + i] = prj.at(p)[i * r + c];
            if (mgs_h(H.at(p), r, cand, r, true, frame_at(fr, p, r, kk), kk) != kk)
                throw Error("split_harmonic: projection rank collapsed at seed");
        };
        auto propagate = [&](int pfrom, int pto) {
            std::vector<cplx> pv(static_cast<std::size_t>(r) * kk);
            rmul(prj.at(pto), r, r, frame_at(fr, pfrom, r, kk), kk, pv.data());
            columns_to_cand(pv.data(), r, kk, cand);
            if (mgs_h(H.at(pto), r, cand, kk, false, frame_at(fr, pto, r, kk), kk) != kk)
                throw Error("split_harmonic: projection rank collapsed during propagation");
        };
        if (dim == 1) {
            seed_point(0);
            for (int i = 1; i < g->size(0); ++i) propagate(i - 1, i);
        } else {
            seed_point(g->index(0, 0));
            for (int i1 = 1; i1 < g->size(1); ++i1) propagate(g->index(0, i1 - 1), g->index(0, i1));
            for (int i0 = 1; i0 < g->size(0); ++i0) {
                propagate(g->index(i0 - 1, 0), g->index(i0, 0));
                for (int i1 = 1; i1 < g->size(1); ++i1)
                    propagate(g->index(i0, i1 - 1), g->index(i0, i1));
            }
        }
        std::vector<cplx> pv(static_cast<std::size_t>(r) * kk);
        for (int p = 0; p < np; ++p) {
            rmul(prj.at(p), r, r, frame_at(fr, p, r, kk), kk, pv.data());
            for (int i = 0; i < r * kk; ++i) pv[i] -= frame_at(fr, p, r, kk)[i];
            rep.frame_defect = std::max(rep.frame_defect, fro_rect(pv.data(), r, kk));
        }
    };

    std::vector<cplx> vf, wf;
    sweep_frames(pi, k, vf);

    // H-orthogonal complement of the range: 1 - V V^dagger H with the frames
    // just built, then the same sweep
    EndoField pic(g, r);
    for (int p = 0; p < np; ++p) {
        const cplx* V = frame_at(vf, p, r, k);
        for (int i = 0; i < r; ++i)
            for (int l = 0; l < r; ++l) {
                cplx s = 0.0;
                for (int c = 0; c < k; ++c) s += V[i * k + c] * std::conj(V[l * k + c]);
                tmp[i * r + l] = s;
            }
        smat::mul(tmp.data(), H.at(p), pic.at(p), r);
        for (int i = 0; i < r; ++i)
            for (int l = 0; l < r; ++l)
                pic.at(p)[i * r + l] = (i == l ? 1.0 : 0.0) - pic.at(p)[i * r + l];
    }
    sweep_frames(pic, kc, wf);

    // per-axis seam mismatch collected into a constant twist, then the block
    // connection from the transported links
    auto build_block = [&](const std::vector<cplx>& fr, const EndoField& prj, int kk,
                           ConnectionField& conn, std::vector<std::vector<cplx>>& seams) {
        conn = ConnectionField(g, kk);
        seams.assign(dim, std::vector<cplx>());
        std::vector<cplx> ht(static_cast<std::size_t>(r) * r), pt(static_cast<std::size_t>(r) * r),
            refv(static_cast<std::size_t>(r) * kk), pv(static_cast<std::size_t>(r) * kk);
        std::vector<cplx> bf(static_cast<std::size_t>(kk) * kk),
            bbar(static_cast<std::size_t>(kk) * kk);

        for (int mu = 0; mu < dim; ++mu) {
            const bool tw = C.twist.nontrivial[mu];
            const cplx* B = tw ? C.twist.mat(mu) : nullptr;
            const cplx* Bi = tw ? C.twist.inv(mu) : nullptr;
            const int nmu = g->size(mu);
            const int ntrans = np / nmu;
            std::fill(bbar.begin(), bbar.end(), cplx(0.0));

            std::vector<int> qs, q0s;
            for (int p = 0; p < np; ++p) {
                if (g->coords_idx(p)[mu] != nmu - 1) continue;
                bool crossed = false;
                const int q0 = g->shift(p, mu, +1, &crossed);
                qs.push_back(p);
                q0s.push_back(q0);
            }

            std::vector<std::vector<cplx>> bfs(qs.size());
            for (std::size_t s = 0; s < qs.size(); ++s) {
                const int q = qs[s], q0 = q0s[s];
                // transported metric and projection across the seam
                if (tw) {
                    std::vector<cplx> ba(static_cast<std::size_t>(r) * r);
                    adj_rect(Bi, r, r, ba.data()); // B^-dagger
                    rmul(ba.data(), r, r, H.at(q0), r, tmp.data());
                    rmul(tmp.data(), r, r, Bi, r, ht.data());
                    rmul(B, r, r, prj.at(q0), r, tmp.data());
                    rmul(tmp.data(), r, r, Bi, r, pt.data());
                    rmul(B, r, r, frame_at(fr, q0, r, kk), kk, refv.data());
                } else {
                    std::memcpy(ht.data(), H.at(q0), sizeof(cplx) * r * r);
                    std::memcpy(pt.data(), prj.at(q0), sizeof(cplx) * r * r);
                    std::memcpy(refv.data(), frame_at(fr, q0, r, kk), sizeof(cplx) * r * kk);
                }
                rmul(pt.data(), r, r, frame_at(fr, q, r, kk), kk, pv.data());
                columns_to_cand(pv.data(), r, kk, cand);
                std::vector<cplx> vt(static_cast<std::size_t>(r) * kk);
                if (mgs_h(ht.data(), r, cand, kk, false, vt.data(), kk) != kk)
                    throw Error("split_harmonic: projection rank collapsed at the seam");
                std::vector<cplx> ra(static_cast<std::size_t>(kk) * r),
                    hv(static_cast<std::size_t>(r) * kk);
                adj_rect(refv.data(), r, kk, ra.data());
                rmul(ht.data(), r, r, vt.data(), kk, hv.data());
                bfs[s].resize(static_cast<std::size_t>(kk) * kk);
                rmul(ra.data(), kk, r, hv.data(), kk, bfs[s].data());
                for (int i = 0; i < kk * kk; ++i) bbar[i] += bfs[s][i] / static_cast<double>(ntrans);
            }
            std::vector<cplx> bu(static_cast<std::size_t>(kk) * kk);
            smat::polar_unitary(bbar.data(), bu.data(), kk);
            for (std::size_t s = 0; s < qs.size(); ++s) {
                for (int i = 0; i < kk * kk; ++i) bf[i] = bfs[s][i] - bu[i];
                rep.seam_defect = std::max(rep.seam_defect, fro_rect(bf.data(), kk, kk));
            }
            seams[mu] = bu;
            conn.set_twist(mu, bu);

            // block links (frame at p+)^dagger H(p+) U frame(p)
            const double h = g->spacing(mu);
            std::vector<cplx> U(static_cast<std::size_t>(r) * r),
                uv(static_cast<std::size_t>(r) * kk), va(static_cast<std::size_t>(kk) * r),
                uf(static_cast<std::size_t>(kk) * kk);
            std::vector<cplx> bua(static_cast<std::size_t>(kk) * kk);
            adj_rect(bu.data(), kk, kk, bua.data());
            std::size_t seam_at = 0;
            for (int p = 0; p < np; ++p) {
                bool crossed = false;
                const int pp = g->shift(p, mu, +1, &crossed);
                smat::identity(U.data(), r);
                const cplx* a = C.A[mu].at(p);
                for (int i = 0; i < r * r; ++i) U[i] -= h * a[i];
                std::vector<cplx> uvv(static_cast<std::size_t>(r) * kk);
                rmul(U.data(), r, r, frame_at(fr, p, r, kk), kk, uvv.data());
                if (!crossed) {
                    adj_rect(frame_at(fr, pp, r, kk), r, kk, va.data());
                    rmul(H.at(pp), r, r, uvv.data(), kk, uv.data());
                    rmul(va.data(), kk, r, uv.data(), kk, uf.data());
                } else {
                    // locate this boundary point in the seam scan
                    while (seam_at < qs.size() && qs[seam_at] != p) ++seam_at;
                    if (seam_at >= qs.size())
                        throw Error("split_harmonic: seam bookkeeping failed");
                    const int q0 = q0s[seam_at];
                    if (tw) {
                        std::vector<cplx> ba(static_cast<std::size_t>(r) * r);
                        adj_rect(Bi, r, r, ba.data());
                        rmul(ba.data(), r, r, H.at(q0), r, tmp.data());
                        rmul(tmp.data(), r, r, Bi, r, ht.data());
                        rmul(B, r, r, frame_at(fr, q0, r, kk), kk, refv.data());
                    } else {
                        std::memcpy(ht.data(), H.at(q0), sizeof(cplx) * r * r);
                        std::memcpy(refv.data(), frame_at(fr, q0, r, kk), sizeof(cplx) * r * kk);
                    }
                    std::vector<cplx> ra(static_cast<std::size_t>(kk) * r),
                        kk2(static_cast<std::size_t>(kk) * kk);
                    adj_rect(refv.data(), r, kk, ra.data());
                    rmul(ht.data(), r, r, uvv.data(), kk, uv.data());
                    rmul(ra.data(), kk, r, uv.data(), kk, kk2.data());
                    rmul(bua.data(), kk, kk, kk2.data(), kk, uf.data());
                }
                cplx* af = conn.A[mu].at(p);
                for (int i = 0; i < kk; ++i)
                    for (int j = 0; j < kk; ++j)
                        af[i * kk + j] = ((i == j ? 1.0 : 0.0) - uf[i * kk + j]) / h;
            }
        }
    };

    build_block(vf, pi, k, rep.restricted, rep.seam);
    build_block(wf, pic, kc, rep.complement, rep.seam_perp);

    // psi mixing blocks in the adapted frames
    Decomposition dec = decompose(C, H);
    double up2 = 0.0, lo2 = 0.0;
    for (int p = 0; p < np; ++p) {
        const cplx* V = frame_at(vf, p, r, k);
        const cplx* W = frame_at(wf, p, r, kc);
        std::vector<cplx> va(static_cast<std::size_t>(k) * r), wa(static_cast<std::size_t>(kc) * r),
            hpsi(static_cast<std::size_t>(r) * r), tkr(static_cast<std::size_t>(k) * r),
            tkc(static_cast<std::size_t>(kc) * r), ur(static_cast<std::size_t>(k) * kc),
            ll(static_cast<std::size_t>(kc) * k);
        adj_rect(V, r, k, va.data());
        adj_rect(W, r, kc, wa.data());
        for (int mu = 0; mu < dim; ++mu) {
            rmul(H.at(p), r, r, dec.psi[mu].at(p), r, hpsi.data());
            rmul(va.data(), k, r, hpsi.data(), r, tkr.data());
            rmul(tkr.data(), k, r, W, kc, ur.data());
            rmul(wa.data(), kc, r, hpsi.data(), r, tkc.data());
            rmul(tkc.data(), kc, r, V, k, ll.data());
            const double un = fro_rect(ur.data(), k, kc), ln = fro_rect(ll.data(), kc, k);
            up2 += g->weight() * un * un;
            lo2 += g->weight() * ln * ln;
        }
    }
    rep.beta_upper = std::sqrt(up2);
    rep.beta_lower = std::sqrt(lo2);

    rep.restricted_residual = fro_l2(residual(rep.restricted, MetricField::identity(g, k)));
    rep.complement_residual = fro_l2(residual(rep.complement, MetricField::identity(g, kc)));
    return rep;
}

GaugeFixResult gauge_fix(const ConnectionField& C, const MetricField& K, const MetricField& H,
                         double tol, int maxit) {
    const GridPtr& g = C.g;
    const int r = C.r;
    const int np = g->npoints();
    const std::size_t n = static_cast<std::size_t>(np) * r * r;

    EndoField f = mul_fields(K.inverse(), H.values());
    EndoField sigma = ksa_log(K, f);
    for (auto& z : sigma.a) z *= 0.5;

    auto project = [&](EndoField& s) {
        s = msym(K, s);
        double trm = 0.0;
        for (int p = 0; p < np; ++p) trm += smat::trace(s.at(p), r).real();
        const cplx sub = trm / (static_cast<double>(np) * r);
        for (int p = 0; p < np; ++p)
            for (int i = 0; i < r; ++i) s.at(p)[i * r + i] -= sub;
    };
    project(sigma);

    auto feval = [&](const EndoField& s) {
        EndoField u = ksa_exp(K, s);
        return residual(gauge_act(u, C), K);
    };

    GaugeFixResult out;
    EndoField F = feval(sigma);
    double nrm = fro_l2(F);
    int it = 0;
    for (; it < maxit && nrm > tol; ++it) {
        const double snorm = std::sqrt(kernels::norm2sq(sigma.a.data(), n));
        LinOp jop = [&](const cplx* x, cplx* y) {
            double xn = std::sqrt(kernels::norm2sq(x, n));
            if (xn == 0.0) {
                std::fill(y, y + n, cplx(0.0));
                return;
            }
            const double t = 1e-7 * (1.0 + snorm) / xn;
            EndoField sp = sigma;
            kernels::axpy(t, x, sp.a.data(), n);
            EndoField Fp = feval(sp);
            for (std::size_t i = 0; i < n; ++i) y[i] = (Fp.a[i] - F.a[i]) / t;
        };
        std::vector<cplx> b(n), x(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) b[i] = -F.a[i];
        GmresOpts go;
        go.restart = 60;
        go.maxiter = 200;
        go.rtol = 1e-4;
        gmres(jop, b.data(), x.data(), n, go);

        EndoField dl(g, r);
        std::copy(x.begin(), x.end(), dl.a.begin());
        project(dl);

        double alpha = 1.0;
        bool ok = false;
        for (int bt = 0; bt < 10; ++bt) {
            EndoField st = add_scaled(sigma, alpha, dl);
            EndoField Ft;
            try {
                Ft = feval(st);
            } catch (const Error&) {
                alpha *= 0.5;
                continue;
            }
            const double nt = fro_l2(Ft);
            if (nt <= (1.0 - 1e-4 * alpha) * nrm) {
                sigma = std::move(st);
                F = std::move(Ft);
                nrm = nt;
                ok = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!ok) break;
    }
    out.sigma = sigma;
    out.iters = it;
    out.residual_l2 = nrm;
    out.converged = nrm <= tol;
    out.fixed = gauge_act(ksa_exp(K, sigma), C);
    return out;
}

UniquenessReport uniqueness_check(const ConnectionField& C, const MetricField& H1,
                                  const MetricField& H2, double tol) {
    UniquenessReport rep;
    ParallelBasis pb = parallel_endomorphisms(C, tol);
    rep.parallel_dim = static_cast<int>(pb.basis.size());
    rep.simple = rep.parallel_dim == 1;

    const GridPtr& g = C.g;
    const int r = C.r;
    EndoField f = mul_fields(H1.inverse(), H2.values());
    double trm = 0.0;
    for (int p = 0; p < g->npoints(); ++p) trm += g->weight() * smat::trace(f.at(p), r).real();
    rep.scalar_c = trm / (g->volume() * r);
    EndoField dev = f;
    for (int p = 0; p < g->npoints(); ++p)
        for (int i = 0; i < r; ++i) dev.at(p)[i * r + i] -= rep.scalar_c;
    rep.scalar_dev = fro_linf(dev);
    return rep;
}

} // namespace hmet
