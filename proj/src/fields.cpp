#include "hmet/fields.hpp"

#include <cmath>
#include <sstream>

#include "hmet/kernels.hpp"

namespace hmet {

namespace {

bool all_finite(const cplx* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(a[i].real()) || !std::isfinite(a[i].imag())) return false;
    return true;
}

bool is_identity(const std::vector<cplx>& b, int r) {
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            const cplx want = (i == j) ? 1.0 : 0.0;
            if (b[i * r + j] != want) return false;
        }
    return true;
}

} // namespace

void Twist::set_axis(int mu, const std::vector<cplx>& b) {
    if (static_cast<int>(b.size()) != r * r) throw Error("twist: wrong matrix size");
    if (!all_finite(b.data(), b.size())) throw Error("twist: entries must be finite");
    if (is_identity(b, r)) {
        nontrivial[mu] = false;
        B[mu].clear();
        Binv[mu].clear();
        return;
    }
    B[mu] = b;
    Binv[mu].resize(b.size());
    smat::inverse(b.data(), Binv[mu].data(), r);
    nontrivial[mu] = true;
}

EndoField shift_endo(const EndoField& f, const Twist& tw, int mu, int dir) {
    EndoField out(f.g, f.r);
    const int np = f.g->npoints(), r = f.r;
    std::vector<cplx> t1(r * r);
    for (int p = 0; p < np; ++p) {
        bool crossed = false;
        const int q = f.g->shift(p, mu, dir, &crossed);
        if (crossed && tw.nontrivial[mu]) {
            const cplx* lft = dir > 0 ? tw.mat(mu) : tw.inv(mu);
            const cplx* rgt = dir > 0 ? tw.inv(mu) : tw.mat(mu);
            smat::mul(lft, f.at(q), t1.data(), r);
            smat::mul(t1.data(), rgt, out.at(p), r);
        } else {
            std::copy(f.at(q), f.at(q) + r * r, out.at(p));
        }
    }
    return out;
}

SectionField shift_section(const SectionField& s, const Twist& tw, int mu, int dir) {
    SectionField out(s.g, s.r);
    const int np = s.g->npoints(), r = s.r;
    for (int p = 0; p < np; ++p) {
        bool crossed = false;
        const int q = s.g->shift(p, mu, dir, &crossed);
        if (crossed && tw.nontrivial[mu]) {
            const cplx* m = dir > 0 ? tw.mat(mu) : tw.inv(mu);
            for (int i = 0; i < r; ++i) {
                cplx acc = 0.0;
                for (int j = 0; j < r; ++j) acc += m[i * r + j] * s.at(q)[j];
                out.at(p)[i] = acc;
            }
        } else {
            std::copy(s.at(q), s.at(q) + r, out.at(p));
        }
    }
    return out;
}

EndoField shift_metric(const EndoField& k, const Twist& tw, int mu, int dir) {
    EndoField out(k.g, k.r);
    const int np = k.g->npoints(), r = k.r;
    std::vector<cplx> lft(r * r), t1(r * r);
    for (int p = 0; p < np; ++p) {
        bool crossed = false;
        const int q = k.g->shift(p, mu, dir, &crossed);
        if (crossed && tw.nontrivial[mu]) {
            const cplx* rgt = dir > 0 ? tw.inv(mu) : tw.mat(mu);
            smat::adjoint(rgt, lft.data(), r);
            smat::mul(lft.data(), k.at(q), t1.data(), r);
            smat::mul(t1.data(), rgt, out.at(p), r);
        } else {
            std::copy(k.at(q), k.at(q) + r * r, out.at(p));
        }
    }
    return out;
}

EndoField add_scaled(const EndoField& x, cplx c, const EndoField& y) {
    EndoField out = x;
    kernels::axpy(c, y.a.data(), out.a.data(), out.a.size());
    return out;
}

EndoField mul_fields(const EndoField& x, const EndoField& y) {
    EndoField out(x.g, x.r);
    for (int p = 0; p < x.g->npoints(); ++p) smat::mul(x.at(p), y.at(p), out.at(p), x.r);
    return out;
}

EndoField adjoint_field(const EndoField& x) {
    EndoField out(x.g, x.r);
    for (int p = 0; p < x.g->npoints(); ++p) smat::adjoint(x.at(p), out.at(p), x.r);
    return out;
}

ScalarField trace_re(const EndoField& x) {
    ScalarField out(x.g);
    for (int p = 0; p < x.g->npoints(); ++p) out.v[p] = smat::trace(x.at(p), x.r).real();
    return out;
}

ScalarField trace_im(const EndoField& x) {
    ScalarField out(x.g);
    for (int p = 0; p < x.g->npoints(); ++p) out.v[p] = smat::trace(x.at(p), x.r).imag();
    return out;
}

double fro_l2(const EndoField& x) {
    return std::sqrt(x.g->weight() * kernels::norm2sq(x.a.data(), x.a.size()));
}

double fro_linf(const EndoField& x) {
    double m = 0.0;
    for (int p = 0; p < x.g->npoints(); ++p) m = std::max(m, smat::fro_norm(x.at(p), x.r));
    return m;
}

double fro_l2(const FormEndoField& x) {
    double s = 0.0;
    for (const auto& c : x.comp) {
        const double v = fro_l2(c);
        s += v * v;
    }
    return std::sqrt(s);
}

MetricField::MetricField(EndoField values, double herm_tol) : k_(std::move(values)) {
    const int np = k_.g->npoints(), r = k_.r;
    if (!all_finite(k_.a.data(), k_.a.size())) throw Error("metric: entries must be finite");
    kinv_ = EndoField(k_.g, r);
    l_ = EndoField(k_.g, r);
    linv_ = EndoField(k_.g, r);
    std::vector<cplx> adj(r * r);
    for (int p = 0; p < np; ++p) {
        cplx* kp = k_.at(p);
        smat::adjoint(kp, adj.data(), r);
        double dev = 0.0, scale = 0.0;
        for (int i = 0; i < r * r; ++i) {
            dev += std::norm(kp[i] - adj[i]);
            scale += std::norm(kp[i]);
        }
        if (std::sqrt(dev) > herm_tol * std::max(1.0, std::sqrt(scale))) {
            std::ostringstream os;
            os << "metric: fiber at point " << p << " is not hermitian (deviation "
               << std::sqrt(dev) << ")";
            throw Error(os.str());
        }
        for (int i = 0; i < r * r; ++i) kp[i] = 0.5 * (kp[i] + adj[i]);
        try {
            smat::cholesky(kp, l_.at(p), r);
        } catch (const Error&) {
            std::ostringstream os;
            os << "metric: fiber at point " << p << " is not positive definite";
            throw Error(os.str());
        }
        smat::inverse(l_.at(p), linv_.at(p), r);
        // K^-1 = L^-dagger L^-1
        smat::adjoint(linv_.at(p), adj.data(), r);
        smat::mul(adj.data(), linv_.at(p), kinv_.at(p), r);
    }
}

MetricField MetricField::identity(const GridPtr& g, int r) {
    EndoField e(g, r);
    e.set_identity();
    return MetricField(std::move(e));
}

void ConnectionField::set_twist(int mu, const std::vector<cplx>& b) {
    if (mu < 0 || mu >= g->dim()) throw Error("twist axis out of range");
    twist.r = r;
    twist.set_axis(mu, b);
}

void ConnectionField::validate() const {
    for (int mu = 0; mu < A.naxes(); ++mu)
        if (!all_finite(A[mu].a.data(), A[mu].a.size()))
            throw Error("connection: coefficients must be finite");
    if (g->dim() == 2 && twist.nontrivial[0] && twist.nontrivial[1]) {
        std::vector<cplx> ab(r * r), ba(r * r);
        smat::mul(twist.mat(0), twist.mat(1), ab.data(), r);
        smat::mul(twist.mat(1), twist.mat(0), ba.data(), r);
        double dev = 0.0;
        for (int i = 0; i < r * r; ++i) dev += std::norm(ab[i] - ba[i]);
        const double s0 = smat::fro_norm(twist.mat(0), r), s1 = smat::fro_norm(twist.mat(1), r);
        if (std::sqrt(dev) > 1e-10 * std::max(1.0, s0 * s1))
            throw Error("connection: twists on the two axes must commute");
    }
}

} // namespace hmet
