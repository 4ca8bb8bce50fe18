#include "hmet/grid.hpp"

#include <cmath>
#include <sstream>

#include "hmet/kernels.hpp"

namespace hmet {

GridManifold::GridManifold(int dim, std::array<int, 2> sizes, std::array<double, 2> lengths)
    : dim_(dim), n_(sizes), len_(lengths) {
    if (dim != 1 && dim != 2) throw Error("grid dimension must be 1 or 2");
    if (dim == 1) {
        n_[1] = 1;
        len_[1] = 1.0;
    }
    for (int mu = 0; mu < dim; ++mu) {
        if (n_[mu] < 3) throw Error("grid needs at least 3 points per axis");
        if (!(len_[mu] > 0.0) || !std::isfinite(len_[mu]))
            throw Error("grid axis length must be positive and finite");
    }
    h_[0] = len_[0] / n_[0];
    h_[1] = dim == 2 ? len_[1] / n_[1] : 1.0;
    np_ = n_[0] * n_[1];
    w_ = h_[0] * (dim == 2 ? h_[1] : 1.0);
}

int GridManifold::shift(int p, int mu, int dir, bool* crossed) const {
    auto c = coords_idx(p);
    int i = c[mu] + dir;
    bool wrap = false;
    if (i >= n_[mu]) {
        i -= n_[mu];
        wrap = true;
    } else if (i < 0) {
        i += n_[mu];
        wrap = true;
    }
    if (crossed) *crossed = wrap;
    c[mu] = i;
    return index(c[0], c[1]);
}

GridPtr make_grid(int dim, std::array<int, 2> sizes, std::array<double, 2> lengths) {
    return std::make_shared<GridManifold>(dim, sizes, lengths);
}

ScalarField forward_diff(const ScalarField& f, int mu) {
    ScalarField out(f.g);
    const double invh = 1.0 / f.g->spacing(mu);
    const int np = f.g->npoints();
    for (int p = 0; p < np; ++p) out.v[p] = (f.v[f.g->shift(p, mu, +1)] - f.v[p]) * invh;
    return out;
}

ScalarField backward_diff(const ScalarField& f, int mu) {
    ScalarField out(f.g);
    const double invh = 1.0 / f.g->spacing(mu);
    const int np = f.g->npoints();
    for (int p = 0; p < np; ++p) out.v[p] = (f.v[p] - f.v[f.g->shift(p, mu, -1)]) * invh;
    return out;
}

ScalarField laplacian(const ScalarField& f) {
    ScalarField out(f.g);
    for (int mu = 0; mu < f.g->dim(); ++mu) {
        ScalarField d = backward_diff(forward_diff(f, mu), mu);
        for (int p = 0; p < f.g->npoints(); ++p) out.v[p] += d.v[p];
    }
    return out;
}

double integral(const ScalarField& f) {
    double s = 0.0;
    for (double x : f.v) s += x;
    return s * f.g->weight();
}

double field_mean(const ScalarField& f) { return integral(f) / f.g->volume(); }

double l2_norm(const ScalarField& f) {
    return std::sqrt(f.g->weight() * kernels::dot_d(f.v.data(), f.v.data(), f.v.size()));
}

double linf_norm(const ScalarField& f) {
    double m = 0.0;
    for (double x : f.v) m = std::max(m, std::fabs(x));
    return m;
}

PoissonResult poisson_solve(const ScalarField& rhs, double rtol, double tol_mean_rel) {
    const auto& g = rhs.g;
    const int np = g->npoints();

    const double mean = field_mean(rhs);
    const double rhs_l2 = l2_norm(rhs);
    if (std::fabs(mean) > tol_mean_rel * std::max(rhs_l2, 1e-300)) {
        std::ostringstream os;
        os << "poisson_solve: right hand side has nonzero volume mean " << mean
           << " (l2 " << rhs_l2 << "), not in the range of the laplacian";
        throw Error(os.str());
    }

    // b = -(rhs - mean), solve (-laplacian) u = b, SPD on the mean-zero subspace
    ScalarField b(g);
    for (int p = 0; p < np; ++p) b.v[p] = -(rhs.v[p] - mean);

    PoissonResult res;
    res.u = ScalarField(g);
    res.rhs_mean = mean;
    res.iterations = 0;

    const double b2 = kernels::dot_d(b.v.data(), b.v.data(), np);
    if (b2 == 0.0) {
        res.residual_l2 = 0.0;
        return res;
    }
    const double stop2 = rtol * rtol * b2;

    ScalarField r = b;
    ScalarField pdir = r;
    ScalarField ap(g);
    double rr = b2;
    const int maxit = std::max(200, 20 * np);
    for (int it = 0; it < maxit; ++it) {
        ScalarField lap = laplacian(pdir);
        for (int p = 0; p < np; ++p) ap.v[p] = -lap.v[p];
        const double pap = kernels::dot_d(pdir.v.data(), ap.v.data(), np);
        if (!(pap > 0.0)) break;
        const double alpha = rr / pap;
        kernels::axpy_d(alpha, pdir.v.data(), res.u.v.data(), np);
        kernels::axpy_d(-alpha, ap.v.data(), r.v.data(), np);
        ++res.iterations;
        const double rr_new = kernels::dot_d(r.v.data(), r.v.data(), np);
        if (rr_new <= stop2) break;
        const double beta = rr_new / rr;
        for (int p = 0; p < np; ++p) pdir.v[p] = r.v[p] + beta * pdir.v[p];
        rr = rr_new;
        if ((it + 1) % 64 == 0) {
            // roundoff keeps the iterates in the mean-zero subspace only
            // approximately; re-project now and then
            const double um = field_mean(res.u);
            const double rm = field_mean(r);
            for (int p = 0; p < np; ++p) {
                res.u.v[p] -= um;
                r.v[p] -= rm;
            }
        }
    }

    const double um = field_mean(res.u);
    for (int p = 0; p < np; ++p) res.u.v[p] -= um;

    ScalarField chk = laplacian(res.u);
    for (int p = 0; p < np; ++p) chk.v[p] -= (rhs.v[p] - mean);
    res.residual_l2 = l2_norm(chk);
    return res;
}

} // namespace hmet
