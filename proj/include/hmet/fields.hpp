#pragma once

#include <array>
#include <vector>

#include "hmet/grid.hpp"
#include "hmet/linalg.hpp"

namespace hmet {

// Endomorphism-valued function: an r x r complex matrix per grid point,
// stored row-major per point, points contiguous.
struct EndoField {
    GridPtr g;
    int r = 0;
    std::vector<cplx> a;

    EndoField() = default;
    EndoField(GridPtr grid, int rank)
        : g(std::move(grid)), r(rank), a(static_cast<std::size_t>(g->npoints()) * rank * rank, 0.0) {}

    cplx* at(int p) { return a.data() + static_cast<std::size_t>(p) * r * r; }
    const cplx* at(int p) const { return a.data() + static_cast<std::size_t>(p) * r * r; }

    void set_identity() {
        for (int p = 0; p < g->npoints(); ++p) smat::identity(at(p), r);
    }
};

// One endomorphism-valued component per grid axis.
struct FormEndoField {
    std::vector<EndoField> comp;

    FormEndoField() = default;
    FormEndoField(const GridPtr& g, int r) {
        for (int mu = 0; mu < g->dim(); ++mu) comp.emplace_back(g, r);
    }
    EndoField& operator[](int mu) { return comp[mu]; }
    const EndoField& operator[](int mu) const { return comp[mu]; }
    int naxes() const { return static_cast<int>(comp.size()); }
};

// C^r-valued section, one column vector per point.
struct SectionField {
    GridPtr g;
    int r = 0;
    std::vector<cplx> a;

    SectionField() = default;
    SectionField(GridPtr grid, int rank)
        : g(std::move(grid)), r(rank), a(static_cast<std::size_t>(g->npoints()) * rank, 0.0) {}

    cplx* at(int p) { return a.data() + static_cast<std::size_t>(p) * r; }
    const cplx* at(int p) const { return a.data() + static_cast<std::size_t>(p) * r; }
};

// Constant transition endomorphisms applied when a stencil crosses the
// periodic seam of an axis. Identity components cost nothing.
struct Twist {
    int r = 0;
    std::array<bool, 2> nontrivial = {false, false};
    std::array<std::vector<cplx>, 2> B, Binv;

    static Twist identity(int rank) {
        Twist t;
        t.r = rank;
        return t;
    }
    void set_axis(int mu, const std::vector<cplx>& b);
    const cplx* mat(int mu) const { return B[mu].data(); }
    const cplx* inv(int mu) const { return Binv[mu].data(); }
};

// Whole-field shifted copies, conjugating by the twist where the step
// crosses the seam. dir is +1 or -1.
// endomorphisms: value becomes B f B^-1 across the +seam, B^-1 f B across -.
EndoField shift_endo(const EndoField& f, const Twist& tw, int mu, int dir);
// sections: B s across the +seam, B^-1 s across -.
SectionField shift_section(const SectionField& s, const Twist& tw, int mu, int dir);
// metrics: B^-dagger K B^-1 across the +seam, B^dagger K B across -.
EndoField shift_metric(const EndoField& k, const Twist& tw, int mu, int dir);

// pointwise algebra
EndoField add_scaled(const EndoField& x, cplx c, const EndoField& y); // x + c y
EndoField mul_fields(const EndoField& x, const EndoField& y);
EndoField adjoint_field(const EndoField& x);
ScalarField trace_re(const EndoField& x);
ScalarField trace_im(const EndoField& x);

// norms: plain Frobenius fiber norm with the grid quadrature weight
double fro_l2(const EndoField& x);
double fro_linf(const EndoField& x);
double fro_l2(const FormEndoField& x);

// Hermitian positive definite metric with cached derived data per point:
// inverse, lower Cholesky factor L (K = L L^dagger) and its inverse.
class MetricField {
public:
    // validates hermiticity (tolerance herm_tol * fiber scale), positivity
    // and finiteness; symmetrizes roundoff-level asymmetry before caching
    explicit MetricField(EndoField values, double herm_tol = 1e-12);

    static MetricField identity(const GridPtr& g, int r);

    const GridPtr& grid() const { return k_.g; }
    int rank() const { return k_.r; }
    const EndoField& values() const { return k_; }
    const EndoField& inverse() const { return kinv_; }
    const EndoField& chol() const { return l_; }
    const EndoField& chol_inv() const { return linv_; }

    const cplx* at(int p) const { return k_.at(p); }
    const cplx* inv_at(int p) const { return kinv_.at(p); }
    const cplx* l_at(int p) const { return l_.at(p); }
    const cplx* linv_at(int p) const { return linv_.at(p); }

private:
    EndoField k_, kinv_, l_, linv_;
};

// Connection in first-order form: per-axis coefficient fields A_mu plus the
// seam twist. The covariant forward difference of a section s is
//   (D+_mu s)(x) + A_mu(x) s(x)
// with the twist applied inside the shifted evaluation.
struct ConnectionField {
    GridPtr g;
    int r = 0;
    FormEndoField A;
    Twist twist;

    ConnectionField() = default;
    ConnectionField(GridPtr grid, int rank)
        : g(std::move(grid)), r(rank), A(g, rank), twist(Twist::identity(rank)) {}

    void set_twist(int mu, const std::vector<cplx>& b);
    void validate() const; // finite entries, commuting twists in dim 2
};

} // namespace hmet
