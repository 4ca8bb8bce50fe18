#pragma once

#include <array>
#include <memory>
#include <vector>

#include "hmet/error.hpp"

namespace hmet {

// Uniform periodic grid on a flat circle (dim 1) or flat torus (dim 2).
// Point p has integer coordinates (i0, i1) with 0 <= i_mu < n[mu] and
// position x_mu = i_mu * h[mu]; all functions are periodic across the seam.
class GridManifold {
public:
    GridManifold(int dim, std::array<int, 2> sizes, std::array<double, 2> lengths);

    int dim() const { return dim_; }
    int size(int mu) const { return n_[mu]; }
    double length(int mu) const { return len_[mu]; }
    double spacing(int mu) const { return h_[mu]; }
    int npoints() const { return np_; }
    // cell volume (product of spacings), the quadrature weight of every point
    double weight() const { return w_; }
    double volume() const { return w_ * np_; }

    int index(int i0, int i1 = 0) const { return dim_ == 1 ? i0 : i0 * n_[1] + i1; }
    std::array<int, 2> coords_idx(int p) const {
        if (dim_ == 1) return {p, 0};
        return {p / n_[1], p % n_[1]};
    }
    std::array<double, 2> coords(int p) const {
        auto c = coords_idx(p);
        return {c[0] * h_[0], c[1] * h_[1]};
    }

    // Index of the point one step along axis mu (dir = +1 or -1), periodic.
    // *crossed is set when the step wraps around the seam.
    int shift(int p, int mu, int dir, bool* crossed = nullptr) const;

private:
    int dim_;
    std::array<int, 2> n_;
    std::array<double, 2> len_;
    std::array<double, 2> h_;
    int np_;
    double w_;
};

using GridPtr = std::shared_ptr<const GridManifold>;

GridPtr make_grid(int dim, std::array<int, 2> sizes, std::array<double, 2> lengths);

// Real scalar function on the grid, one value per point.
struct ScalarField {
    GridPtr g;
    std::vector<double> v;

    ScalarField() = default;
    explicit ScalarField(GridPtr grid) : g(std::move(grid)), v(g->npoints(), 0.0) {}
    double& operator[](int p) { return v[p]; }
    double operator[](int p) const { return v[p]; }
};

ScalarField forward_diff(const ScalarField& f, int mu);
ScalarField backward_diff(const ScalarField& f, int mu);
// sum over axes of the backward difference of the forward difference;
// spectrum is nonpositive, constants are the kernel
ScalarField laplacian(const ScalarField& f);

double integral(const ScalarField& f);
double field_mean(const ScalarField& f); // integral / volume
double l2_norm(const ScalarField& f);
double linf_norm(const ScalarField& f);

struct PoissonResult {
    ScalarField u;
    double rhs_mean;    // volume mean removed from the right hand side
    int iterations;
    double residual_l2; // of the projected system
};

// Solves laplacian(u) = rhs - mean(rhs) with mean(u) = 0 by conjugate
// gradients. Throws if |mean(rhs)| exceeds tol_mean_rel * l2_norm(rhs).
PoissonResult poisson_solve(const ScalarField& rhs, double rtol = 1e-13,
                            double tol_mean_rel = 1e-10);

} // namespace hmet
