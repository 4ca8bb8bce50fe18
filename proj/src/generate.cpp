#include "hmet/generate.hpp"

#include <algorithm>
#include <cmath>

#include "hmet/bundle.hpp"
#include "hmet/oracle1d.hpp"
#include "hmet/rng.hpp"

namespace hmet {

namespace {

constexpr int kmax = 3;

// smooth periodic complex function from a band-limited Fourier sum
struct SmoothFn {
    int dim = 1;
    std::array<double, 2> len = {1.0, 1.0};
    std::vector<cplx> coef; // (2 kmax + 1)^dim entries

    static SmoothFn draw(const GridPtr& g, Rng& rng, double amp) {
        SmoothFn f;
        f.dim = g->dim();
        for (int mu = 0; mu < f.dim; ++mu) f.len[mu] = g->length(mu);
        const int m = 2 * kmax + 1;
        const int total = f.dim == 1 ? m : m * m;
        f.coef.resize(total);
        for (int q = 0; q < total; ++q) {
            const int k0 = q % m - kmax;
            const int k1 = f.dim == 1 ? 0 : q / m - kmax;
            const double decay = 1.0 / (1.0 + k0 * k0 + k1 * k1);
            f.coef[q] = amp * decay * rng.cnormal();
        }
        return f;
    }

    cplx eval(const std::array<double, 2>& x) const {
        const int m = 2 * kmax + 1;
        const int total = dim == 1 ? m : m * m;
        cplx s = 0.0;
        for (int q = 0; q < total; ++q) {
            const int k0 = q % m - kmax;
            const int k1 = dim == 1 ? 0 : q / m - kmax;
            double ph = 2.0 * M_PI * k0 * x[0] / len[0];
            if (dim == 2) ph += 2.0 * M_PI * k1 * x[1] / len[1];
            s += coef[q] * cplx(std::cos(ph), std::sin(ph));
        }
        return s;
    }
};

void fill_smooth_entry(EndoField& A, int i, int j, const SmoothFn& f) {
    const GridPtr& g = A.g;
    for (int p = 0; p < g->npoints(); ++p) A.at(p)[i * A.r + j] = f.eval(g->coords(p));
}

Problem base_problem(int dim, std::array<int, 2> sizes, int rank) {
    std::array<double, 2> len = {2.0 * M_PI, 2.0 * M_PI};
    Problem pb;
    pb.g = make_grid(dim, sizes, len);
    pb.rank = rank;
    pb.C = ConnectionField(pb.g, rank);
    return pb;
}

// unitary matrix from a random Hermitian generator
std::vector<cplx> random_unitary(int r, Rng& rng, double angle) {
    std::vector<cplx> h(static_cast<std::size_t>(r) * r);
    for (int i = 0; i < r; ++i) {
        h[i * r + i] = rng.normal();
        for (int j = i + 1; j < r; ++j) {
            const cplx z = rng.cnormal() * 0.7071;
            h[i * r + j] = z;
            h[j * r + i] = std::conj(z);
        }
    }
    for (auto& z : h) z *= cplx(0.0, angle);
    return expm(h, r);
}

std::vector<cplx> jordan_block(int r) {
    std::vector<cplx> b(static_cast<std::size_t>(r) * r, 0.0);
    for (int i = 0; i < r; ++i) b[i * r + i] = 1.0;
    for (int i = 0; i + 1 < r; ++i) b[i * r + (i + 1)] = 1.0;
    return b;
}

void require_dim1(const std::string& family, int dim) {
    if (dim != 1) throw Error("family '" + family + "' is one-dimensional");
}

void require_rank(const std::string& family, int rank, int need) {
    if (rank < need)
        throw Error("family '" + family + "' needs rank >= " + std::to_string(need));
}

} // namespace

Problem generate_problem(const std::string& family, int dim, std::array<int, 2> sizes, int rank,
                         std::uint64_t seed) {
    if (dim < 1 || dim > 2) throw Error("generate_problem: dim must be 1 or 2");
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);

    if (family == "r1_smooth") {
        Problem pb = base_problem(dim, sizes, 1);
        for (int mu = 0; mu < dim; ++mu)
            fill_smooth_entry(pb.C.A[mu], 0, 0, SmoothFn::draw(pb.g, rng, 0.8));
        return pb;
    }
    if (family == "antihermitian") {
        Problem pb = base_problem(dim, sizes, rank);
        for (int mu = 0; mu < dim; ++mu) {
            EndoField& A = pb.C.A[mu];
            for (int i = 0; i < rank; ++i)
                for (int j = i; j < rank; ++j) {
                    SmoothFn f = SmoothFn::draw(pb.g, rng, 0.5 / rank);
                    for (int p = 0; p < pb.g->npoints(); ++p) {
                        const cplx z = f.eval(pb.g->coords(p));
                        if (i == j) {
                            A.at(p)[i * rank + i] = cplx(0.0, z.real());
                        } else {
                            A.at(p)[i * rank + j] = z;
                            A.at(p)[j * rank + i] = -std::conj(z);
                        }
                    }
                }
        }
        return pb;
    }
    if (family == "unitary_twist") {
        require_dim1(family, dim);
        Problem pb = base_problem(dim, sizes, rank);
        pb.C.set_twist(0, random_unitary(rank, rng, 0.8));
        return pb;
    }
    if (family == "jordan_twist") {
        require_dim1(family, dim);
        require_rank(family, rank, 2);
        Problem pb = base_problem(dim, sizes, rank);
        pb.C.set_twist(0, jordan_block(rank));
        return pb;
    }
    if (family == "jordan_const") {
        require_dim1(family, dim);
        require_rank(family, rank, 2);
        Problem pb = base_problem(dim, sizes, rank);
        EndoField& A = pb.C.A[0];
        for (int p = 0; p < pb.g->npoints(); ++p)
            for (int i = 0; i + 1 < rank; ++i) A.at(p)[i * rank + (i + 1)] = 0.9;
        return pb;
    }
    if (family == "triangular_smooth") {
        require_dim1(family, dim);
        require_rank(family, rank, 2);
        Problem pb = base_problem(dim, sizes, rank);
        EndoField& A = pb.C.A[0];
        for (int i = 0; i < rank; ++i)
            for (int j = i + 1; j < rank; ++j) {
                SmoothFn f = SmoothFn::draw(pb.g, rng, 0.5);
                // constant offset keeps the loop average of the coupling away
                // from zero, so the loop transport stays unipotent nontrivial
                f.coef[kmax] += 0.8;
                fill_smooth_entry(A, i, j, f);
            }
        return pb;
    }
    if (family == "diag_blocks" || family == "scrambled_blocks") {
        require_rank(family, rank, 2);
        const int k = rank / 2;
        Problem pb = base_problem(dim, sizes, rank);
        for (int mu = 0; mu < dim; ++mu) {
            EndoField& A = pb.C.A[mu];
            for (int i = 0; i < rank; ++i)
                for (int j = 0; j < rank; ++j) {
                    const bool first = i < k && j < k;
                    const bool second = i >= k && j >= k;
                    if (!first && !second) continue;
                    fill_smooth_entry(A, i, j, SmoothFn::draw(pb.g, rng, 0.45));
                }
            // distinct constant diagonal shifts separate the two summands
            if (mu == 0)
                for (int p = 0; p < pb.g->npoints(); ++p)
                    for (int i = 0; i < rank; ++i)
                        A.at(p)[i * rank + i] += (i < k) ? 0.35 : -0.35;
        }
        if (family == "scrambled_blocks") {
            std::vector<cplx> gmat(static_cast<std::size_t>(rank) * rank);
            for (auto& z : gmat) z = 0.35 * rng.cnormal();
            for (int i = 0; i < rank; ++i) gmat[i * rank + i] += 0.0;
            std::vector<cplx> u = expm(gmat, rank);
            EndoField uf(pb.g, rank);
            for (int p = 0; p < pb.g->npoints(); ++p)
                std::copy(u.begin(), u.end(), uf.at(p));
            pb.C = gauge_act(uf, pb.C);
        }
        return pb;
    }
    if (family == "generic") {
        Problem pb = base_problem(dim, sizes, rank);
        for (int mu = 0; mu < dim; ++mu)
            for (int i = 0; i < rank; ++i)
                for (int j = 0; j < rank; ++j)
                    fill_smooth_entry(pb.C.A[mu], i, j, SmoothFn::draw(pb.g, rng, 0.6 / rank));
        return pb;
    }
    throw Error("unknown fixture family: " + family);
}

const std::vector<std::string>& generator_families() {
    static const std::vector<std::string> fams = {
        "r1_smooth",      "antihermitian",     "unitary_twist", "jordan_twist", "jordan_const",
        "triangular_smooth", "diag_blocks", "scrambled_blocks", "generic"};
    return fams;
}

} // namespace hmet
