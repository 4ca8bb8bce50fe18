#include "hmet/problem_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hmet {

namespace {

double parse_finite(std::istringstream& ls, const char* what, int lineno) {
    double v;
    if (!(ls >> v) || !std::isfinite(v)) {
        std::ostringstream msg;
        msg << "problem file line " << lineno << ": bad " << what;
        throw Error(msg.str());
    }
    return v;
}

// reads count complex entries, one "re im" pair per line
void read_pairs(std::istream& is, int& lineno, std::size_t count, cplx* out) {
    std::string line;
    for (std::size_t q = 0; q < count; ++q) {
        if (!std::getline(is, line)) throw Error("problem file: unexpected end of data block");
        ++lineno;
        std::istringstream ls(line);
        const double re = parse_finite(ls, "entry", lineno);
        const double im = parse_finite(ls, "entry", lineno);
        out[q] = cplx(re, im);
    }
}

void write_pairs(std::ostream& os, const cplx* v, std::size_t count) {
    char buf[80];
    for (std::size_t q = 0; q < count; ++q) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", v[q].real(), v[q].imag());
        os << buf;
    }
}

} // namespace

Problem load_problem(std::istream& is) {
    std::string line, tok;
    int lineno = 0;
    if (!std::getline(is, line)) throw Error("problem file: empty input");
    ++lineno;
    if (line != "hmet-problem v1") throw Error("problem file: unrecognized header");

    int dim = 0, rank = 0;
    std::array<int, 2> sizes = {0, 0};
    std::array<double, 2> lengths = {0.0, 0.0};
    bool have_dim = false, have_size = false, have_len = false, have_rank = false;

    Problem pb;
    std::vector<char> conn_seen;
    bool grid_built = false;
    bool finished = false;

    auto build_grid = [&]() {
        if (grid_built) return;
        if (!have_dim || !have_size || !have_len || !have_rank)
            throw Error("problem file: data block before the dim/size/length/rank header");
        pb.g = make_grid(dim, sizes, lengths);
        pb.rank = rank;
        pb.C = ConnectionField(pb.g, rank);
        conn_seen.assign(dim, 0);
        grid_built = true;
    };

    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        if (!(ls >> tok) || tok.empty() || tok[0] == '#') continue;
        if (tok == "dim") {
            dim = static_cast<int>(parse_finite(ls, "dim", lineno));
            have_dim = true;
        } else if (tok == "size") {
            if (!have_dim) throw Error("problem file: size before dim");
            for (int mu = 0; mu < dim; ++mu)
                sizes[mu] = static_cast<int>(parse_finite(ls, "size", lineno));
            have_size = true;
        } else if (tok == "length") {
            if (!have_dim) throw Error("problem file: length before dim");
            for (int mu = 0; mu < dim; ++mu) lengths[mu] = parse_finite(ls, "length", lineno);
            have_len = true;
        } else if (tok == "rank") {
            rank = static_cast<int>(parse_finite(ls, "rank", lineno));
            if (rank < 1 || rank > 16) throw Error("problem file: rank out of range");
            have_rank = true;
        } else if (tok == "twist") {
            build_grid();
            const int mu = static_cast<int>(parse_finite(ls, "twist axis", lineno));
            if (mu < 0 || mu >= dim) throw Error("problem file: twist axis out of range");
            std::vector<cplx> b(static_cast<std::size_t>(rank) * rank);
            read_pairs(is, lineno, b.size(), b.data());
            pb.C.set_twist(mu, b);
        } else if (tok == "connection") {
            build_grid();
            const int mu = static_cast<int>(parse_finite(ls, "connection axis", lineno));
            if (mu < 0 || mu >= dim) throw Error("problem file: connection axis out of range");
            read_pairs(is, lineno, pb.C.A[mu].a.size(), pb.C.A[mu].a.data());
            conn_seen[mu] = 1;
        } else if (tok == "metric") {
            build_grid();
            EndoField m(pb.g, rank);
            read_pairs(is, lineno, m.a.size(), m.a.data());
            pb.metric0 = std::move(m);
        } else if (tok == "endofield") {
            build_grid();
            std::string name;
            if (!(ls >> name)) throw Error("problem file: endofield without a name");
            EndoField m(pb.g, rank);
            read_pairs(is, lineno, m.a.size(), m.a.data());
            pb.extra.emplace(name, std::move(m));
        } else if (tok == "end") {
            finished = true;
            break;
        } else {
            std::ostringstream msg;
            msg << "problem file line " << lineno << ": unknown keyword '" << tok << "'";
            throw Error(msg.str());
        }
    }
    if (!finished) throw Error("problem file: missing end marker");
    build_grid();
    for (int mu = 0; mu < dim; ++mu)
        if (!conn_seen[mu]) {
            std::ostringstream msg;
            msg << "problem file: connection block for axis " << mu << " missing";
            throw Error(msg.str());
        }
    pb.C.validate();
    return pb;
}

Problem load_problem_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open problem file: " + path);
    return load_problem(f);
}

void save_problem(const Problem& pb, std::ostream& os) {
    const GridPtr& g = pb.g;
    char buf[128];
    os << "hmet-problem v1\n";
    os << "dim " << g->dim() << "\n";
    os << "size";
    for (int mu = 0; mu < g->dim(); ++mu) os << " " << g->size(mu);
    os << "\nlength";
    for (int mu = 0; mu < g->dim(); ++mu) {
        std::snprintf(buf, sizeof(buf), " %.17g", g->length(mu));
        os << buf;
    }
    os << "\nrank " << pb.rank << "\n";
    for (int mu = 0; mu < g->dim(); ++mu)
        if (pb.C.twist.nontrivial[mu]) {
            os << "twist " << mu << "\n";
            write_pairs(os, pb.C.twist.mat(mu), static_cast<std::size_t>(pb.rank) * pb.rank);
        }
    for (int mu = 0; mu < g->dim(); ++mu) {
        os << "connection " << mu << "\n";
        write_pairs(os, pb.C.A[mu].a.data(), pb.C.A[mu].a.size());
    }
    if (pb.metric0) {
        os << "metric\n";
        write_pairs(os, pb.metric0->a.data(), pb.metric0->a.size());
    }
    for (const auto& [name, f] : pb.extra) {
        os << "endofield " << name << "\n";
        write_pairs(os, f.a.data(), f.a.size());
    }
    os << "end\n";
}

void save_problem_file(const Problem& pb, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open output file: " + path);
    save_problem(pb, f);
    if (!f.good()) throw Error("write failed: " + path);
}

} // namespace hmet
