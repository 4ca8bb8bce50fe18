#include <array>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "hmet/continuity.hpp"
#include "hmet/detector.hpp"
#include "hmet/generate.hpp"
#include "hmet/oracle1d.hpp"
#include "hmet/problem_io.hpp"
#include "hmet/report.hpp"

namespace {

using namespace hmet;

// exit codes: 0 success (harmonic / found / converged), 2 blow-up or
// non-semi-simple, 3 inconclusive or nothing to report, 1 usage or data error
constexpr int kOk = 0;
constexpr int kErr = 1;
constexpr int kBlowUp = 2;
constexpr int kNothing = 3;

MetricField starting_metric(const Problem& pb, bool conformal) {
    MetricField K0 = pb.metric0 ? MetricField(*pb.metric0)
                                : MetricField::identity(pb.g, pb.rank);
    if (!conformal) return K0;
    return initial_metric(pb.C, K0);
}

int exit_code(OutcomeStatus s) {
    switch (s) {
        case OutcomeStatus::Harmonic: return kOk;
        case OutcomeStatus::BlowUp: return kBlowUp;
        default: return kNothing;
    }
}

void print_solve_summary(const SolveOutcome& out) {
    const char* st = out.status == OutcomeStatus::Harmonic  ? "harmonic"
                     : out.status == OutcomeStatus::BlowUp ? "blow-up"
                                                           : "inconclusive";
    std::cout << "status " << st << "\n";
    std::cout << "final_eps " << out.final_eps << "\n";
    std::cout << "final_residual " << out.final_residual << "\n";
    std::cout << "stages " << out.trace.stages.size() << "\n";
    if (!out.message.empty()) std::cout << "message " << out.message << "\n";
}

struct SolveArgs {
    std::string problem, out, trace, dump_limit;
    double eps_min = 1e-6;
    double tol = 1e-10;
    std::string mode = "newton";
    bool raw_start = false;
    bool quiet = false;
};

SolveOutcome run_solve(const SolveArgs& a, Problem& pb) {
    pb = load_problem_file(a.problem);
    MetricField K0 = starting_metric(pb, !a.raw_start);
    SolverConfig cfg;
    cfg.eps_min = a.eps_min;
    cfg.newton_tol = a.tol;
    cfg.mode = a.mode == "flow" ? SolveMode::Flow : SolveMode::Newton;
    SolveOutcome out = continuity_solve(pb.C, K0, cfg, a.quiet ? nullptr : &std::cerr);
    if (!a.trace.empty()) {
        std::ofstream f(a.trace);
        if (!f) throw Error("cannot open trace file: " + a.trace);
        write_trace_csv(out.trace, f);
    }
    if (!a.dump_limit.empty()) {
        Problem dumped = pb;
        dumped.extra["u_limit"] = out.u_limit;
        if (out.K_base) dumped.extra["k_base"] = out.K_base->values();
        save_problem_file(dumped, a.dump_limit);
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"harmonic bundle metrics by continuation, with a blow-up analyzer"};
    app.require_subcommand(1);

    SolveArgs sa;
    double gap_tol = 0.05, defect_tol = 1e-3, fix_tol = 1e-8, oracle_tol = 1e-9;
    bool classify = false;

    std::string gen_family = "generic", gen_out;
    int gen_dim = 1, gen_rank = 2;
    std::vector<int> gen_grid = {64};
    std::uint64_t gen_seed = 1;

    auto add_solve_opts = [&](CLI::App* c) {
        c->add_option("--problem", sa.problem, "problem file")->required();
        c->add_option("--out", sa.out, "write a JSON report here");
        c->add_option("--eps-min", sa.eps_min, "smallest positive continuation value");
        c->add_option("--tol", sa.tol, "stage convergence tolerance");
        c->add_option("--mode", sa.mode, "newton or flow")
            ->check(CLI::IsMember({"newton", "flow"}));
        c->add_flag("--raw-start", sa.raw_start, "skip the conformal start correction");
        c->add_flag("--quiet", sa.quiet, "suppress progress output");
    };

    auto* solve = app.add_subcommand("solve", "run the continuation solver");
    add_solve_opts(solve);
    solve->add_option("--trace", sa.trace, "write the stage trace as CSV");
    solve->add_option("--dump-limit", sa.dump_limit,
                      "write the problem back with the normalized log-ratio direction attached");

    auto* detect = app.add_subcommand(
        "detect", "solve, then certify an invariant sub-bundle from the blow-up direction");
    add_solve_opts(detect);
    detect->add_option("--gap-tol", gap_tol, "eigenvalue cluster gap threshold");
    detect->add_option("--defect-tol", defect_tol, "range-invariance acceptance threshold");

    auto* split = app.add_subcommand(
        "split", "solve, then decompose along a transport-commuting projection");
    add_solve_opts(split);

    auto* gfix = app.add_subcommand(
        "gauge-fix", "solve, then move the solution into the gauge of the starting metric");
    add_solve_opts(gfix);
    gfix->add_option("--fix-tol", fix_tol, "gauge residual target");

    auto* oracle = app.add_subcommand("oracle", "independent 1-D reference solve or classification");
    oracle->add_option("--problem", sa.problem, "problem file")->required();
    oracle->add_option("--out", sa.out, "write a JSON report here");
    oracle->add_option("--eps-min", sa.eps_min, "smallest positive continuation value");
    oracle->add_option("--tol", oracle_tol, "reference solver tolerance");
    oracle->add_flag("--classify", classify, "classify the loop monodromy instead of solving");

    auto* gen = app.add_subcommand("gen", "write a deterministic fixture problem");
    gen->add_option("--family", gen_family, "fixture family")
        ->check(CLI::IsMember(generator_families()));
    gen->add_option("--dim", gen_dim, "base dimension")->check(CLI::Range(1, 2));
    gen->add_option("--grid", gen_grid, "points per axis")->expected(1, 2);
    gen->add_option("--rank", gen_rank, "fiber rank");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output problem file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*solve) {
            Problem pb;
            SolveOutcome out = run_solve(sa, pb);
            print_solve_summary(out);
            if (!sa.out.empty()) write_json_file(solve_report(out), sa.out);
            return exit_code(out.status);
        }
        if (*detect) {
            Problem pb;
            SolveOutcome out = run_solve(sa, pb);
            print_solve_summary(out);
            if (out.status != OutcomeStatus::BlowUp) {
                std::cout << "detect nothing-to-certify\n";
                if (!sa.out.empty()) write_json_file(solve_report(out), sa.out);
                return out.status == OutcomeStatus::Harmonic ? kNothing : kErr;
            }
            DetectorReport rep =
                detect_invariant_subbundle(pb.C, *out.K_base, out.u_limit, gap_tol, defect_tol);
            std::cout << "detect " << (rep.found ? "found" : "not-found") << "\n";
            std::cout << "detect_message " << rep.message << "\n";
            if (!sa.out.empty()) {
                nlohmann::json j = detect_report(rep);
                j["solve"] = solve_report(out);
                write_json_file(j, sa.out);
            }
            return rep.found ? kOk : kNothing;
        }
        if (*split) {
            Problem pb;
            SolveOutcome out = run_solve(sa, pb);
            print_solve_summary(out);
            if (out.status != OutcomeStatus::Harmonic) {
                std::cout << "split not-harmonic\n";
                return exit_code(out.status) == kOk ? kErr : exit_code(out.status);
            }
            EndoField pi;
            if (!parallel_projection(pb.C, pi)) {
                std::cout << "split simple\n";
                if (!sa.out.empty()) write_json_file(solve_report(out), sa.out);
                return kNothing;
            }
            SplitReport rep = split_harmonic(pb.C, *out.H, pi);
            std::cout << "split rank " << rep.restricted.r << "\n";
            std::cout << "split beta_upper " << rep.beta_upper << "\n";
            std::cout << "split beta_lower " << rep.beta_lower << "\n";
            std::cout << "split restricted_residual " << rep.restricted_residual << "\n";
            std::cout << "split complement_residual " << rep.complement_residual << "\n";
            if (!sa.out.empty()) {
                nlohmann::json j = split_report_json(rep);
                j["solve"] = solve_report(out);
                write_json_file(j, sa.out);
            }
            return kOk;
        }
        if (*gfix) {
            Problem pb;
            SolveOutcome out = run_solve(sa, pb);
            print_solve_summary(out);
            if (out.status != OutcomeStatus::Harmonic) return exit_code(out.status);
            MetricField K0 = starting_metric(pb, !sa.raw_start);
            GaugeFixResult rep = gauge_fix(pb.C, K0, *out.H, fix_tol);
            std::cout << "gauge_fix " << (rep.converged ? "converged" : "stalled") << "\n";
            std::cout << "gauge_residual " << rep.residual_l2 << "\n";
            if (!sa.out.empty()) {
                nlohmann::json j = gauge_report(rep);
                j["solve"] = solve_report(out);
                write_json_file(j, sa.out);
            }
            return rep.converged ? kOk : kNothing;
        }
        if (*oracle) {
            Problem pb = load_problem_file(sa.problem);
            if (classify) {
                ClassifyReport rep = oracle_classify(pb.C);
                const bool ss = rep.cls == MonodromyClass::SemiSimple;
                std::cout << "class " << (ss ? "semi-simple" : "non-semi-simple") << "\n";
                if (!sa.out.empty()) write_json_file(classify_report_json(rep), sa.out);
                return ss ? kOk : kBlowUp;
            }
            EndoField K0v = pb.metric0 ? *pb.metric0 : EndoField(pb.g, pb.rank);
            if (!pb.metric0) K0v.set_identity();
            OracleResult res = oracle_solve_1d(pb.C, K0v, sa.eps_min, oracle_tol);
            std::cout << "oracle " << (res.converged ? "converged" : "failed") << "\n";
            std::cout << "oracle_residual " << res.final_residual << "\n";
            std::cout << "oracle_eps " << res.final_eps << "\n";
            return res.converged ? kOk : kBlowUp;
        }
        if (*gen) {
            std::array<int, 2> sizes = {gen_grid[0], gen_grid.size() > 1 ? gen_grid[1] : gen_grid[0]};
            Problem pb = generate_problem(gen_family, gen_dim, sizes, gen_rank, gen_seed);
            save_problem_file(pb, gen_out);
            std::cout << "wrote " << gen_out << "\n";
            return kOk;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kErr;
    }
    return kErr;
}
