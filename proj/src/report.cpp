#include "hmet/report.hpp"

#include <fstream>

namespace hmet {

using nlohmann::json;

namespace {

const char* status_name(OutcomeStatus s) {
    switch (s) {
        case OutcomeStatus::Harmonic: return "harmonic";
        case OutcomeStatus::BlowUp: return "blow-up";
        default: return "inconclusive";
    }
}

json complex_pairs(const std::vector<cplx>& v) {
    json a = json::array();
    for (const cplx& z : v) a.push_back({z.real(), z.imag()});
    return a;
}

} // namespace

json solve_report(const SolveOutcome& out) {
    json j;
    j["status"] = status_name(out.status);
    j["message"] = out.message;
    j["final_residual"] = out.final_residual;
    j["final_eps"] = out.final_eps;
    json stages = json::array();
    for (const auto& s : out.trace.stages) {
        stages.push_back({{"eps", s.eps},
                          {"iters", s.iters},
                          {"residual_l2", s.residual_l2},
                          {"logf_l2", s.logf_l2},
                          {"logf_linf", s.logf_linf},
                          {"energy", s.energy},
                          {"fmin", s.fmin},
                          {"fmax", s.fmax},
                          {"converged", s.converged}});
    }
    j["stages"] = stages;
    return j;
}

json detect_report(const DetectorReport& rep) {
    json j;
    j["found"] = rep.found;
    j["message"] = rep.message;
    j["clustered"] = rep.split.clustered;
    j["gap"] = rep.split.gap;
    j["spread"] = rep.split.spread;
    j["best_defect"] = rep.best_defect;
    j["branch_mean"] = rep.split.branch_mean;
    j["branch_var"] = rep.split.branch_var;
    json cl = json::array();
    for (std::size_t i = 0; i < rep.split.projections.size(); ++i) {
        const auto& P = rep.split.projections[i];
        json c;
        c["rank"] = P.rank;
        c["threshold"] = P.threshold;
        if (i < rep.invariance.size()) {
            const auto& iv = rep.invariance[i];
            c["invariance"] = iv.invariance;
            c["invariance_tw"] = iv.invariance_tw;
            c["reducing"] = iv.reducing;
            c["psi_compat"] = iv.psi_compat;
            c["idempotency"] = iv.idempotency;
            c["sa_defect"] = iv.sa_defect;
        }
        cl.push_back(c);
    }
    j["clusters"] = cl;
    return j;
}

json split_report_json(const SplitReport& rep) {
    json j;
    j["rank"] = rep.restricted.r;
    j["beta_upper"] = rep.beta_upper;
    j["beta_lower"] = rep.beta_lower;
    j["frame_defect"] = rep.frame_defect;
    j["seam_defect"] = rep.seam_defect;
    j["input_residual"] = rep.input_residual;
    j["restricted_residual"] = rep.restricted_residual;
    j["complement_residual"] = rep.complement_residual;
    json seams = json::array();
    for (const auto& b : rep.seam) seams.push_back(complex_pairs(b));
    j["seam"] = seams;
    json seams2 = json::array();
    for (const auto& b : rep.seam_perp) seams2.push_back(complex_pairs(b));
    j["seam_perp"] = seams2;
    return j;
}

json gauge_report(const GaugeFixResult& rep) {
    json j;
    j["converged"] = rep.converged;
    j["residual_l2"] = rep.residual_l2;
    j["iters"] = rep.iters;
    return j;
}

json classify_report_json(const ClassifyReport& rep) {
    json j;
    j["class"] = rep.cls == MonodromyClass::SemiSimple ? "semi-simple" : "non-semi-simple";
    j["constant_coefficient"] = rep.constant_coefficient;
    j["monodromy"] = complex_pairs(rep.monodromy);
    j["eigenvalues"] = complex_pairs(rep.eigenvalues);
    j["alg_mult"] = rep.alg_mult;
    j["geo_mult"] = rep.geo_mult;
    return j;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open output file: " + path);
    f << j.dump(2) << "\n";
    if (!f.good()) throw Error("write failed: " + path);
}

} // namespace hmet
