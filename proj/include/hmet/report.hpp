#pragma once

#include <string>

#include "json.hpp"

#include "hmet/continuity.hpp"
#include "hmet/detector.hpp"
#include "hmet/oracle1d.hpp"

namespace hmet {

nlohmann::json solve_report(const SolveOutcome& out);
nlohmann::json detect_report(const DetectorReport& rep);
nlohmann::json split_report_json(const SplitReport& rep);
nlohmann::json gauge_report(const GaugeFixResult& rep);
nlohmann::json classify_report_json(const ClassifyReport& rep);

void write_json_file(const nlohmann::json& j, const std::string& path);

} // namespace hmet
