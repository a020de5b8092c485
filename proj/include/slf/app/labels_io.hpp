#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "slf/fit.hpp"
#include "slf/metrics.hpp"

namespace slf::app {

/// One labels.json entry. `center`, `dims` and `yaw` describe the extracted
/// box; `energy` holds the weighted terms at the returned parameters.
nlohmann::json label_to_json(const FitResult& r, const FitConfig& cfg);
/// Array of entries in result order.
nlohmann::json labels_to_json(const std::vector<FitResult>& results, const FitConfig& cfg);
/// Canonical text form: two-space indent and a trailing newline.
std::string dump_labels(const nlohmann::json& labels);

/// Boxes of a labels.json array, confidence taken from the entry. Throws CorruptFile.
std::vector<LabeledBox> labels_from_json(const std::string& text);
std::vector<LabeledBox> load_labels(const std::string& path);

/// Evaluation report as JSON; AP maps are keyed by the threshold printed with two decimals.
nlohmann::json report_to_json(const EvalReport& report);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace slf::app
