#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "slf/fit.hpp"
#include "slf/metrics.hpp"
#include "slf/synth.hpp"

namespace slf {

/// One sweep cell: the baseline with at most one axis changed.
struct CellSpec {
  std::string axis{"baseline"};
  std::string value{"-"};
  std::string terms{"full"};  // full | mask+pc | pc | mask
  int dim{5};
  int bank{kBankSize};
  int prompt_points{3};
  int beams{64};
  std::string morphology{"none"};  // none | erode5 | erode9 | dilate5 | dilate9
};

struct SuiteSpec {
  std::string name{"suite"};
  std::uint64_t seed{1000};
  int scenes{50};
  int min_instances{1}, max_instances{5};
  FitConfig fit;
  int eligible_points{200};  // frustum points needed for the eligible stratum
  std::vector<CellSpec> cells;  // baseline first
};

/// Parses {name, seed, scenes, instances:[lo,hi], iterations, eligible_points,
/// axes:{terms, dim, bank, points, beams, morphology}}. Each listed value becomes
/// a cell differing from the baseline in that axis only; values equal to the
/// baseline are folded into the baseline cell. Throws SpecError.
SuiteSpec parse_suite(const std::string& json_text);

struct InstanceRecord {
  int scene{0};
  int id{0};
  FitStatus status{FitStatus::Ok};
  double iou_3d{0}, iou_bev{0};
  double center_error{0};
  double yaw_error{0}, yaw_error_dagger{0};
  double occlusion{0};
  int frustum_points{0};
  double confidence{0};
  bool eligible{false};  // unoccluded with at least eligible_points frustum points
};

struct CellMetrics {
  int instances{0}, eligible{0};
  double mean_iou_3d{0}, mean_iou_bev{0};
  double eligible_iou50{0};  // fraction of eligible instances with 3D IoU >= 0.5
  double median_center_error{0}, median_yaw_dagger{0};  // eligible stratum
  double mean_center_error{0}, mean_yaw_error{0}, mean_yaw_dagger{0};  // all instances
  double ap3d_50{0}, ap3d_70{0}, apbev_50{0}, apbev_70{0};
  double seconds{0};
};

struct CellResult {
  CellSpec spec;
  CellMetrics metrics;
  std::vector<InstanceRecord> records;
};

struct HarnessReport {
  std::string name;
  std::vector<CellResult> cells;
  const CellResult& find(const std::string& axis, const std::string& value) const;
};

using HarnessLog = std::function<void(const std::string&)>;

/// Scenes come from the default prior (79 models, d = 5) so that every cell
/// labels the same objects. Bank cells use d = min(dim, bank - 1).
HarnessReport run_harness(const SuiteSpec& spec, const HarnessLog& log = {});
CellResult run_cell(const SuiteSpec& spec, const CellSpec& cell, const HarnessLog& log = {});

CellMetrics summarize(const std::vector<InstanceRecord>& records, const std::vector<LabeledBox>& predictions,
                      const std::vector<LabeledBox>& gts);

/// One row per (cell, metric).
void write_csv(const HarnessReport& report, std::ostream& out);
std::string format_table(const HarnessReport& report);

}  // namespace slf
