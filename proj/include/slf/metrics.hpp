#pragma once

#include <array>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "slf/fit.hpp"

namespace slf {

/// BEV footprint corners, counter-clockwise.
std::array<Eigen::Vector2d, 4> bev_corners(const Box3& b);

/// Convex polygon clipped by a convex counter-clockwise clip polygon.
std::vector<Eigen::Vector2d> clip_convex(const std::vector<Eigen::Vector2d>& subject,
                                         const std::vector<Eigen::Vector2d>& clip);
double polygon_area(const std::vector<Eigen::Vector2d>& poly);

/// Rotated-rectangle footprint intersection area. Throws DegenerateBox.
double bev_intersection(const Box3& a, const Box3& b);
double iou_bev(const Box3& a, const Box3& b);
double iou_3d(const Box3& a, const Box3& b);

enum class IouKind { Bev, ThreeD };

struct Detection {
  Box3 box;
  double confidence{1};
};

struct ApResult {
  double ap{0};
  bool defined{true};  // false when there is no ground truth
  int tp{0}, fp{0}, fn{0};
  std::vector<int> match;  // per prediction: matched gt index or -1
};

/// Greedy matching by descending confidence (stable), then AP as the mean
/// interpolated precision at recall 1/40 .. 40/40.
ApResult ap_r40(const std::vector<Detection>& predictions, const std::vector<Box3>& gts, double iou_threshold,
                IouKind kind = IouKind::ThreeD);

/// |wrap(pred - gt)|, or with dagger the error modulo pi (front/rear flips ignored).
double orientation_error(double yaw_pred, double yaw_gt, bool dagger = false);

struct LabeledBox {
  int id{0};
  Box3 box;
  double confidence{1};
};

struct InstanceEval {
  int id{0};
  bool predicted{false};
  double iou_3d{0}, iou_bev{0};
  double center_error{0};
  double size_error{1};
  double yaw_error{0}, yaw_error_dagger{0};
};

struct EvalReport {
  std::map<double, ApResult> ap_3d, ap_bev;  // keyed by IoU threshold
  double mean_iou_3d{0}, mean_iou_bev{0};
  double translation_error{0};   // mean center distance, m
  double size_error{0};          // mean 1 - IoU of aligned boxes
  double orientation_error{0};   // mean, rad
  double orientation_error_dagger{0};
  int gt_count{0}, prediction_count{0};
  std::vector<InstanceEval> instances;  // per ground truth, id order
};

/// 1 - IoU of the two boxes after aligning centers and yaw.
double size_error(const Eigen::Vector3d& dims_a, const Eigen::Vector3d& dims_b);

/// AP per threshold uses geometric matching; the IoU and error means pair
/// predictions with ground truth by id (a missing prediction scores IoU 0
/// and is excluded from the error means).
EvalReport evaluate(const std::vector<LabeledBox>& predictions, const std::vector<LabeledBox>& gts,
                    const std::vector<double>& thresholds = {0.5, 0.7});

}  // namespace slf
