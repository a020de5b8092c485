#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slf/geometry.hpp"
#include "slf/render.hpp"

namespace slf {

struct Prompt {
  std::vector<Eigen::Vector2d> points;
  std::optional<Eigen::Vector4d> box;  // u1, v1, u2, v2
  std::vector<Eigen::Vector2d> polygon;

  bool empty() const { return points.empty() && !box && polygon.empty(); }
};

struct Instance {
  int id{0};
  Prompt prompt;
  std::optional<Mask> mask;
};

/// N x 3 world-frame LiDAR points, kept in f32 as stored on disk.
using PointCloud = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct Scene {
  Camera camera;
  std::string image{"img.png"};
  PointCloud points;
  std::vector<Instance> instances;

  const Instance* find(int id) const;
};

/// Reads scene.json plus the referenced point file and masks. Throws
/// MissingFile, BadCalibration or MaskSizeMismatch.
Scene load_scene(const std::string& dir);
/// Writes scene.json, points.f32le and one m_<id>.png per masked instance.
void save_scene(const Scene& scene, const std::string& dir);

/// z = a * x + b * y + c.
struct GroundPlane {
  double a{0}, b{0}, c{0};
  int inliers{0};
  double threshold{0.05};

  double height(double x, double y) const { return a * x + b * y + c; }
  Eigen::Vector3d normal() const { return Eigen::Vector3d(-a, -b, 1).normalized(); }
};

struct RansacOptions {
  int iterations{512};
  double threshold{0.05};
  std::uint64_t seed{7};
};

/// Best three-point hypothesis by inlier count, refined by least squares on
/// its inliers. Candidates are index-sorted first so the result does not
/// depend on input order. Throws DegenerateGround below 10% inliers.
GroundPlane fit_ground_ransac(const std::vector<Eigen::Vector3d>& points, const RansacOptions& opts = {});

/// Points lower than the camera center minus 0.5 m.
std::vector<Eigen::Vector3d> ground_candidates(const Scene& scene);

struct FrustumCloud {
  int id{0};
  Eigen::Matrix3Xd points;
  std::vector<double> depths;  // camera-frame depth per point
  bool eligible{false};        // false signals TooFewPoints

  int size() const { return int(points.cols()); }
};

struct FrustumOptions {
  double ground_eps{0.05};
  int n_min{5};
};

/// LiDAR points in front of the camera whose pixel lies on the binarized mask,
/// minus points within ground_eps of the ground plane.
FrustumCloud frustum_points(const Scene& scene, const Instance& instance, const GroundPlane* ground,
                            const FrustumOptions& opts = {});

}  // namespace slf
