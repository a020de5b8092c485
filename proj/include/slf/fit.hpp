#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "slf/energy.hpp"
#include "slf/prior.hpp"
#include "slf/render.hpp"
#include "slf/scene.hpp"

namespace slf {

/// Oriented 3D box: center (world), dims (length along heading, width, height), yaw.
struct Box3 {
  Eigen::Vector3d center{Eigen::Vector3d::Zero()};
  Eigen::Vector3d dims{Eigen::Vector3d::Ones()};
  double yaw{0};
};

struct FitConfig {
  double learning_rate{0.1};
  int iterations{150};
  double beta1{0.9}, beta2{0.999}, epsilon{1e-8};
  int yaw_seeds{4};
  int seed_trial_iters{30};
  EnergyWeights weights;
  RenderConfig render;
  FrustumOptions frustum;
  RansacOptions ransac;
  bool plateau_stop{false};  // stop when |dE| < 1e-6 over 10 iterations

  void validate() const;
};

enum class FitStatus { Ok, LowPoints, Degenerate };
std::string_view to_string(FitStatus s);

struct FitResult {
  int id{0};
  FitStatus status{FitStatus::Ok};
  Pose pose;
  ShapeCode shape;
  Box3 box;
  double confidence{0};
  EnergyTerms energy;        // at the returned parameters
  EnergyTerms start_energy;  // at the selected seed's initialization
  int iterations{0};
  int selected_seed{0};
};

struct InitState {
  Pose pose;
  ShapeCode shape;
};

/// Coordinate-wise median of the frustum, mean shape, and yaw_seeds evenly
/// spaced headings starting at 0. Throws TooFewPoints for ineligible clouds.
std::vector<InitState> init_instance(const FrustumCloud& frustum, const ShapePrior& prior, int yaw_seeds = 4);

/// Per-scene observations shared by every instance fit.
struct SceneObservations {
  std::optional<GroundPlane> ground;
  std::vector<FrustumCloud> frustums;  // one per scene instance, same order
  OcclusionResult occlusion;
};

/// Ground plane, frustums and occlusion maps (frozen from LiDAR medians).
SceneObservations observe_scene(const Scene& scene, const FitConfig& cfg);

/// Reported after every step. During the yaw-seed trials `energy` is NaN
/// and `params` holds the lowest-index seed's state.
struct FitProgress {
  int instance_id;
  int iteration;
  double energy;
  const Eigen::VectorXd* params;
};

struct FitOptions {
  bool batched{true};
  int threads{0};                     // 0: hardware concurrency
  std::vector<int> instance_ids;      // empty: all instances
  std::map<int, InitState> initial;   // by id: a single start replacing the yaw seeds
  std::function<void(const FitProgress&)> on_progress;
  const std::atomic<bool>* cancel{nullptr};
};

/// Adam over (pose, shape) for the selected instances. Batched mode advances
/// all instances one iteration at a time (instances spread over worker
/// threads); sequential mode runs each instance to completion in turn. Both
/// perform identical per-instance arithmetic. Results are ordered by id.
std::vector<FitResult> fit_scene(const Scene& scene, const ShapePrior& prior, const FitConfig& cfg,
                                 const FitOptions& options = {});
std::vector<FitResult> fit_scene(const Scene& scene, const SceneObservations& obs, const ShapePrior& prior,
                                 const FitConfig& cfg, const FitOptions& options = {});

/// Bounds of voxels with phi >= 0, padded by half a voxel, placed by the pose.
/// Throws EmptyShape.
Box3 extract_box(const ShapePrior& prior, const ShapeCode& s, const Pose& p);
Box3 extract_box(const SdfGrid& grid, const Pose& p);

struct Occupancy {
  Eigen::Vector3i dims{Eigen::Vector3i::Zero()};
  Eigen::Vector3d origin{Eigen::Vector3d::Zero()};  // center of voxel (0, 0, 0), world frame
  double voxel_size{0};
  std::vector<std::uint8_t> cells;  // i + nx * (j + ny * k)

  std::uint8_t at(int i, int j, int k) const { return cells[std::size_t(i + dims.x() * (j + std::size_t(dims.y()) * k))]; }
  std::size_t occupied() const;
};

/// World-aligned voxels of size voxel_size tiling [lo, hi]; a cell is 1 iff
/// its center, mapped into the object frame, has phi >= 0.
Occupancy export_occupancy(const ShapePrior& prior, const ShapeCode& s, const Pose& p, double voxel_size,
                           const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);

/// IoU of (projected >= 0.5) * occlusion against target >= 0.5; 0 for an empty union.
double confidence(const Mask& projected, const Mask& occlusion, const Mask& target);

}  // namespace slf
