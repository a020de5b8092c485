#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slf/fit.hpp"
#include "slf/mask_io.hpp"
#include "slf/prior.hpp"
#include "slf/scene.hpp"

namespace slf {

struct LidarModel {
  int rings{64};           // full-resolution ring count
  int beams{64};           // kept rings: every (rings / beams)-th
  int azimuth_steps{900};  // across the camera's horizontal field of view
  double elevation_min_deg{-25.0};
  double elevation_max_deg{3.0};
  double range_noise{0.02};  // m, Gaussian along the ray
  double max_range{120.0};

  void validate() const;
};

struct CameraSpec {
  int width{960}, height{540};
  double focal{540.0};
  double mount_height{1.6};  // above the ground at the origin
  double pitch_deg{2.0};     // downward
};

/// Shape and pose of one placed object; used for fixed placements and GT.
struct PlacedShape {
  ShapeCode code;
  double x{0}, y{0}, yaw{0};  // z follows from the ground and shape height
};

struct SynthConfig {
  std::uint64_t seed{1};
  int min_instances{1}, max_instances{5};
  double min_range{6.0}, max_range{40.0};  // forward distance of the center
  double min_yaw{-3.141592653589793}, max_yaw{3.141592653589793};
  double shape_sigma{2.0};   // codes ~ N(0, sigma_k^2), clipped to +-shape_sigma sigma_k
  double bev_clearance{0.3};  // m between footprints
  int prompt_points{3};
  LidarModel lidar;
  CameraSpec camera;
  GroundPlane ground{0.0, 0.0, 0.0};
  std::vector<PlacedShape> fixed;  // when non-empty, placed verbatim instead of sampled

  void validate() const;
};

struct GtInstance {
  int id{0};
  Pose pose;
  ShapeCode code;
  Box3 box;                     // interior bounds of the decoded shape, posed
  double occlusion{0};          // fraction of the unoccluded silhouette hidden by nearer objects
  int lidar_points{0};          // returns the simulator attributed to this object
  int unoccluded_points{0};     // of those, returns whose pixel lies in the final mask
};

struct SynthScene {
  Scene scene;
  std::vector<GtInstance> gt;
  GroundPlane ground;
  GrayImage image;
  std::vector<int> point_owner;  // per LiDAR point: instance index or -1 for ground
};

Camera make_synth_camera(const CameraSpec& spec, const GroundPlane& ground);

/// Object z for a shape resting on the ground: h / 2 + g(x, y).
double resting_z(const ShapePrior& prior, const ShapeCode& s, double x, double y, const GroundPlane& g);

/// Throws PlacementFailure when an object cannot be placed in 100 attempts.
SynthScene gen_scene(const SynthConfig& cfg, const ShapePrior& prior);

struct LidarReturns {
  PointCloud points;
  std::vector<int> owner;  // instance index or -1 for ground
};

/// Rays on an elevation x azimuth lattice from `origin`; nearest hit among
/// the shapes and the ground, with range noise drawn for every full-resolution
/// ray so that fewer beams give a subset of the returns.
LidarReturns simulate_lidar(const std::vector<SdfGrid>& shapes, const std::vector<Pose>& poses,
                            const GroundPlane& ground, const Eigen::Vector3d& origin, double heading_fov,
                            const LidarModel& model, std::uint64_t seed);

enum class MorphOp { Erode, Dilate };

/// Square-kernel binary morphology; pixels outside the image count as 0.
Mask corrupt_mask(const Mask& mask, MorphOp op, int kernel);

/// Writes the scene directory plus img.png and gt.json.
void write_synth(const SynthScene& s, const std::string& dir);

/// gt.json: {instances:[{id, center, dims, yaw, shape_code, occlusion, lidar_points, unoccluded_points}]}.
std::string gt_to_json(const std::vector<GtInstance>& gt);
std::vector<GtInstance> gt_from_json(const std::string& text);
std::vector<GtInstance> load_gt(const std::string& path);

}  // namespace slf
