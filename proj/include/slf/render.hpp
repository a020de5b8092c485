#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "slf/geometry.hpp"
#include "slf/prior.hpp"
#include "slf/sdf.hpp"
#include "slf/trilinear.hpp"

namespace slf {

using MaskArray = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel coverage in [0, 1], stored row-major (height x width).
struct Mask {
  MaskArray values;

  Mask() = default;
  Mask(int width, int height, float fill = 0.0f) : values(MaskArray::Constant(height, width, fill)) {}
  explicit Mask(MaskArray v) : values(std::move(v)) {}

  int width() const { return int(values.cols()); }
  int height() const { return int(values.rows()); }
  float operator()(int u, int v) const { return values(v, u); }
  float& operator()(int u, int v) { return values(v, u); }

  Mask binarized(float threshold = 0.5f) const {
    return Mask(MaskArray((values >= threshold).cast<float>()));
  }
  double area() const { return values.cast<double>().sum(); }
};

/// Half-open pixel rectangle [u0, u1) x [v0, v1).
struct PixelRegion {
  int u0{0}, v0{0}, u1{0}, v1{0};

  int width() const { return u1 - u0; }
  int height() const { return v1 - v0; }
  bool empty() const { return u1 <= u0 || v1 <= v0; }
};

/// Bounding box of pixels >= threshold.
std::optional<PixelRegion> mask_bbox(const Mask& m, float threshold = 0.5f);
/// Scales a region about its center by `factor` and clips it to the image.
PixelRegion dilate_region(const PixelRegion& r, double factor, int width, int height);

struct RenderConfig {
  double zeta{40.0};  // 1/m
  int samples_per_ray{32};
  int pixel_stride{2};
  int max_nodes{4096};  // lattice cap: the stride grows for large regions; 0 disables
  double near{0.1};
  double far{200.0};

  void validate() const;
};

/// Lattice stride used for a region: pixel_stride, raised until the node
/// count fits max_nodes.
int effective_stride(const RenderConfig& cfg, const PixelRegion& region);

/// Soft silhouette over a pixel region: rays through a stride-subsampled
/// lattice are clipped to the posed grid cube, sampled uniformly, and
/// combined as 1 - prod 1 / (exp(zeta * phi) + 1) in log space; pixels in
/// between are bilinear in the lattice values. backward() is the exact
/// vector-Jacobian product of forward() with respect to the pose and the grid
/// values.
class SoftRenderer {
 public:
  using RegionArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  SoftRenderer(const Camera& cam, const RenderConfig& cfg, const PixelRegion& region);

  void forward(const GridMeta& meta, const double* values, const Pose& pose);

  /// Rendered values over the region (region.height x region.width).
  const RegionArray& values() const { return pixels_; }
  const PixelRegion& region() const { return region_; }
  int stride() const { return stride_; }

  /// Accumulates d(loss)/d(pose) as (x, y, z, theta) and d(loss)/d(grid values).
  void backward(const RegionArray& grad_pixels, const double* values, Eigen::Vector4d& grad_pose,
                double* grid_adjoint) const;

 private:
  struct Node {
    double pi{0}, log_transmittance{0}, t0{0}, t1{0}, max_phi{0};
    Eigen::Vector4d dt0{Eigen::Vector4d::Zero()}, dt1{Eigen::Vector4d::Zero()};
    bool hit{false};
  };

  RenderConfig cfg_;
  PixelRegion region_;
  Eigen::Vector3d camera_center_;
  int stride_{1};
  int nodes_u_{0}, nodes_v_{0};
  std::vector<Eigen::Vector3d> directions_;  // world frame, per lattice node
  std::vector<Node> nodes_;
  std::vector<trilinear::Cell> cells_;  // per node and sample
  std::vector<double> sigmoids_;  // d softplus / dz per sample; 0 where dropped
  RegionArray pixels_;
  // State of the last forward pass.
  GridMeta meta_;
  Pose pose_;
};

/// Projected bounding box of the posed grid cube, clipped to the image; empty
/// when the cube lies behind the camera.
PixelRegion projected_cube_region(const GridMeta& meta, const Pose& pose, const Camera& cam,
                                  double near = 0.1);

/// Full-image soft mask; all zero when the posed cube is behind the camera.
Mask soft_silhouette(const ShapePrior& prior, const ShapeCode& s, const Pose& p, const Camera& cam,
                     const RenderConfig& cfg = {});

/// Ray parameter of the first phi = 0 crossing per pixel (infinity on a miss),
/// found by sphere-trace-style marching.
Eigen::ArrayXXd hard_depth(const SdfGrid& grid, const Pose& p, const Camera& cam);
/// First crossing of phi = 0 along a world ray within [t_min, t_max]; infinity if none.
double first_crossing(const SdfGrid& grid, const Pose& p, const Ray& ray, double t_min = 0.0,
                      double t_max = std::numeric_limits<double>::infinity());
/// Binary mask: 1 iff the pixel ray crosses phi = 0.
Mask hard_silhouette(const SdfGrid& grid, const Pose& p, const Camera& cam);

struct OcclusionInput {
  const Mask* mask{nullptr};
  std::vector<double> depths;  // camera-frame depths of associated LiDAR points
};

struct OcclusionResult {
  std::vector<Mask> maps;             // 1 = visible to this instance
  std::vector<double> median_depth;   // +inf for instances without depths
  std::vector<bool> empty_depths;     // flagged instances, sorted as farthest
  std::vector<int> order;             // instance indices, nearest first
};

/// Instances sorted by median depth (ties: lower index nearer); each map
/// removes the union of binarized masks of all nearer instances.
OcclusionResult occlusion_maps(const std::vector<OcclusionInput>& instances);

double median(std::vector<double> v);

}  // namespace slf
