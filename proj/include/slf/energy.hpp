#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "slf/prior.hpp"
#include "slf/render.hpp"
#include "slf/scene.hpp"

namespace slf {

struct EnergyWeights {
  double mask{1.0};
  double pc{1.0};
  double ground{0.1};
  double sdf_clamp{0.5};     // m, clamp on |phi| in the surface term
  bool normalize_pc{false};  // divide the surface term by the point count

  void validate() const;
};

/// Dice loss 1 - 2|P*O . Y| / (|P*O| + |Y| + 1e-6) over soft masks.
double e_mask(const Mask& projected, const Mask& target, const Mask& occlusion);

/// Camera-ray hits on the zero level set, one slot per frustum point.
struct RayHitSet {
  std::vector<Eigen::Vector3d> hits;
  std::vector<bool> found;

  int count() const;
};

struct PcTerm {
  double value{0};
  double surface{0};  // sum |clamp(phi(x))|
  double ray{0};      // mean squared distance to the first hit
  RayHitSet hits;
};

/// Point-cloud alignment. Hits come from marching each camera ray on a fixed
/// lattice of step voxel_size / 2 to the first sign change, refined linearly.
PcTerm e_pc(const ShapePrior& prior, const ShapeCode& s, const Pose& p, const FrustumCloud& frustum,
            const Camera& cam, const EnergyWeights& weights = {});

/// Squared gap between the shape bottom z - h/2 and the ground under the center.
double e_ground(const Pose& p, double h_hat, const GroundPlane& g);

/// Height of {phi >= 0}: voxel-center z-extent plus one voxel; 0 if empty.
double shape_height(const GridMeta& meta, const Eigen::VectorXd& values);

/// Observations of one instance. All pointers must outlive the energy.
struct Observation {
  const Camera* camera{nullptr};
  const Mask* target{nullptr};
  const Mask* occlusion{nullptr};
  const FrustumCloud* frustum{nullptr};
  const GroundPlane* ground{nullptr};  // optional
};

struct EnergyTerms {
  double mask{0}, pc{0}, ground{0}, total{0};
};

/// Parameter layout used by the optimizer: (x, y, z, theta, s_1 .. s_d).
Eigen::VectorXd pack_params(const Pose& p, const ShapeCode& s);
Pose unpack_pose(const Eigen::VectorXd& params);
ShapeCode unpack_shape(const Eigen::VectorXd& params);

/// Weighted energy of one instance with its exact gradient. The mask term is
/// rendered over the target's bounding box scaled by 1.25; pixels outside it
/// count as Y_proj = 0. The shape height is treated as piecewise constant.
class InstanceEnergy {
 public:
  InstanceEnergy(const ShapePrior& prior, const Observation& obs, const EnergyWeights& weights,
                 const RenderConfig& cfg);

  EnergyTerms evaluate(const Eigen::VectorXd& params, Eigen::VectorXd* gradient = nullptr);

  int dim() const { return 4 + prior_->dim(); }
  /// Soft silhouette of the last evaluation, restricted to region().
  const SoftRenderer::RegionArray& rendered() const { return renderer_.values(); }
  const PixelRegion& region() const { return renderer_.region(); }
  /// Decoded grid values of the last evaluation.
  const Eigen::VectorXd& decoded() const { return values_; }

 private:
  double mask_term(Eigen::Vector4d* grad_pose);

  const ShapePrior* prior_;
  Observation obs_;
  EnergyWeights weights_;
  RenderConfig cfg_;
  SoftRenderer renderer_;
  SoftRenderer::RegionArray target_region_, occlusion_region_;
  double target_area_{0};
  Eigen::VectorXd values_;
  Eigen::VectorXd adjoint_;
  // Largest neighbour differences of the mean and of each basis column; they
  // bound the decoded field's slope for the ray march.
  double max_step_mean_{0};
  Eigen::VectorXd max_step_basis_;
};

struct EnergyResult {
  EnergyTerms terms;
  Eigen::VectorXd gradient;
};

EnergyResult total_energy(const ShapePrior& prior, const ShapeCode& s, const Pose& p, const Observation& obs,
                          const EnergyWeights& weights = {}, const RenderConfig& cfg = {});

}  // namespace slf
