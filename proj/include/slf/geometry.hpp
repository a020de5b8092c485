#pragma once

// Frames: world is z-up with the ground near z = 0. Camera frame is x right,
// y down, z forward. Pixel (u, v) = (column, row); the center of pixel
// (i, j) sits at continuous coordinate (i, j), origin top-left.

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "slf/error.hpp"

namespace slf {

/// Wraps an angle to (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar a) {
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi_v<Scalar>) a += two_pi;
  if (a > std::numbers::pi_v<Scalar>) a -= two_pi;
  return a;
}

/// Object placement: center (x, y, z) in world meters and yaw about world z.
template <typename Scalar>
struct PoseT {
  Scalar x{0}, y{0}, z{0}, theta{0};

  PoseT() = default;
  PoseT(Scalar x_, Scalar y_, Scalar z_, Scalar theta_);

  Eigen::Matrix<Scalar, 3, 1> center() const { return {x, y, z}; }
  Eigen::Matrix<Scalar, 3, 3> rotation() const {
    return Eigen::AngleAxis<Scalar>(theta, Eigen::Matrix<Scalar, 3, 1>::UnitZ()).toRotationMatrix();
  }
};

template <typename Scalar>
PoseT<Scalar>::PoseT(Scalar x_, Scalar y_, Scalar z_, Scalar theta_) : x(x_), y(y_), z(z_) {
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(theta_))
    throw Error(ErrorCode::ParamOutOfRange, "pose components must be finite");
  theta = wrap_angle(theta_);
}

using Pose = PoseT<double>;

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, 3, 1> object_to_world(const PoseT<Scalar>& p,
                                            const Eigen::MatrixBase<Derived>& x_local) {
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  return {c * x_local(0) - s * x_local(1) + p.x, s * x_local(0) + c * x_local(1) + p.y,
          x_local(2) + p.z};
}

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, 3, 1> world_to_object(const PoseT<Scalar>& p,
                                            const Eigen::MatrixBase<Derived>& x_world) {
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  const Scalar dx = x_world(0) - p.x, dy = x_world(1) - p.y;
  return {c * dx + s * dy, -s * dx + c * dy, x_world(2) - p.z};
}

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // unit length

  Eigen::Vector3d at(double t) const { return origin + t * direction; }
};

/// Pinhole camera with zero skew. `world_to_camera` maps world points into the camera frame.
class Camera {
 public:
  Camera(const Eigen::Matrix3d& intrinsics, const Eigen::Matrix4d& world_to_camera, int width,
         int height);

  const Eigen::Matrix3d& intrinsics() const { return K_; }
  const Eigen::Matrix4d& world_to_camera() const { return T_wc_; }
  int width() const { return width_; }
  int height() const { return height_; }

  double fx() const { return K_(0, 0); }
  double fy() const { return K_(1, 1); }
  double cx() const { return K_(0, 2); }
  double cy() const { return K_(1, 2); }

  Eigen::Matrix3d rotation() const { return T_wc_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return T_wc_.topRightCorner<3, 1>(); }
  /// Camera center in world coordinates.
  const Eigen::Vector3d& center() const { return center_; }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& x_world) const {
    return rotation() * x_world + translation();
  }

 private:
  Eigen::Matrix3d K_;
  Eigen::Matrix4d T_wc_;
  int width_;
  int height_;
  Eigen::Vector3d center_;
};

struct Projection {
  double u;
  double v;
  double depth;
};

/// Throws NonPositiveDepth for points at or behind the camera plane.
Projection project_point(const Camera& cam, const Eigen::Vector3d& x_world);

Ray ray_through_pixel(const Camera& cam, double u, double v);

/// Camera looking along world +x from `position`, pitched down by `pitch` radians.
Camera make_forward_camera(double fx, double fy, double cx, double cy, int width, int height,
                           const Eigen::Vector3d& position, double pitch);

}  // namespace slf
