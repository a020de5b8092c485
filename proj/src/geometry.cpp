#include "slf/geometry.hpp"

#include <string>

namespace slf {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::BadCalibration: return "BadCalibration";
    case ErrorCode::OutOfSupport: return "OutOfSupport";
    case ErrorCode::ParamOutOfRange: return "ParamOutOfRange";
    case ErrorCode::NonWatertightMesh: return "NonWatertightMesh";
    case ErrorCode::InsufficientModels: return "InsufficientModels";
    case ErrorCode::MetaMismatch: return "MetaMismatch";
    case ErrorCode::DegenerateBank: return "DegenerateBank";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::DegenerateCube: return "DegenerateCube";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MaskSizeMismatch: return "MaskSizeMismatch";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateGround: return "DegenerateGround";
    case ErrorCode::EmptyFrustum: return "EmptyFrustum";
    case ErrorCode::EmptyShape: return "EmptyShape";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::SpecError: return "SpecError";
    case ErrorCode::SegmenterUnreachable: return "SegmenterUnreachable";
    case ErrorCode::BadResponse: return "BadResponse";
    case ErrorCode::BadPrompt: return "BadPrompt";
    case ErrorCode::Cancelled: return "Cancelled";
  }
  return "Unknown";
}

Camera::Camera(const Eigen::Matrix3d& intrinsics, const Eigen::Matrix4d& world_to_camera,
               int width, int height)
    : K_(intrinsics), T_wc_(world_to_camera), width_(width), height_(height) {
  if (!(K_(0, 0) > 0) || !(K_(1, 1) > 0))
    throw Error(ErrorCode::BadCalibration, "focal lengths must be positive");
  if (K_(0, 1) != 0 || K_(1, 0) != 0 || K_(2, 0) != 0 || K_(2, 1) != 0 || K_(2, 2) != 1)
    throw Error(ErrorCode::BadCalibration, "intrinsics must be a zero-skew pinhole matrix");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::BadCalibration, "image size must be positive");
  const Eigen::Matrix3d R = rotation();
  if ((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      R.determinant() < 0)
    throw Error(ErrorCode::BadCalibration, "extrinsic rotation is not orthonormal");
  const Eigen::RowVector4d last_row(0, 0, 0, 1);
  if ((T_wc_.row(3) - last_row).cwiseAbs().maxCoeff() > 1e-12)
    throw Error(ErrorCode::BadCalibration, "extrinsic bottom row must be (0, 0, 0, 1)");
  center_ = -R.transpose() * translation();
}

Projection project_point(const Camera& cam, const Eigen::Vector3d& x_world) {
  const Eigen::Vector3d xc = cam.to_camera(x_world);
  if (!(xc.z() > 0)) throw Error(ErrorCode::NonPositiveDepth, "point is not in front of the camera");
  return {cam.fx() * xc.x() / xc.z() + cam.cx(), cam.fy() * xc.y() / xc.z() + cam.cy(), xc.z()};
}

Ray ray_through_pixel(const Camera& cam, double u, double v) {
  const Eigen::Vector3d dir_cam((u - cam.cx()) / cam.fx(), (v - cam.cy()) / cam.fy(), 1.0);
  return {cam.center(), (cam.rotation().transpose() * dir_cam).normalized()};
}

Camera make_forward_camera(double fx, double fy, double cx, double cy, int width, int height,
                           const Eigen::Vector3d& position, double pitch) {
  // Camera axes expressed in world coordinates.
  const double c = std::cos(pitch), s = std::sin(pitch);
  const Eigen::Vector3d forward(c, 0, -s);
  const Eigen::Vector3d right(0, -1, 0);
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  T.topLeftCorner<3, 3>() = R;
  T.topRightCorner<3, 1>() = -R * position;
  Eigen::Matrix3d K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return Camera(K, T, width, height);
}

}  // namespace slf
