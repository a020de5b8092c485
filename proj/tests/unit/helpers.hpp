#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "slf/geometry.hpp"
#include "slf/prior.hpp"
#include "slf/sdf.hpp"

namespace slf::test {

/// The 79-model procedural prior at d = 5, built once per process.
inline const ShapePrior& world_prior() {
  static const ShapePrior p = build_prior(procedural_bank(kBankSize), 5);
  return p;
}

/// Identity extrinsics (camera frame = world frame), fx = fy = 100, principal point (50, 50).
inline Camera small_camera(int width = 101, int height = 101) {
  Eigen::Matrix3d K;
  K << 100, 0, 50, 0, 100, 50, 0, 0, 1;
  return Camera(K, Eigen::Matrix4d::Identity(), width, height);
}

/// Fresh directory under the system temp dir, unique per process.
inline std::string temp_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / ("slf_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

/// Grid of phi(x) = f(x) evaluated at voxel centers.
template <typename F>
SdfGrid field_grid(const GridMeta& meta, F f) {
  Eigen::VectorXd v(meta.size());
  for (int k = 0; k < meta.dims.z(); ++k)
    for (int j = 0; j < meta.dims.y(); ++j)
      for (int i = 0; i < meta.dims.x(); ++i) v[meta.index(i, j, k)] = f(meta.voxel_center(i, j, k));
  return SdfGrid(meta, v);
}

inline SdfGrid sphere_grid(double r, const GridMeta& meta) {
  return field_grid(meta, [r](const Eigen::Vector3d& x) { return r - x.norm(); });
}

}  // namespace slf::test
