#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slf/error.hpp"

namespace slf {

/// Stands in for -infinity outside a grid's cube.
inline constexpr double kExteriorSentinel = -1e6;

/// Lattice layout shared by every grid of a prior. `origin` is the object-frame
/// center of voxel (0, 0, 0); values are flattened as i + l * (j + w * k).
struct GridMeta {
  Eigen::Vector3i dims{64, 32, 32};
  double voxel_size{0.1};
  Eigen::Vector3d origin{Eigen::Vector3d::Zero()};

  Eigen::Index size() const { return Eigen::Index(dims.x()) * dims.y() * dims.z(); }
  Eigen::Index index(int i, int j, int k) const {
    return i + Eigen::Index(dims.x()) * (j + Eigen::Index(dims.y()) * k);
  }
  Eigen::Vector3d voxel_center(int i, int j, int k) const {
    return origin + voxel_size * Eigen::Vector3d(i, j, k);
  }
  /// Cube spanned by the voxel centers; sampling is defined inside it.
  Eigen::Vector3d lower() const { return origin; }
  Eigen::Vector3d upper() const { return origin + voxel_size * (dims.cast<double>().array() - 1).matrix(); }

  /// Grid centered on the object-frame origin.
  static GridMeta centered(const Eigen::Vector3i& dims, double voxel_size);

  bool operator==(const GridMeta& o) const {
    return dims == o.dims && voxel_size == o.voxel_size && origin == o.origin;
  }
};

/// Discrete signed distance field, positive inside and negative outside (meters).
struct SdfGrid {
  GridMeta meta;
  Eigen::VectorXd values;

  SdfGrid() = default;
  SdfGrid(GridMeta m, Eigen::VectorXd v);

  double at(int i, int j, int k) const { return values[meta.index(i, j, k)]; }
};

/// Trilinear interpolation; returns kExteriorSentinel outside the cube.
double sample(const SdfGrid& g, const Eigen::Vector3d& x);

/// Exact gradient of the trilinear interpolant. Throws OutOfSupport unless x
/// lies at least one voxel inside the cube.
Eigen::Vector3d spatial_gradient(const SdfGrid& g, const Eigen::Vector3d& x);

/// Procedural car: body and cabin rounded boxes joined by a smooth union, with
/// an optional hood slope. Canonical frame: centered, heading +x, z up.
struct CarParams {
  double length{4.3};          // [3.5, 5.2] m
  double width{1.8};           // [1.6, 2.0] m
  double body_height{0.8};     // [0.6, 1.0] m
  double cabin_fraction{0.5};  // [0, 0.7] of length; 0 disables the cabin
  double cabin_height{0.5};    // [0, 0.55] m
  double hood_drop{0.1};       // [0, 0.25] m
  double rounding{0.1};        // [0, 0.3] m

  void validate() const;
  double total_height() const {
    return body_height + (cabin_fraction > 0 && cabin_height > 0 ? cabin_height : 0.0);
  }
};

/// Analytic car field at an object-frame point (positive inside).
double car_field(const CarParams& params, const Eigen::Vector3d& x);

SdfGrid make_car_sdf(const CarParams& params, const Eigen::Vector3i& dims, double voxel_size);

/// Voxel-center bounds of {phi >= 0} in the object frame; false for an empty set.
bool interior_bounds(const SdfGrid& g, Eigen::Vector3d& lo, Eigen::Vector3d& hi);

// Binary blob: "SLFG", u16 version, 3 x u32 dims, f32 voxel, 3 x f32 origin,
// then the values as f32, all little-endian.
inline constexpr std::uint16_t kGridVersion = 1;
void write_grid(std::ostream& out, const SdfGrid& g);
SdfGrid read_grid(std::istream& in);
void save_grid(const SdfGrid& g, const std::string& path);
SdfGrid load_grid(const std::string& path);

/// Closed triangle mesh.
struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3i> triangles;
};

TriangleMesh make_icosphere(double radius, int subdivisions);
TriangleMesh make_box_mesh(const Eigen::Vector3d& half_extents);

/// Distance magnitude from the nearest triangle, sign from ray-crossing parity.
/// Throws NonWatertightMesh when three ray directions disagree on > 0.1% of voxels.
SdfGrid mesh_to_sdf(const TriangleMesh& mesh, const Eigen::Vector3i& dims, double voxel_size);

}  // namespace slf
