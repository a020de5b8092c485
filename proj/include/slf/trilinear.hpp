#pragma once

// Inner-loop kernels over a flat value array laid out per GridMeta.

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "slf/sdf.hpp"

namespace slf::trilinear {

struct Cell {
  Eigen::Index base;  // flat index of the lower corner
  double fx, fy, fz;  // fractional offsets in [0, 1]
};

/// Grid geometry copied into plain locals so inner loops need not reload it.
/// ceil(t) - 1 for t >= 0 (integers map to the cell below), without a libm call.
inline int lower_cell(double t) {
  const int i = int(t);
  return double(i) == t ? i - 1 : i;
}

struct Lattice {
  double origin[3];
  double inv_voxel;
  double upper[3];  // n - 1 per axis, in voxel units
  int last_cell[3];  // n - 2 per axis
  Eigen::Index sy, sz;

  explicit Lattice(const GridMeta& m)
      : inv_voxel(1.0 / m.voxel_size), sy(m.dims.x()), sz(Eigen::Index(m.dims.x()) * m.dims.y()) {
    for (int a = 0; a < 3; ++a) {
      origin[a] = m.origin[a];
      upper[a] = double(m.dims[a] - 1);
      last_cell[a] = m.dims[a] - 2;
    }
  }
};

/// Cell lookup in voxel units; boundaries resolve to the lower-index cell.
inline bool locate(const Lattice& l, const Eigen::Vector3d& x, Cell& c) {
  int idx[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double t = (x[a] - l.origin[a]) * l.inv_voxel;
    if (!(t >= 0.0) || t > l.upper[a]) return false;
    const int i = std::clamp(lower_cell(t), 0, l.last_cell[a]);
    idx[a] = i;
    f[a] = t - i;
  }
  c.base = idx[0] + l.sy * idx[1] + l.sz * idx[2];
  c.fx = f[0];
  c.fy = f[1];
  c.fz = f[2];
  return true;
}

/// As locate(), with x clamped into the cube first.
inline void locate_clamped(const Lattice& l, const Eigen::Vector3d& x, Cell& c) {
  int idx[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double t = std::clamp((x[a] - l.origin[a]) * l.inv_voxel, 0.0, l.upper[a]);
    const int i = std::clamp(lower_cell(t), 0, l.last_cell[a]);
    idx[a] = i;
    f[a] = t - i;
  }
  c.base = idx[0] + l.sy * idx[1] + l.sz * idx[2];
  c.fx = f[0];
  c.fy = f[1];
  c.fz = f[2];
}

struct Strides {
  Eigen::Index sy, sz;
  explicit Strides(const GridMeta& m) : sy(m.dims.x()), sz(Eigen::Index(m.dims.x()) * m.dims.y()) {}
  explicit Strides(const Lattice& l) : sy(l.sy), sz(l.sz) {}
};

inline double value(const double* v, const Strides& s, const Cell& c) {
  const double* p = v + c.base;
  const double c00 = p[0] + c.fx * (p[1] - p[0]);
  const double c10 = p[s.sy] + c.fx * (p[s.sy + 1] - p[s.sy]);
  const double c01 = p[s.sz] + c.fx * (p[s.sz + 1] - p[s.sz]);
  const double c11 = p[s.sz + s.sy] + c.fx * (p[s.sz + s.sy + 1] - p[s.sz + s.sy]);
  const double c0 = c00 + c.fy * (c10 - c00);
  const double c1 = c01 + c.fy * (c11 - c01);
  return c0 + c.fz * (c1 - c0);
}

/// Value and gradient (per meter) of the interpolant inside the cell.
inline double value_gradient(const double* v, const Strides& s, const Cell& c, double inv_voxel,
                             Eigen::Vector3d& grad) {
  const double* p = v + c.base;
  const double v000 = p[0], v100 = p[1];
  const double v010 = p[s.sy], v110 = p[s.sy + 1];
  const double v001 = p[s.sz], v101 = p[s.sz + 1];
  const double v011 = p[s.sz + s.sy], v111 = p[s.sz + s.sy + 1];
  const double gy = 1 - c.fy, gz = 1 - c.fz;
  const double dx00 = v100 - v000, dx10 = v110 - v010, dx01 = v101 - v001, dx11 = v111 - v011;
  const double c00 = v000 + c.fx * dx00, c10 = v010 + c.fx * dx10;
  const double c01 = v001 + c.fx * dx01, c11 = v011 + c.fx * dx11;
  const double c0 = c00 + c.fy * (c10 - c00), c1 = c01 + c.fy * (c11 - c01);
  grad.x() = (gz * (gy * dx00 + c.fy * dx10) + c.fz * (gy * dx01 + c.fy * dx11)) * inv_voxel;
  grad.y() = (gz * (c10 - c00) + c.fz * (c11 - c01)) * inv_voxel;
  grad.z() = (c1 - c0) * inv_voxel;
  return c0 + c.fz * (c1 - c0);
}

/// Adjoint of `value`: adds g times each corner weight into `adj`.
inline void scatter(double* adj, const Strides& s, const Cell& c, double g) {
  double* p = adj + c.base;
  const double gx = 1 - c.fx, gy = 1 - c.fy, gz = 1 - c.fz;
  const double w00 = g * gy * gz, w10 = g * c.fy * gz, w01 = g * gy * c.fz, w11 = g * c.fy * c.fz;
  p[0] += gx * w00;
  p[1] += c.fx * w00;
  p[s.sy] += gx * w10;
  p[s.sy + 1] += c.fx * w10;
  p[s.sz] += gx * w01;
  p[s.sz + 1] += c.fx * w01;
  p[s.sz + s.sy] += gx * w11;
  p[s.sz + s.sy + 1] += c.fx * w11;
}

}  // namespace slf::trilinear
