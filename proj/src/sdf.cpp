#include "slf/sdf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "slf/binary_io.hpp"
#include "slf/trilinear.hpp"

namespace slf {

GridMeta GridMeta::centered(const Eigen::Vector3i& dims, double voxel_size) {
  if ((dims.array() < 2).any() || !(voxel_size > 0))
    throw Error(ErrorCode::ParamOutOfRange, "grid needs >= 2 voxels per axis and a positive voxel size");
  GridMeta m;
  m.dims = dims;
  m.voxel_size = voxel_size;
  m.origin = -0.5 * voxel_size * (dims.cast<double>().array() - 1).matrix();
  return m;
}

SdfGrid::SdfGrid(GridMeta m, Eigen::VectorXd v) : meta(std::move(m)), values(std::move(v)) {
  if (values.size() != meta.size())
    throw Error(ErrorCode::LengthMismatch, "value count does not match grid dims");
}

double sample(const SdfGrid& g, const Eigen::Vector3d& x) {
  trilinear::Cell c;
  if (!trilinear::locate(trilinear::Lattice(g.meta), x, c)) return kExteriorSentinel;
  return trilinear::value(g.values.data(), trilinear::Strides(g.meta), c);
}

Eigen::Vector3d spatial_gradient(const SdfGrid& g, const Eigen::Vector3d& x) {
  const Eigen::Vector3d lo = g.meta.lower().array() + g.meta.voxel_size;
  const Eigen::Vector3d hi = g.meta.upper().array() - g.meta.voxel_size;
  if ((x.array() < lo.array()).any() || (x.array() > hi.array()).any())
    throw Error(ErrorCode::OutOfSupport, "gradient requested outside the differentiable region");
  trilinear::Cell c;
  trilinear::locate_clamped(trilinear::Lattice(g.meta), x, c);
  Eigen::Vector3d grad;
  trilinear::value_gradient(g.values.data(), trilinear::Strides(g.meta), c, 1.0 / g.meta.voxel_size,
                            grad);
  return grad;
}

namespace {

void check_range(double v, double lo, double hi, const char* name) {
  if (!(v >= lo && v <= hi))
    throw Error(ErrorCode::ParamOutOfRange,
                std::string(name) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

// Conventional signed distance (negative inside) of a rounded box.
double rounded_box(const Eigen::Vector3d& p, const Eigen::Vector3d& center,
                   const Eigen::Vector3d& half, double r) {
  const Eigen::Vector3d q = (p - center).cwiseAbs() - (half.array() - r).matrix();
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0) - r;
}

double smooth_min(double a, double b, double k) {
  const double h = std::clamp(0.5 + 0.5 * (b - a) / k, 0.0, 1.0);
  return b + h * (a - b) - k * h * (1 - h);
}

}  // namespace

void CarParams::validate() const {
  check_range(length, 3.5, 5.2, "length");
  check_range(width, 1.6, 2.0, "width");
  check_range(body_height, 0.6, 1.0, "body_height");
  check_range(cabin_fraction, 0.0, 0.7, "cabin_fraction");
  check_range(cabin_height, 0.0, 0.55, "cabin_height");
  check_range(hood_drop, 0.0, 0.25, "hood_drop");
  check_range(rounding, 0.0, 0.3, "rounding");
}

double car_field(const CarParams& cp, const Eigen::Vector3d& x) {
  const double H = cp.total_height();
  const double bottom = -0.5 * H;
  const double top = bottom + cp.body_height;
  const Eigen::Vector3d body_half(0.5 * cp.length, 0.5 * cp.width, 0.5 * cp.body_height);
  const double r = std::min(cp.rounding, 0.9 * body_half.minCoeff());
  double d = rounded_box(x, {0, 0, bottom + body_half.z()}, body_half, r);

  if (cp.hood_drop > 0) {
    const double x0 = 0.3 * cp.length;
    const double slope = cp.hood_drop / (0.2 * cp.length);
    const double plane = x.x() > x0
                             ? (x.z() - (top - slope * (x.x() - x0))) / std::sqrt(1 + slope * slope)
                             : x.z() - top;
    d = std::max(d, plane);
  }

  if (cp.cabin_fraction > 0 && cp.cabin_height > 0) {
    constexpr double overlap = 0.05;
    const Eigen::Vector3d half(0.5 * cp.cabin_fraction * cp.length, 0.42 * cp.width,
                               0.5 * (cp.cabin_height + overlap));
    const Eigen::Vector3d center(-0.05 * cp.length, 0, top - overlap + half.z());
    const double rc = std::min(cp.rounding, 0.9 * half.minCoeff());
    d = smooth_min(d, rounded_box(x, center, half, rc), 0.05);
  }
  return -d;
}

SdfGrid make_car_sdf(const CarParams& params, const Eigen::Vector3i& dims, double voxel_size) {
  params.validate();
  const GridMeta meta = GridMeta::centered(dims, voxel_size);
  const Eigen::Vector3d extent(0.5 * params.length, 0.5 * params.width, 0.5 * params.total_height());
  if (((extent.array() + 2 * voxel_size) > meta.upper().array()).any())
    throw Error(ErrorCode::ParamOutOfRange, "grid cube leaves less than a 2-voxel margin around the car");
  Eigen::VectorXd values(meta.size());
  for (int k = 0; k < dims.z(); ++k)
    for (int j = 0; j < dims.y(); ++j)
      for (int i = 0; i < dims.x(); ++i)
        values[meta.index(i, j, k)] = car_field(params, meta.voxel_center(i, j, k));
  return SdfGrid(meta, std::move(values));
}

bool interior_bounds(const SdfGrid& g, Eigen::Vector3d& lo, Eigen::Vector3d& hi) {
  const auto& d = g.meta.dims;
  Eigen::Vector3i imin(d.x(), d.y(), d.z()), imax(-1, -1, -1);
  for (int k = 0; k < d.z(); ++k)
    for (int j = 0; j < d.y(); ++j)
      for (int i = 0; i < d.x(); ++i)
        if (g.values[g.meta.index(i, j, k)] >= 0) {
          imin = imin.cwiseMin(Eigen::Vector3i(i, j, k));
          imax = imax.cwiseMax(Eigen::Vector3i(i, j, k));
        }
  if (imax.x() < 0) return false;
  lo = g.meta.voxel_center(imin.x(), imin.y(), imin.z());
  hi = g.meta.voxel_center(imax.x(), imax.y(), imax.z());
  return true;
}

void write_grid(std::ostream& out, const SdfGrid& g) {
  out.write("SLFG", 4);
  io::put<std::uint16_t>(out, kGridVersion);
  for (int a = 0; a < 3; ++a) io::put<std::uint32_t>(out, std::uint32_t(g.meta.dims[a]));
  io::put<float>(out, float(g.meta.voxel_size));
  for (int a = 0; a < 3; ++a) io::put<float>(out, float(g.meta.origin[a]));
  for (Eigen::Index i = 0; i < g.values.size(); ++i) io::put<float>(out, float(g.values[i]));
  if (!out) throw Error(ErrorCode::IoError, "grid write failed");
}

SdfGrid read_grid(std::istream& in) {
  io::expect_magic(in, "SLFG");
  if (io::get<std::uint16_t>(in) != kGridVersion)
    throw Error(ErrorCode::VersionMismatch, "unsupported grid version");
  GridMeta m;
  for (int a = 0; a < 3; ++a) m.dims[a] = int(io::get<std::uint32_t>(in));
  m.voxel_size = io::get<float>(in);
  for (int a = 0; a < 3; ++a) m.origin[a] = io::get<float>(in);
  if ((m.dims.array() < 2).any() || m.size() > (Eigen::Index(1) << 28))
    throw Error(ErrorCode::CorruptFile, "implausible grid dims");
  Eigen::VectorXd v(m.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = io::get<float>(in);
  return SdfGrid(m, std::move(v));
}

void save_grid(const SdfGrid& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  write_grid(out, g);
}

SdfGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_grid(in);
}

}  // namespace slf
