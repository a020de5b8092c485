#include "slf/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "slf/trilinear.hpp"

namespace slf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Samples with zeta * phi below this add under 1e-17 to the log transmittance
// and are dropped from both passes.
constexpr double kNegligible = -40.0;

// softplus(z) = log(1 + e^z) and its derivative, sharing one exponential.
void softplus_sigmoid(double z, double& sp, double& sg) {
  if (z > 0) {
    const double e = std::exp(-z);
    sp = z + std::log1p(e);
    sg = 1.0 / (1.0 + e);
    return;
  }
  const double e = std::exp(z);
  // Below -15 the series of log1p is exact to double rounding after three terms.
  sp = z < -15 ? e * (1 - e * (0.5 - e / 3)) : std::log1p(e);
  sg = e / (1.0 + e);
}

struct CubeHit {
  double t0, t1;
  Eigen::Vector4d dt0, dt1;  // d/d(x, y, z, theta)
  bool hit;
};

// Slab test of an object-frame ray against the grid cube, with the
// derivatives of the entry and exit parameters with respect to the pose.
CubeHit intersect_cube(const GridMeta& meta, const Eigen::Matrix3d& R, const Eigen::Vector3d& o,
                       const Eigen::Vector3d& d, double near, double far) {
  const Eigen::Vector3d lo = meta.lower(), hi = meta.upper();
  CubeHit h{-kInf, kInf, Eigen::Vector4d::Zero(), Eigen::Vector4d::Zero(), false};
  int axis0 = -1, axis1 = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < lo[a] || o[a] > hi[a]) return h;
      continue;
    }
    const double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    const double tin = std::min(ta, tb), tout = std::max(ta, tb);
    if (tin > h.t0) {
      h.t0 = tin;
      axis0 = a;
    }
    if (tout < h.t1) {
      h.t1 = tout;
      axis1 = a;
    }
  }
  if (h.t0 < near) {
    h.t0 = near;
    axis0 = -1;
  }
  if (h.t1 > far) {
    h.t1 = far;
    axis1 = -1;
  }
  if (!(h.t0 < h.t1)) return h;
  h.hit = true;
  // t = (b - o_a) / d_a with o = R^T (origin - c), d = R^T dir.
  auto derivative = [&](int a, double t) {
    Eigen::Vector4d g;
    g.head<3>() = R.col(a) / d[a];
    const Eigen::Vector3d do_dtheta(o.y(), -o.x(), 0), dd_dtheta(d.y(), -d.x(), 0);
    g[3] = -(do_dtheta[a] + t * dd_dtheta[a]) / d[a];
    return g;
  };
  if (axis0 >= 0) h.dt0 = derivative(axis0, h.t0);
  if (axis1 >= 0) h.dt1 = derivative(axis1, h.t1);
  return h;
}

}  // namespace

int effective_stride(const RenderConfig& cfg, const PixelRegion& region) {
  int s = cfg.pixel_stride;
  if (cfg.max_nodes <= 0 || region.empty()) return s;
  auto nodes = [&](int k) {
    return std::int64_t((region.width() - 1) / k + 2) * std::int64_t((region.height() - 1) / k + 2);
  };
  while (nodes(s) > cfg.max_nodes) ++s;
  return s;
}

std::optional<PixelRegion> mask_bbox(const Mask& m, float threshold) {
  PixelRegion r{m.width(), m.height(), 0, 0};
  for (int v = 0; v < m.height(); ++v)
    for (int u = 0; u < m.width(); ++u)
      if (m(u, v) >= threshold) {
        r.u0 = std::min(r.u0, u);
        r.v0 = std::min(r.v0, v);
        r.u1 = std::max(r.u1, u + 1);
        r.v1 = std::max(r.v1, v + 1);
      }
  if (r.empty()) return std::nullopt;
  return r;
}

PixelRegion dilate_region(const PixelRegion& r, double factor, int width, int height) {
  const double cu = 0.5 * (r.u0 + r.u1), cv = 0.5 * (r.v0 + r.v1);
  const double hu = 0.5 * factor * r.width(), hv = 0.5 * factor * r.height();
  return {std::max(0, int(std::floor(cu - hu))), std::max(0, int(std::floor(cv - hv))),
          std::min(width, int(std::ceil(cu + hu))), std::min(height, int(std::ceil(cv + hv)))};
}

void RenderConfig::validate() const {
  if (!(zeta > 0)) throw Error(ErrorCode::ParamOutOfRange, "zeta must be positive");
  if (samples_per_ray < 8) throw Error(ErrorCode::ParamOutOfRange, "samples_per_ray must be >= 8");
  if (pixel_stride < 1) throw Error(ErrorCode::ParamOutOfRange, "pixel_stride must be >= 1");
  if (max_nodes < 0) throw Error(ErrorCode::ParamOutOfRange, "max_nodes must be >= 0");
  if (!(near < far)) throw Error(ErrorCode::ParamOutOfRange, "near must be < far");
}

SoftRenderer::SoftRenderer(const Camera& cam, const RenderConfig& cfg, const PixelRegion& region)
    : cfg_(cfg), region_(region), camera_center_(cam.center()) {
  cfg_.validate();
  if (region_.empty()) {
    pixels_.resize(std::max(0, region_.height()), std::max(0, region_.width()));
    return;
  }
  stride_ = effective_stride(cfg_, region_);
  const int s = stride_;
  nodes_u_ = (region_.width() - 1) / s + 2;
  nodes_v_ = (region_.height() - 1) / s + 2;
  directions_.reserve(std::size_t(nodes_u_) * nodes_v_);
  for (int b = 0; b < nodes_v_; ++b)
    for (int a = 0; a < nodes_u_; ++a)
      directions_.push_back(ray_through_pixel(cam, region_.u0 + a * s, region_.v0 + b * s).direction);
  nodes_.resize(directions_.size());
  cells_.resize(nodes_.size() * std::size_t(cfg_.samples_per_ray));
  sigmoids_.resize(cells_.size());
  pixels_.setZero(region_.height(), region_.width());
}

void SoftRenderer::forward(const GridMeta& meta, const double* values, const Pose& pose) {
  meta_ = meta;
  pose_ = pose;
  if (region_.empty()) return;
  const Eigen::Matrix3d R = pose.rotation();
  const Eigen::Vector3d o = R.transpose() * (camera_center_ - pose.center());
  const trilinear::Lattice lat(meta);
  const trilinear::Strides strides(lat);
  const int K = cfg_.samples_per_ray;
  const double zeta = cfg_.zeta;
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    Node& node = nodes_[n];
    const Eigen::Vector3d d = R.transpose() * directions_[n];
    const CubeHit h = intersect_cube(meta, R, o, d, cfg_.near, cfg_.far);
    node.hit = h.hit;
    if (!h.hit) {
      node.pi = 0;
      continue;
    }
    node.t0 = h.t0;
    node.t1 = h.t1;
    node.dt0 = h.dt0;
    node.dt1 = h.dt1;
    double sum = 0, max_phi = -kInf;
    trilinear::Cell* cells = &cells_[n * std::size_t(K)];
    double* sig = &sigmoids_[n * std::size_t(K)];
    for (int i = 0; i < K; ++i) {
      const double t = h.t0 + (i + 0.5) / K * (h.t1 - h.t0);
      trilinear::locate_clamped(lat, o + t * d, cells[i]);
      const double phi = trilinear::value(values, strides, cells[i]);
      max_phi = std::max(max_phi, phi);
      sig[i] = 0;
      if (zeta * phi >= kNegligible) {
        double sp;
        softplus_sigmoid(zeta * phi, sp, sig[i]);
        sum -= sp;
      }
      // Past this the pixel value is 1 to double precision and the ray's
      // gradient carries a factor below 1e-17.
      if (sum < kNegligible) break;
    }
    node.log_transmittance = sum;
    node.max_phi = max_phi;
    node.pi = -std::expm1(sum);
  }
  const int s = stride_;
  for (int dv = 0; dv < region_.height(); ++dv) {
    const int b = dv / s;
    const double beta = double(dv % s) / s;
    for (int du = 0; du < region_.width(); ++du) {
      const int a = du / s;
      const double alpha = double(du % s) / s;
      const std::size_t i00 = std::size_t(b) * nodes_u_ + a;
      const std::size_t i10 = i00 + 1, i01 = i00 + nodes_u_, i11 = i01 + 1;
      pixels_(dv, du) = (1 - beta) * ((1 - alpha) * nodes_[i00].pi + alpha * nodes_[i10].pi) +
                        beta * ((1 - alpha) * nodes_[i01].pi + alpha * nodes_[i11].pi);
    }
  }
}

void SoftRenderer::backward(const RegionArray& grad_pixels, const double* values,
                            Eigen::Vector4d& grad_pose, double* grid_adjoint) const {
  if (region_.empty()) return;
  const int s = stride_;
  std::vector<double> grad_nodes(nodes_.size(), 0.0);
  for (int dv = 0; dv < region_.height(); ++dv) {
    const int b = dv / s;
    const double beta = double(dv % s) / s;
    for (int du = 0; du < region_.width(); ++du) {
      const double g = grad_pixels(dv, du);
      if (g == 0) continue;
      const int a = du / s;
      const double alpha = double(du % s) / s;
      const std::size_t i00 = std::size_t(b) * nodes_u_ + a;
      grad_nodes[i00] += g * (1 - beta) * (1 - alpha);
      grad_nodes[i00 + 1] += g * (1 - beta) * alpha;
      grad_nodes[i00 + nodes_u_] += g * beta * (1 - alpha);
      grad_nodes[i00 + nodes_u_ + 1] += g * beta * alpha;
    }
  }

  const Eigen::Matrix3d R = pose_.rotation();
  const Eigen::Vector3d o = R.transpose() * (camera_center_ - pose_.center());
  const trilinear::Strides strides(meta_);
  const double inv_voxel = 1.0 / meta_.voxel_size;
  const int K = cfg_.samples_per_ray;
  Eigen::Vector3d grad_obj = Eigen::Vector3d::Zero();
  double grad_theta = 0;
  Eigen::Vector4d grad_interval = Eigen::Vector4d::Zero();
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    const Node& node = nodes_[n];
    const double g = grad_nodes[n];
    // Skipped rays contribute below 1e-30 relative to g.
    if (!node.hit || g == 0 || cfg_.zeta * node.max_phi < kNegligible || node.log_transmittance < kNegligible)
      continue;
    const double transmittance = std::exp(node.log_transmittance);
    const Eigen::Vector3d d = R.transpose() * directions_[n];
    const double scale = g * transmittance * cfg_.zeta;
    double a0 = 0, a1 = 0;
    const trilinear::Cell* cells = &cells_[n * std::size_t(K)];
    const double* sig = &sigmoids_[n * std::size_t(K)];
    for (int i = 0; i < K; ++i) {
      if (sig[i] == 0) continue;
      const double beta = (i + 0.5) / K;
      const double t = node.t0 + beta * (node.t1 - node.t0);
      const Eigen::Vector3d x = o + t * d;
      const trilinear::Cell& c = cells[i];
      Eigen::Vector3d grad_phi;
      trilinear::value_gradient(values, strides, c, inv_voxel, grad_phi);
      const double w = scale * sig[i];
      trilinear::scatter(grid_adjoint, strides, c, w);
      grad_obj += w * grad_phi;
      grad_theta += w * (grad_phi.x() * x.y() - grad_phi.y() * x.x());
      const double along = w * grad_phi.dot(d);
      a0 += along * (1 - beta);
      a1 += along * beta;
    }
    grad_interval += a0 * node.dt0 + a1 * node.dt1;
  }
  grad_pose.head<3>() += -R * grad_obj;
  grad_pose[3] += grad_theta;
  grad_pose += grad_interval;
}

PixelRegion projected_cube_region(const GridMeta& meta, const Pose& pose, const Camera& cam,
                                  double near) {
  const Eigen::Vector3d lo = meta.lower(), hi = meta.upper();
  double umin = kInf, vmin = kInf, umax = -kInf, vmax = -kInf;
  int in_front = 0;
  for (int c = 0; c < 8; ++c) {
    const Eigen::Vector3d corner(c & 1 ? hi.x() : lo.x(), c & 2 ? hi.y() : lo.y(), c & 4 ? hi.z() : lo.z());
    const Eigen::Vector3d xc = cam.to_camera(object_to_world(pose, corner));
    if (xc.z() <= near) continue;
    ++in_front;
    const double u = cam.fx() * xc.x() / xc.z() + cam.cx(), v = cam.fy() * xc.y() / xc.z() + cam.cy();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (in_front == 0) return {};
  if (in_front < 8) return {0, 0, cam.width(), cam.height()};
  PixelRegion r{int(std::floor(umin)) - 1, int(std::floor(vmin)) - 1, int(std::ceil(umax)) + 2,
                int(std::ceil(vmax)) + 2};
  r.u0 = std::clamp(r.u0, 0, cam.width());
  r.v0 = std::clamp(r.v0, 0, cam.height());
  r.u1 = std::clamp(r.u1, 0, cam.width());
  r.v1 = std::clamp(r.v1, 0, cam.height());
  return r;
}

Mask soft_silhouette(const ShapePrior& prior, const ShapeCode& s, const Pose& p, const Camera& cam,
                     const RenderConfig& cfg) {
  Mask out(cam.width(), cam.height());
  const PixelRegion region = projected_cube_region(prior.meta, p, cam, cfg.near);
  if (region.empty()) return out;
  Eigen::VectorXd values;
  decode_into(prior, s, values);
  SoftRenderer renderer(cam, cfg, region);
  renderer.forward(prior.meta, values.data(), p);
  out.values.block(region.v0, region.u0, region.height(), region.width()) =
      renderer.values().cast<float>();
  return out;
}

double first_crossing(const SdfGrid& grid, const Pose& p, const Ray& ray, double t_min, double t_max) {
  const Eigen::Matrix3d R = p.rotation();
  const Eigen::Vector3d o = R.transpose() * (ray.origin - p.center());
  const Eigen::Vector3d d = R.transpose() * ray.direction;
  const CubeHit h = intersect_cube(grid.meta, R, o, d, t_min, t_max);
  if (!h.hit) return kInf;
  const trilinear::Lattice lat(grid.meta);
  const trilinear::Strides strides(lat);
  auto phi_at = [&](double t) {
    trilinear::Cell c;
    trilinear::locate_clamped(lat, o + t * d, c);
    return trilinear::value(grid.values.data(), strides, c);
  };
  const double min_step = 0.25 * grid.meta.voxel_size;
  double t_prev = h.t0, t = h.t0;
  double phi = phi_at(t);
  if (phi >= 0) return t;
  while (t < h.t1) {
    t_prev = t;
    t = std::min(h.t1, t + std::max(min_step, -0.5 * phi));
    phi = phi_at(t);
    if (phi >= 0) {
      double a = t_prev, b = t;
      for (int it = 0; it < 30; ++it) {
        const double m = 0.5 * (a + b);
        (phi_at(m) >= 0 ? b : a) = m;
      }
      return b;
    }
  }
  return kInf;
}

Eigen::ArrayXXd hard_depth(const SdfGrid& grid, const Pose& p, const Camera& cam) {
  Eigen::ArrayXXd depth = Eigen::ArrayXXd::Constant(cam.height(), cam.width(), kInf);
  const PixelRegion region = projected_cube_region(grid.meta, p, cam);
  for (int v = region.v0; v < region.v1; ++v)
    for (int u = region.u0; u < region.u1; ++u)
      depth(v, u) = first_crossing(grid, p, ray_through_pixel(cam, u, v), 1e-6);
  return depth;
}

Mask hard_silhouette(const SdfGrid& grid, const Pose& p, const Camera& cam) {
  const Eigen::ArrayXXd depth = hard_depth(grid, p, cam);
  return Mask(MaskArray((depth < kInf).cast<float>()));
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  if (v.size() % 2) return v[mid];
  const double hi = v[mid];
  return 0.5 * (*std::max_element(v.begin(), v.begin() + mid) + hi);
}

OcclusionResult occlusion_maps(const std::vector<OcclusionInput>& instances) {
  OcclusionResult out;
  const std::size_t n = instances.size();
  out.median_depth.resize(n);
  out.empty_depths.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.empty_depths[i] = instances[i].depths.empty();
    out.median_depth[i] = out.empty_depths[i] ? kInf : median(instances[i].depths);
  }
  out.order.resize(n);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](int a, int b) { return out.median_depth[a] < out.median_depth[b]; });
  out.maps.resize(n);
  if (n == 0) return out;
  const int w = instances[0].mask->width(), h = instances[0].mask->height();
  MaskArray covered = MaskArray::Zero(h, w);
  for (int idx : out.order) {
    const Mask& m = *instances[idx].mask;
    if (m.width() != w || m.height() != h) throw Error(ErrorCode::SizeMismatch, "instance masks differ in size");
    out.maps[idx] = Mask(MaskArray(1.0f - covered));
    covered = covered.max((m.values >= 0.5f).cast<float>());
  }
  return out;
}

}  // namespace slf
