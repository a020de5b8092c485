#include "slf/energy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "slf/trilinear.hpp"

namespace slf {

namespace {

constexpr double kDiceEps = 1e-6;

// Bounds the interpolant's gradient: each component is at most this over the voxel size.
double max_neighbor_difference(const GridMeta& meta, const double* v) {
  const Eigen::Index nx = meta.dims.x(), ny = meta.dims.y(), nz = meta.dims.z();
  const Eigen::Index sy = nx, sz = nx * ny;
  double m = 0;
  for (Eigen::Index k = 0; k < nz; ++k)
    for (Eigen::Index j = 0; j < ny; ++j) {
      const double* row = v + j * sy + k * sz;
      for (Eigen::Index i = 0; i < nx; ++i) {
        if (i + 1 < nx) m = std::max(m, std::abs(row[i + 1] - row[i]));
        if (j + 1 < ny) m = std::max(m, std::abs(row[i + sy] - row[i]));
        if (k + 1 < nz) m = std::max(m, std::abs(row[i + sz] - row[i]));
      }
    }
  return m;
}

// Surface and ray terms of the point-cloud energy over a decoded grid.
// Gradients are accumulated (scaled by `scale`) when grad_pose is non-null.
// `max_step` bounds |phi| differences between axis neighbours of the grid.
PcTerm pc_energy(const GridMeta& meta, const double* values, double max_step, const Pose& pose,
                 const FrustumCloud& frustum, const Camera& cam, const EnergyWeights& w, double scale,
                 Eigen::Vector4d* grad_pose, double* adjoint) {
  const int n = frustum.size();
  if (n == 0) throw Error(ErrorCode::EmptyFrustum, "instance " + std::to_string(frustum.id));
  const Eigen::Matrix3d R = pose.rotation();
  const Eigen::Vector3d c = pose.center();
  const trilinear::Lattice lat(meta);
  const trilinear::Strides strides(lat);
  const double inv_voxel = 1.0 / meta.voxel_size;
  const bool grad = grad_pose != nullptr;
  const double surface_scale = w.normalize_pc ? 1.0 / n : 1.0;

  PcTerm out;
  out.hits.hits.assign(n, Eigen::Vector3d::Zero());
  out.hits.found.assign(n, false);

  // Object-frame gradient accumulators; rotated into world at the end.
  Eigen::Vector3d g_obj_surface = Eigen::Vector3d::Zero();
  double g_theta_surface = 0;

  for (int j = 0; j < n; ++j) {
    const Eigen::Vector3d x_obj = R.transpose() * (frustum.points.col(j) - c);
    trilinear::Cell cell;
    if (!trilinear::locate(lat, x_obj, cell)) {
      out.surface += w.sdf_clamp;
      continue;
    }
    Eigen::Vector3d grad_phi;
    const double phi = trilinear::value_gradient(values, strides, cell, inv_voxel, grad_phi);
    out.surface += std::min(std::abs(phi), w.sdf_clamp);
    if (grad && std::abs(phi) < w.sdf_clamp && phi != 0) {
      const double sg = (phi > 0 ? 1.0 : -1.0) * scale * surface_scale;
      trilinear::scatter(adjoint, strides, cell, sg);
      g_obj_surface += sg * grad_phi;
      g_theta_surface += sg * (grad_phi.x() * x_obj.y() - grad_phi.y() * x_obj.x());
    }
  }
  out.surface *= surface_scale;

  // Ray term on a pose-independent lattice t = k * step along each camera ray.
  const Eigen::Vector3d o_world = cam.center();
  const Eigen::Vector3d o = R.transpose() * (o_world - c);
  const double step = 0.5 * meta.voxel_size;
  const Eigen::Vector3d lo = meta.lower(), hi = meta.upper();
  const double lipschitz = std::max(max_step, 1e-12) * std::sqrt(3.0) * inv_voxel;
  struct HitGrad {
    trilinear::Cell ca, cb;
    Eigen::Vector3d xa, xb;
    double coef_a, coef_b;  // d(r^2)/d(phi_a), d(r^2)/d(phi_b)
  };
  std::vector<HitGrad> hit_grads;
  for (int j = 0; j < n; ++j) {
    const Eigen::Vector3d xw = frustum.points.col(j);
    const double tx = (xw - o_world).norm();
    if (tx <= 0) continue;
    const Eigen::Vector3d dir_world = (xw - o_world) / tx;
    const Eigen::Vector3d d = R.transpose() * dir_world;
    double t0 = 0, t1 = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(d[a]) < 1e-12) {
        miss = o[a] < lo[a] || o[a] > hi[a];
        continue;
      }
      const double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
      t0 = std::max(t0, std::min(ta, tb));
      t1 = std::min(t1, std::max(ta, tb));
    }
    if (miss || !(t0 < t1)) continue;
    const long k_begin = long(std::ceil(t0 / step)), k_end = long(std::floor(t1 / step));
    long k_prev = k_begin - 1;
    double phi_prev = 0;
    trilinear::Cell cell_prev{};
    for (long k = k_begin; k <= k_end;) {
      const Eigen::Vector3d x = o + (k * step) * d;
      trilinear::Cell cell;
      trilinear::locate_clamped(lat, x, cell);
      const double phi = trilinear::value(values, strides, cell);
      if (phi >= 0) {
        if (k > k_begin) {
          if (k_prev != k - 1) {
            trilinear::locate_clamped(lat, o + ((k - 1) * step) * d, cell_prev);
            phi_prev = trilinear::value(values, strides, cell_prev);
          }
          const double pa = phi_prev, pb = phi, ta = (k - 1) * step;
          const double denom = pa - pb;
          const double t_hit = ta + step * pa / denom;
          const double r = tx - t_hit;
          out.hits.hits[j] = o_world + t_hit * dir_world;
          out.hits.found[j] = true;
          out.ray += r * r;
          if (grad) {
            HitGrad h;
            h.ca = cell_prev;
            h.cb = cell;
            h.xa = o + ta * d;
            h.xb = x;
            // r^2 with t_hit = ta + step * pa / (pa - pb).
            h.coef_a = -2 * r * (-step * pb / (denom * denom));
            h.coef_b = -2 * r * (step * pa / (denom * denom));
            hit_grads.push_back(h);
          }
        }
        break;
      }
      k_prev = k;
      phi_prev = phi;
      cell_prev = cell;
      // Lattice points nearer than -phi / lipschitz are negative too.
      k += std::max(1L, long(std::ceil(-phi * (1 - 1e-9) / (lipschitz * step))) - 1);
    }
  }
  const int hit_count = out.hits.count();
  if (hit_count > 0) out.ray /= hit_count;

  Eigen::Vector3d g_obj_ray = Eigen::Vector3d::Zero();
  double g_theta_ray = 0;
  if (grad && hit_count > 0) {
    const double inv = scale / hit_count;
    for (const auto& h : hit_grads) {
      Eigen::Vector3d ga, gb;
      trilinear::value_gradient(values, strides, h.ca, inv_voxel, ga);
      trilinear::value_gradient(values, strides, h.cb, inv_voxel, gb);
      const double wa = h.coef_a * inv, wb = h.coef_b * inv;
      trilinear::scatter(adjoint, strides, h.ca, wa);
      trilinear::scatter(adjoint, strides, h.cb, wb);
      g_obj_ray += wa * ga + wb * gb;
      g_theta_ray += wa * (ga.x() * h.xa.y() - ga.y() * h.xa.x()) + wb * (gb.x() * h.xb.y() - gb.y() * h.xb.x());
    }
  }
  if (grad) {
    grad_pose->head<3>() += -R * (g_obj_surface + g_obj_ray);
    (*grad_pose)[3] += g_theta_surface + g_theta_ray;
  }
  out.value = out.surface + out.ray;
  return out;
}

}  // namespace

void EnergyWeights::validate() const {
  if (mask < 0 || pc < 0 || ground < 0) throw Error(ErrorCode::ParamOutOfRange, "energy weights must be >= 0");
  if (!(mask > 0 || pc > 0 || ground > 0)) throw Error(ErrorCode::ParamOutOfRange, "at least one weight must be > 0");
  if (!(sdf_clamp > 0)) throw Error(ErrorCode::ParamOutOfRange, "sdf_clamp must be > 0");
}

int RayHitSet::count() const { return int(std::count(found.begin(), found.end(), true)); }

double e_mask(const Mask& projected, const Mask& target, const Mask& occlusion) {
  if (projected.width() != target.width() || projected.height() != target.height() ||
      occlusion.width() != target.width() || occlusion.height() != target.height())
    throw Error(ErrorCode::SizeMismatch, "mask dimensions differ");
  const auto po = projected.values.cast<double>() * occlusion.values.cast<double>();
  const double inter = (po * target.values.cast<double>()).sum();
  const double denom = po.sum() + target.values.cast<double>().sum() + kDiceEps;
  return 1.0 - 2.0 * inter / denom;
}

PcTerm e_pc(const ShapePrior& prior, const ShapeCode& s, const Pose& p, const FrustumCloud& frustum,
            const Camera& cam, const EnergyWeights& weights) {
  Eigen::VectorXd values;
  decode_into(prior, s, values);
  return pc_energy(prior.meta, values.data(), max_neighbor_difference(prior.meta, values.data()), p, frustum, cam,
                   weights, 1.0, nullptr, nullptr);
}

double e_ground(const Pose& p, double h_hat, const GroundPlane& g) {
  const double r = p.z - 0.5 * h_hat - g.height(p.x, p.y);
  return r * r;
}

double shape_height(const GridMeta& meta, const Eigen::VectorXd& values) {
  const Eigen::Index layer = Eigen::Index(meta.dims.x()) * meta.dims.y();
  int kmin = -1, kmax = -1;
  for (int k = 0; k < meta.dims.z(); ++k) {
    if ((values.segment(k * layer, layer).array() >= 0).any()) {
      if (kmin < 0) kmin = k;
      kmax = k;
    }
  }
  if (kmin < 0) return 0.0;
  return (kmax - kmin + 1) * meta.voxel_size;
}

Eigen::VectorXd pack_params(const Pose& p, const ShapeCode& s) {
  Eigen::VectorXd v(4 + s.size());
  v << p.x, p.y, p.z, p.theta, s;
  return v;
}

Pose unpack_pose(const Eigen::VectorXd& params) { return Pose(params[0], params[1], params[2], params[3]); }

ShapeCode unpack_shape(const Eigen::VectorXd& params) { return params.tail(params.size() - 4); }

InstanceEnergy::InstanceEnergy(const ShapePrior& prior, const Observation& obs, const EnergyWeights& weights,
                               const RenderConfig& cfg)
    : prior_(&prior),
      obs_(obs),
      weights_(weights),
      cfg_(cfg),
      renderer_(*obs.camera, cfg, [&] {
        const auto box = mask_bbox(*obs.target);
        return box ? dilate_region(*box, 1.25, obs.camera->width(), obs.camera->height()) : PixelRegion{};
      }()) {
  weights_.validate();
  const Mask& target = *obs.target;
  const Mask& occ = *obs.occlusion;
  if (target.width() != obs.camera->width() || target.height() != obs.camera->height() ||
      occ.width() != target.width() || occ.height() != target.height())
    throw Error(ErrorCode::SizeMismatch, "observation masks do not match the camera");
  target_area_ = target.values.cast<double>().sum();
  const PixelRegion& r = renderer_.region();
  target_region_ = target.values.block(r.v0, r.u0, r.height(), r.width()).cast<double>();
  occlusion_region_ = occ.values.block(r.v0, r.u0, r.height(), r.width()).cast<double>();
  adjoint_.setZero(prior.mean.size());
  max_step_mean_ = max_neighbor_difference(prior.meta, prior.mean.data());
  max_step_basis_.resize(prior.dim());
  for (int k = 0; k < prior.dim(); ++k)
    max_step_basis_[k] = max_neighbor_difference(prior.meta, prior.basis.col(k).data());
}

double InstanceEnergy::mask_term(Eigen::Vector4d* grad_pose) {
  const auto& P = renderer_.values();
  const double inter = (P * occlusion_region_ * target_region_).sum();
  const double denom = (P * occlusion_region_).sum() + target_area_ + kDiceEps;
  if (grad_pose) {
    // dE/dP = -2 O (Y D - I) / D^2, scaled by the term weight.
    const SoftRenderer::RegionArray g =
        (-2.0 * weights_.mask / (denom * denom)) * occlusion_region_ * (target_region_ * denom - inter);
    renderer_.backward(g, values_.data(), *grad_pose, adjoint_.data());
  }
  return 1.0 - 2.0 * inter / denom;
}

EnergyTerms InstanceEnergy::evaluate(const Eigen::VectorXd& params, Eigen::VectorXd* gradient) {
  if (params.size() != dim()) throw Error(ErrorCode::LengthMismatch, "parameter vector length");
  const Pose pose = unpack_pose(params);
  decode_into(*prior_, params.tail(prior_->dim()), values_);
  const bool grad = gradient != nullptr;
  if (grad) adjoint_.setZero();
  Eigen::Vector4d grad_pose = Eigen::Vector4d::Zero();

  EnergyTerms t;
  renderer_.forward(prior_->meta, values_.data(), pose);
  t.mask = mask_term(grad && weights_.mask > 0 ? &grad_pose : nullptr);

  const bool pc_grad = grad && weights_.pc > 0;
  double max_step = max_step_mean_;
  for (int k = 0; k < prior_->dim(); ++k) max_step += std::abs(params[4 + k]) * max_step_basis_[k];
  t.pc = pc_energy(prior_->meta, values_.data(), max_step, pose, *obs_.frustum, *obs_.camera, weights_, weights_.pc,
                   pc_grad ? &grad_pose : nullptr, pc_grad ? adjoint_.data() : nullptr)
             .value;

  if (obs_.ground) {
    const double h_hat = shape_height(prior_->meta, values_);
    t.ground = e_ground(pose, h_hat, *obs_.ground);
    if (grad && weights_.ground > 0) {
      const double r = pose.z - 0.5 * h_hat - obs_.ground->height(pose.x, pose.y);
      const double k = 2 * r * weights_.ground;
      grad_pose[0] += -k * obs_.ground->a;
      grad_pose[1] += -k * obs_.ground->b;
      grad_pose[2] += k;
    }
  }
  t.total = weights_.mask * t.mask + weights_.pc * t.pc + weights_.ground * t.ground;
  if (grad) {
    gradient->resize(dim());
    gradient->head<4>() = grad_pose;
    gradient->tail(prior_->dim()).noalias() = prior_->basis.transpose() * adjoint_;
  }
  return t;
}

EnergyResult total_energy(const ShapePrior& prior, const ShapeCode& s, const Pose& p, const Observation& obs,
                          const EnergyWeights& weights, const RenderConfig& cfg) {
  InstanceEnergy energy(prior, obs, weights, cfg);
  EnergyResult r;
  r.terms = energy.evaluate(pack_params(p, s), &r.gradient);
  return r;
}

}  // namespace slf
