#include "slf/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <thread>

#include "slf/error.hpp"

namespace slf {

void FitConfig::validate() const {
  if (!(learning_rate > 0) || iterations < 1 || yaw_seeds < 1 || seed_trial_iters < 1 ||
      seed_trial_iters > iterations || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) ||
      !(epsilon > 0))
    throw Error(ErrorCode::ParamOutOfRange, "invalid fit configuration");
  weights.validate();
  render.validate();
}

std::string_view to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Ok: return "ok";
    case FitStatus::LowPoints: return "low_points";
    case FitStatus::Degenerate: return "degenerate";
  }
  return "unknown";
}

std::vector<InitState> init_instance(const FrustumCloud& frustum, const ShapePrior& prior, int yaw_seeds) {
  if (!frustum.eligible || frustum.size() == 0)
    throw Error(ErrorCode::TooFewPoints, "instance " + std::to_string(frustum.id) + " has too few points");
  Eigen::Vector3d c;
  for (int a = 0; a < 3; ++a) {
    std::vector<double> v;
    v.reserve(std::size_t(frustum.size()));
    for (int i = 0; i < frustum.size(); ++i) v.push_back(frustum.points(a, i));
    c[a] = median(std::move(v));
  }
  std::vector<InitState> seeds;
  for (int k = 0; k < yaw_seeds; ++k) {
    double theta = 2 * std::numbers::pi * k / yaw_seeds;
    seeds.push_back({Pose(c.x(), c.y(), c.z(), theta), ShapeCode::Zero(prior.dim())});
  }
  return seeds;
}

SceneObservations observe_scene(const Scene& scene, const FitConfig& cfg) {
  SceneObservations obs;
  auto cand = ground_candidates(scene);
  try {
    obs.ground = fit_ground_ransac(cand, cfg.ransac);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateGround) throw;
  }
  std::vector<OcclusionInput> occ;
  for (const auto& inst : scene.instances) {
    if (!inst.mask) throw Error(ErrorCode::BadPrompt, "instance " + std::to_string(inst.id) + " has no mask");
    obs.frustums.push_back(frustum_points(scene, inst, obs.ground ? &*obs.ground : nullptr, cfg.frustum));
    occ.push_back({&*inst.mask, obs.frustums.back().depths});
  }
  obs.occlusion = occlusion_maps(occ);
  return obs;
}

namespace {

struct Adam {
  Eigen::VectorXd m, v;
  int t{0};

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& g, const FitConfig& cfg) {
    if (m.size() == 0) {
      m = Eigen::VectorXd::Zero(g.size());
      v = Eigen::VectorXd::Zero(g.size());
    }
    ++t;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g.cwiseAbs2();
    double c1 = 1 - std::pow(cfg.beta1, t), c2 = 1 - std::pow(cfg.beta2, t);
    params.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  }
};

struct Seed {
  Eigen::VectorXd params;
  Adam adam;
  EnergyTerms start;
};

// One instance's optimization, advanced one iteration at a time.
class InstanceRun {
 public:
  InstanceRun(const ShapePrior& prior, const Observation& obs, const FitConfig& cfg,
              const std::vector<InitState>& inits, int id)
      : cfg_(cfg), energy_(prior, obs, cfg.weights, cfg.render), id_(id) {
    for (const auto& s : inits) seeds_.push_back({pack_params(s.pose, s.shape), {}, {}});
    grad_.resize(energy_.dim());
  }

  bool done() const { return done_; }
  int iteration() const { return iter_; }
  int selected() const { return selected_; }
  const Eigen::VectorXd& params() const { return seeds_[std::size_t(std::max(selected_, 0))].params; }
  const EnergyTerms& start() const { return seeds_[std::size_t(selected_)].start; }
  InstanceEnergy& energy() { return energy_; }

  double step() {
    double e = 0;
    if (iter_ < cfg_.seed_trial_iters) {
      for (auto& s : seeds_) e = advance(s);
      e = std::numeric_limits<double>::quiet_NaN();
      ++iter_;
      if (iter_ == cfg_.seed_trial_iters) select();
    } else {
      if (selected_ < 0) select();
      e = advance(seeds_[std::size_t(selected_)]);
      ++iter_;
      if (cfg_.plateau_stop) {
        history_.push_back(e);
        if (history_.size() > 10 && std::abs(history_.back() - history_[history_.size() - 11]) < 1e-6)
          done_ = true;
      }
    }
    if (iter_ >= cfg_.iterations) done_ = true;
    return e;
  }

 private:
  double advance(Seed& s) {
    EnergyTerms t = energy_.evaluate(s.params, &grad_);
    if (s.adam.t == 0) s.start = t;
    s.adam.step(s.params, grad_, cfg_);
    s.params[3] = wrap_angle(s.params[3]);
    return t.total;
  }

  void select() {
    double best = std::numeric_limits<double>::infinity();
    selected_ = 0;
    for (std::size_t k = 0; k < seeds_.size(); ++k) {
      double e = energy_.evaluate(seeds_[k].params).total;
      if (e < best) {  // strict: ties keep the earlier (smaller) heading
        best = e;
        selected_ = int(k);
      }
    }
  }

  const FitConfig& cfg_;
  InstanceEnergy energy_;
  int id_;
  std::vector<Seed> seeds_;
  Eigen::VectorXd grad_;
  std::vector<double> history_;
  int iter_{0};
  int selected_{-1};
  bool done_{false};
};

Mask region_to_mask(const SoftRenderer::RegionArray& a, const PixelRegion& r, int width, int height) {
  Mask m(width, height);
  if (!r.empty()) m.values.block(r.v0, r.u0, r.height(), r.width()) = a.cast<float>();
  return m;
}

// Label for instances the optimizer cannot use: mean shape at the median of
// whatever points exist, or on the ray through the mask center otherwise.
FitResult fallback(const Scene& scene, const SceneObservations& obs, std::size_t idx, const ShapePrior& prior,
                   FitStatus status) {
  const auto& inst = scene.instances[idx];
  const auto& fr = obs.frustums[idx];
  FitResult r;
  r.id = inst.id;
  r.status = status;
  r.shape = ShapeCode::Zero(prior.dim());
  Eigen::Vector3d c;
  if (fr.size() > 0) {
    for (int a = 0; a < 3; ++a) {
      std::vector<double> v;
      for (int i = 0; i < fr.size(); ++i) v.push_back(fr.points(a, i));
      c[a] = median(std::move(v));
    }
  } else {
    auto bb = mask_bbox(*inst.mask);
    Eigen::Vector2d px = bb ? Eigen::Vector2d(0.5 * (bb->u0 + bb->u1 - 1), 0.5 * (bb->v0 + bb->v1 - 1))
                            : Eigen::Vector2d(scene.camera.cx(), scene.camera.cy());
    Ray ray = ray_through_pixel(scene.camera, px.x(), px.y());
    double t = 10.0;
    if (obs.ground) {
      const auto& g = *obs.ground;
      double denom = ray.direction.z() - g.a * ray.direction.x() - g.b * ray.direction.y();
      double num = g.height(ray.origin.x(), ray.origin.y()) - ray.origin.z();
      if (denom < -1e-9 && num / denom > 0) t = num / denom;
    }
    c = ray.at(t);
  }
  r.pose = Pose(c.x(), c.y(), c.z(), 0.0);
  try {
    r.box = extract_box(prior, r.shape, r.pose);
  } catch (const Error&) {
    r.status = FitStatus::Degenerate;
  }
  r.confidence = 0;
  return r;
}

template <class F>
void parallel_for(int n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  int workers = std::min(threads, n);
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) f(i);
    });
}

}  // namespace

std::vector<FitResult> fit_scene(const Scene& scene, const ShapePrior& prior, const FitConfig& cfg,
                                 const FitOptions& options) {
  cfg.validate();
  return fit_scene(scene, observe_scene(scene, cfg), prior, cfg, options);
}

std::vector<FitResult> fit_scene(const Scene& scene, const SceneObservations& obs, const ShapePrior& prior,
                                 const FitConfig& cfg, const FitOptions& options) {
  cfg.validate();
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const auto& ids = options.instance_ids;
    if (ids.empty() || std::find(ids.begin(), ids.end(), scene.instances[i].id) != ids.end())
      selected.push_back(i);
  }
  for (int id : options.instance_ids)
    if (!scene.find(id)) throw Error(ErrorCode::BadPrompt, "unknown instance " + std::to_string(id));
  std::sort(selected.begin(), selected.end(),
            [&](auto a, auto b) { return scene.instances[a].id < scene.instances[b].id; });

  std::vector<FitResult> results(selected.size());
  std::vector<std::unique_ptr<InstanceRun>> runs(selected.size());
  std::vector<Observation> observations(selected.size());
  const GroundPlane* ground = obs.ground ? &*obs.ground : nullptr;
  for (std::size_t k = 0; k < selected.size(); ++k) {
    std::size_t i = selected[k];
    const auto& fr = obs.frustums[i];
    if (!fr.eligible) {
      results[k] = fallback(scene, obs, i, prior, FitStatus::LowPoints);
      continue;
    }
    observations[k] = {&scene.camera, &*scene.instances[i].mask, &obs.occlusion.maps[i], &fr, ground};
    const auto given = options.initial.find(scene.instances[i].id);
    runs[k] = std::make_unique<InstanceRun>(
        prior, observations[k], cfg,
        given != options.initial.end() ? std::vector<InitState>{given->second} : init_instance(fr, prior, cfg.yaw_seeds),
        scene.instances[i].id);
  }

  auto cancelled = [&] { return options.cancel && options.cancel->load(); };
  auto report = [&](std::size_t k, double e) {
    if (options.on_progress)
      options.on_progress({scene.instances[selected[k]].id, runs[k]->iteration(), e, &runs[k]->params()});
  };
  int threads = options.threads > 0 ? options.threads : int(std::max(1u, std::thread::hardware_concurrency()));
  const int n = int(selected.size());

  if (options.batched) {
    std::vector<double> last(selected.size());
    while (!cancelled()) {
      std::vector<int> active;
      for (int k = 0; k < n; ++k)
        if (runs[std::size_t(k)] && !runs[std::size_t(k)]->done()) active.push_back(k);
      if (active.empty()) break;
      parallel_for(int(active.size()), threads, [&](int a) {
        auto k = std::size_t(active[std::size_t(a)]);
        last[k] = runs[k]->step();
      });
      for (int k : active) report(std::size_t(k), last[std::size_t(k)]);
    }
  } else {
    for (std::size_t k = 0; k < selected.size(); ++k)
      while (runs[k] && !runs[k]->done() && !cancelled()) report(k, runs[k]->step());
  }
  if (cancelled()) throw Error(ErrorCode::Cancelled, "fit cancelled");

  for (std::size_t k = 0; k < selected.size(); ++k) {
    if (!runs[k]) continue;
    std::size_t i = selected[k];
    auto& run = *runs[k];
    FitResult& r = results[k];
    r.id = scene.instances[i].id;
    r.iterations = run.iteration();
    r.selected_seed = run.selected();
    r.start_energy = run.start();
    r.pose = unpack_pose(run.params());
    r.shape = unpack_shape(run.params());
    r.energy = run.energy().evaluate(run.params());
    try {
      r.box = extract_box(prior, r.shape, r.pose);
      const auto& target = *scene.instances[i].mask;
      Mask proj = region_to_mask(run.energy().rendered(), run.energy().region(), target.width(), target.height());
      r.confidence = confidence(proj, obs.occlusion.maps[i], target);
      r.status = FitStatus::Ok;
    } catch (const Error&) {
      r = fallback(scene, obs, i, prior, FitStatus::Degenerate);
      r.status = FitStatus::Degenerate;
    }
  }
  return results;
}

Box3 extract_box(const SdfGrid& grid, const Pose& p) {
  Eigen::Vector3d lo, hi;
  if (!interior_bounds(grid, lo, hi)) throw Error(ErrorCode::EmptyShape, "shape has no interior voxels");
  double h = 0.5 * grid.meta.voxel_size;
  lo.array() -= h;
  hi.array() += h;
  Box3 b;
  b.center = object_to_world(p, Eigen::Vector3d(0.5 * (lo + hi)));
  b.dims = hi - lo;
  b.yaw = p.theta;
  return b;
}

Box3 extract_box(const ShapePrior& prior, const ShapeCode& s, const Pose& p) {
  return extract_box(decode(prior, s), p);
}

std::size_t Occupancy::occupied() const {
  return std::size_t(std::count(cells.begin(), cells.end(), std::uint8_t(1)));
}

Occupancy export_occupancy(const ShapePrior& prior, const ShapeCode& s, const Pose& p, double voxel_size,
                           const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  if (!(voxel_size > 0) || !((hi - lo).array() > 0).all())
    throw Error(ErrorCode::ParamOutOfRange, "invalid occupancy bounds");
  SdfGrid grid = decode(prior, s);
  Occupancy o;
  o.voxel_size = voxel_size;
  for (int a = 0; a < 3; ++a) o.dims[a] = std::max(1, int(std::ceil((hi[a] - lo[a]) / voxel_size - 1e-9)));
  o.origin = lo.array() + 0.5 * voxel_size;
  o.cells.assign(std::size_t(o.dims.prod()), 0);
  std::size_t idx = 0;
  for (int k = 0; k < o.dims.z(); ++k)
    for (int j = 0; j < o.dims.y(); ++j)
      for (int i = 0; i < o.dims.x(); ++i, ++idx) {
        Eigen::Vector3d w = o.origin + voxel_size * Eigen::Vector3d(i, j, k);
        o.cells[idx] = sample(grid, world_to_object(p, w)) >= 0 ? 1 : 0;
      }
  return o;
}

double confidence(const Mask& projected, const Mask& occlusion, const Mask& target) {
  if (projected.width() != target.width() || projected.height() != target.height() ||
      occlusion.width() != target.width() || occlusion.height() != target.height())
    throw Error(ErrorCode::MaskSizeMismatch, "confidence masks differ in size");
  auto a = ((projected.values >= 0.5f) && (occlusion.values >= 0.5f)).cast<double>();
  auto b = (target.values >= 0.5f).cast<double>();
  double inter = (a * b).sum();
  double uni = a.sum() + b.sum() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace slf
