#include "slf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "slf/error.hpp"
#include "slf/metrics.hpp"

namespace slf {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kMaxAttempts = 100;
constexpr int kMinVisiblePixels = 200;

double horizontal_fov(const CameraSpec& c) { return 2.0 * std::atan(0.5 * c.width / c.focal); }

// Corners of the box in world coordinates.
std::array<Eigen::Vector3d, 8> box_corners(const Box3& b) {
  std::array<Eigen::Vector3d, 8> out;
  const Pose p(b.center.x(), b.center.y(), b.center.z(), b.yaw);
  for (int k = 0; k < 8; ++k) {
    const Eigen::Vector3d o(((k & 1) ? 0.5 : -0.5) * b.dims.x(), ((k & 2) ? 0.5 : -0.5) * b.dims.y(),
                            ((k & 4) ? 0.5 : -0.5) * b.dims.z());
    out[std::size_t(k)] = object_to_world(p, o);
  }
  return out;
}

bool fully_in_view(const Box3& b, const Camera& cam) {
  for (const auto& c : box_corners(b)) {
    const Eigen::Vector3d pc = cam.to_camera(c);
    if (pc.z() < 0.5) return false;
    const double u = cam.fx() * pc.x() / pc.z() + cam.cx();
    const double v = cam.fy() * pc.y() / pc.z() + cam.cy();
    if (u < 0 || v < 0 || u > cam.width() - 1 || v > cam.height() - 1) return false;
  }
  return true;
}

Box3 inflated(Box3 b, double margin) {
  b.dims.head<2>().array() += 2 * margin;
  return b;
}

// Per-pixel owner of the nearest hit, -1 for background.
Eigen::ArrayXXi composite(const std::vector<Eigen::ArrayXXd>& depths, int w, int h) {
  Eigen::ArrayXXi owner = Eigen::ArrayXXi::Constant(h, w, -1);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < depths.size(); ++i)
        if (depths[i](v, u) < best) {
          best = depths[i](v, u);
          owner(v, u) = int(i);
        }
    }
  return owner;
}

ShapeCode sample_code(const ShapePrior& prior, double limit, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  ShapeCode s(prior.dim());
  for (int k = 0; k < prior.dim(); ++k) s[k] = std::clamp(n01(rng), -limit, limit) * prior.sigma[k];
  return s;
}

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

}  // namespace

void LidarModel::validate() const {
  if (rings < 2 || beams < 1 || rings % beams != 0 || azimuth_steps < 1 || !(elevation_max_deg > elevation_min_deg) ||
      !(range_noise >= 0) || !(max_range > 0))
    throw Error(ErrorCode::ParamOutOfRange, "invalid lidar model");
  if (rings == 64 && beams != 64 && beams != 32 && beams != 16 && beams != 8)
    throw Error(ErrorCode::ParamOutOfRange, "beam count must be 64, 32, 16 or 8");
}

void SynthConfig::validate() const {
  if (min_instances < 1 || max_instances < min_instances || !(max_range > min_range) || !(min_range > 0) ||
      !(max_yaw >= min_yaw) || !(shape_sigma >= 0) || !(bev_clearance >= 0) || prompt_points < 0)
    throw Error(ErrorCode::ParamOutOfRange, "invalid synth configuration");
  if (camera.width < 2 || camera.height < 2 || !(camera.focal > 0) || !(camera.mount_height > 0))
    throw Error(ErrorCode::ParamOutOfRange, "invalid camera spec");
  lidar.validate();
}

Camera make_synth_camera(const CameraSpec& spec, const GroundPlane& ground) {
  const Eigen::Vector3d position(0, 0, ground.height(0, 0) + spec.mount_height);
  return make_forward_camera(spec.focal, spec.focal, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1), spec.width,
                             spec.height, position, spec.pitch_deg * kDeg);
}

double resting_z(const ShapePrior& prior, const ShapeCode& s, double x, double y, const GroundPlane& g) {
  Eigen::VectorXd values;
  decode_into(prior, s, values);
  return 0.5 * shape_height(prior.meta, values) + g.height(x, y);
}

LidarReturns simulate_lidar(const std::vector<SdfGrid>& shapes, const std::vector<Pose>& poses,
                            const GroundPlane& ground, const Eigen::Vector3d& origin, double heading_fov,
                            const LidarModel& model, std::uint64_t seed) {
  model.validate();
  if (shapes.size() != poses.size()) throw Error(ErrorCode::LengthMismatch, "one pose per shape required");
  if (!(origin.z() > ground.height(origin.x(), origin.y())))
    throw Error(ErrorCode::ParamOutOfRange, "sensor must be above the ground");
  std::vector<double> radius;
  for (const auto& s : shapes) radius.push_back(0.5 * (s.meta.upper() - s.meta.lower()).norm());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int keep_every = model.rings / model.beams;
  std::vector<Eigen::Vector3f> pts;
  LidarReturns out;
  for (int r = 0; r < model.rings; ++r) {
    const double e = (model.elevation_min_deg +
                      (model.elevation_max_deg - model.elevation_min_deg) * r / (model.rings - 1)) * kDeg;
    for (int a = 0; a < model.azimuth_steps; ++a) {
      const double dr = model.range_noise * noise(rng);
      if (r % keep_every != 0) continue;
      const double az = heading_fov * ((a + 0.5) / model.azimuth_steps - 0.5);
      const Ray ray{origin, Eigen::Vector3d(std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e))};
      double best = model.max_range;
      int owner = -2;
      const double denom = ray.direction.z() - ground.a * ray.direction.x() - ground.b * ray.direction.y();
      if (denom < 0) {
        const double t = (ground.height(origin.x(), origin.y()) - origin.z()) / denom;
        if (t > 0 && t <= best) {
          best = t;
          owner = -1;
        }
      }
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        const Eigen::Vector3d oc = poses[i].center() - origin;
        const double tc = oc.dot(ray.direction);
        if ((oc - tc * ray.direction).squaredNorm() > radius[i] * radius[i] || tc + radius[i] < 0) continue;
        const double t = first_crossing(shapes[i], poses[i], ray, 0.0, best);
        if (t < best) {
          best = t;
          owner = int(i);
        }
      }
      if (owner == -2) continue;
      pts.push_back(ray.at(best + dr).cast<float>());
      out.owner.push_back(owner);
    }
  }
  out.points.resize(Eigen::Index(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) out.points.row(Eigen::Index(i)) = pts[i].transpose();
  return out;
}

SynthScene gen_scene(const SynthConfig& cfg, const ShapePrior& prior) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const Camera cam = make_synth_camera(cfg.camera, cfg.ground);
  SynthScene out{Scene{cam, "img.png", {}, {}}, {}, cfg.ground, {}, {}};
  const int w = cam.width(), h = cam.height();
  const double hfov = horizontal_fov(cfg.camera);

  std::vector<SdfGrid> grids;
  std::vector<Pose> poses;
  std::vector<ShapeCode> codes;
  std::vector<Box3> boxes;
  std::vector<Eigen::ArrayXXd> depths;

  auto place = [&](const ShapeCode& s, double x, double y, double yaw) {
    SdfGrid g = decode(prior, s);
    const double z = 0.5 * shape_height(g.meta, g.values) + cfg.ground.height(x, y);
    const Pose p(x, y, z, yaw);
    Box3 b = extract_box(g, p);
    grids.push_back(std::move(g));
    poses.push_back(p);
    codes.push_back(s);
    boxes.push_back(b);
    depths.push_back(hard_depth(grids.back(), p, cam));
  };
  auto drop_last = [&] {
    grids.pop_back();
    poses.pop_back();
    codes.pop_back();
    boxes.pop_back();
    depths.pop_back();
  };

  if (!cfg.fixed.empty()) {
    for (const auto& f : cfg.fixed) place(f.code, f.x, f.y, f.yaw);
  } else {
    const int n = std::uniform_int_distribution<int>(cfg.min_instances, cfg.max_instances)(rng);
    std::uniform_real_distribution<double> range(cfg.min_range, cfg.max_range), unit(-1.0, 1.0),
        yaw(cfg.min_yaw, cfg.max_yaw);
    for (int i = 0; i < n; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
        const ShapeCode s = sample_code(prior, cfg.shape_sigma, rng);
        const double x = range(rng);
        const double y = unit(rng) * x * std::tan(0.5 * hfov);
        const double th = yaw(rng);
        place(s, x, y, th);
        bool ok = fully_in_view(boxes.back(), cam);
        for (std::size_t j = 0; ok && j + 1 < boxes.size(); ++j)
          ok = bev_intersection(inflated(boxes[j], 0.5 * cfg.bev_clearance),
                                inflated(boxes.back(), 0.5 * cfg.bev_clearance)) <= 0;
        if (ok) {
          const Eigen::ArrayXXi owner = composite(depths, w, h);
          for (std::size_t j = 0; ok && j < depths.size(); ++j)
            ok = (owner == int(j)).count() >= kMinVisiblePixels;
        }
        if (ok)
          placed = true;
        else
          drop_last();
      }
      if (!placed) throw Error(ErrorCode::PlacementFailure, "could not place instance " + std::to_string(i));
    }
  }

  const std::size_t n = grids.size();
  const Eigen::ArrayXXi owner = composite(depths, w, h);
  const LidarReturns lidar =
      simulate_lidar(grids, poses, cfg.ground, cam.center(), hfov, cfg.lidar, cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  out.scene.image = "img.png";
  out.scene.points = lidar.points;
  out.point_owner = lidar.owner;
  out.image.width = w;
  out.image.height = h;
  out.image.pixels.assign(std::size_t(w) * std::size_t(h), 40);
  for (std::size_t i = 0; i < n; ++i) {
    Mask m(MaskArray((owner == int(i)).cast<float>()));
    const double full = double((depths[i] < std::numeric_limits<double>::infinity()).count());
    GtInstance g;
    g.id = int(i) + 1;
    g.pose = poses[i];
    g.code = codes[i];
    g.box = boxes[i];
    g.occlusion = full > 0 ? 1.0 - m.area() / full : 0.0;
    for (std::size_t k = 0; k < lidar.owner.size(); ++k) {
      if (lidar.owner[k] != int(i)) continue;
      ++g.lidar_points;
      const Eigen::Vector3d pc = cam.to_camera(lidar.points.row(Eigen::Index(k)).transpose().cast<double>());
      if (pc.z() <= 0) continue;
      const int u = int(std::lround(cam.fx() * pc.x() / pc.z() + cam.cx()));
      const int v = int(std::lround(cam.fy() * pc.y() / pc.z() + cam.cy()));
      if (u >= 0 && v >= 0 && u < w && v < h && m(u, v) >= 0.5f) ++g.unoccluded_points;
    }

    Instance inst;
    inst.id = g.id;
    std::vector<Eigen::Vector2d> fg;
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u)
        if (m(u, v) >= 0.5f) {
          fg.emplace_back(u, v);
          out.image.pixels[std::size_t(v) * std::size_t(w) + std::size_t(u)] = std::uint8_t(90 + (37 * i) % 160);
        }
    if (auto bb = mask_bbox(m)) inst.prompt.box = Eigen::Vector4d(bb->u0, bb->v0, bb->u1 - 1, bb->v1 - 1);
    if (!fg.empty())
      for (int k = 0; k < cfg.prompt_points; ++k)
        inst.prompt.points.push_back(fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng)]);
    inst.mask = std::move(m);
    out.scene.instances.push_back(std::move(inst));
    out.gt.push_back(std::move(g));
  }
  return out;
}

Mask corrupt_mask(const Mask& mask, MorphOp op, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw Error(ErrorCode::ParamOutOfRange, "kernel must be odd and positive");
  const int r = kernel / 2, w = mask.width(), h = mask.height();
  const MaskArray bin = (mask.values >= 0.5f).cast<float>();
  const bool erode = op == MorphOp::Erode;
  auto pass = [&](const MaskArray& in, bool horizontal) {
    MaskArray out(h, w);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        float acc = erode ? 1.0f : 0.0f;
        for (int k = -r; k <= r; ++k) {
          const int uu = horizontal ? u + k : u, vv = horizontal ? v : v + k;
          const float x = (uu < 0 || vv < 0 || uu >= w || vv >= h) ? 0.0f : in(vv, uu);
          acc = erode ? std::min(acc, x) : std::max(acc, x);
        }
        out(v, u) = acc;
      }
    return out;
  };
  return Mask(pass(pass(bin, true), false));
}

std::string gt_to_json(const std::vector<GtInstance>& gt) {
  json insts = json::array();
  for (const auto& g : gt) {
    insts.push_back({{"id", g.id},
                     {"center", {g.pose.x, g.pose.y, g.pose.z}},
                     {"box_center", vec_json(g.box.center)},
                     {"dims", vec_json(g.box.dims)},
                     {"yaw", g.pose.theta},
                     {"shape_code", vec_json(g.code)},
                     {"occlusion", g.occlusion},
                     {"lidar_points", g.lidar_points},
                     {"unoccluded_points", g.unoccluded_points}});
  }
  return json{{"instances", insts}}.dump(2) + "\n";
}

std::vector<GtInstance> gt_from_json(const std::string& text) {
  std::vector<GtInstance> out;
  try {
    const json j = json::parse(text);
    for (const auto& ji : j.at("instances")) {
      GtInstance g;
      g.id = ji.at("id").get<int>();
      const auto c = ji.at("center").get<std::vector<double>>();
      if (c.size() != 3) throw Error(ErrorCode::CorruptFile, "center must have 3 entries");
      g.pose = Pose(c[0], c[1], c[2], ji.at("yaw").get<double>());
      const auto bc = ji.value("box_center", c);
      const auto d = ji.at("dims").get<std::vector<double>>();
      if (bc.size() != 3 || d.size() != 3) throw Error(ErrorCode::CorruptFile, "box fields must have 3 entries");
      g.box.center = Eigen::Vector3d(bc[0], bc[1], bc[2]);
      g.box.dims = Eigen::Vector3d(d[0], d[1], d[2]);
      g.box.yaw = g.pose.theta;
      const auto s = ji.value("shape_code", std::vector<double>{});
      g.code = Eigen::Map<const Eigen::VectorXd>(s.data(), Eigen::Index(s.size()));
      g.occlusion = ji.value("occlusion", 0.0);
      g.lidar_points = ji.value("lidar_points", 0);
      g.unoccluded_points = ji.value("unoccluded_points", 0);
      out.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed ground truth: ") + e.what());
  }
  return out;
}

std::vector<GtInstance> load_gt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return gt_from_json(ss.str());
}

void write_synth(const SynthScene& s, const std::string& dir) {
  save_scene(s.scene, dir);
  write_png(s.image, (fs::path(dir) / s.scene.image).string());
  std::ofstream out(fs::path(dir) / "gt.json");
  out << gt_to_json(s.gt);
  if (!out) throw Error(ErrorCode::IoError, "cannot write gt.json in " + dir);
}

}  // namespace slf
