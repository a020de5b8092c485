#include "slf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <json.hpp>

#include "slf/mask_io.hpp"

namespace slf {

namespace fs = std::filesystem;
using nlohmann::json;

const Instance* Scene::find(int id) const {
  for (const auto& inst : instances)
    if (inst.id == id) return &inst;
  return nullptr;
}

namespace {

json prompt_to_json(const Prompt& p) {
  json j = json::object();
  if (!p.points.empty()) {
    json pts = json::array();
    for (const auto& q : p.points) pts.push_back({q.x(), q.y()});
    j["points"] = pts;
  }
  if (p.box) j["box"] = {(*p.box)[0], (*p.box)[1], (*p.box)[2], (*p.box)[3]};
  if (!p.polygon.empty()) {
    json pts = json::array();
    for (const auto& q : p.polygon) pts.push_back({q.x(), q.y()});
    j["polygon"] = pts;
  }
  return j;
}

Prompt prompt_from_json(const json& j) {
  Prompt p;
  if (j.contains("points"))
    for (const auto& q : j.at("points")) p.points.emplace_back(q.at(0).get<double>(), q.at(1).get<double>());
  if (j.contains("box")) {
    const auto& b = j.at("box");
    p.box = Eigen::Vector4d(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                            b.at(3).get<double>());
  }
  if (j.contains("polygon"))
    for (const auto& q : j.at("polygon")) p.polygon.emplace_back(q.at(0).get<double>(), q.at(1).get<double>());
  return p;
}

Camera camera_from_json(const json& j) {
  const auto K = j.at("K").get<std::vector<double>>();
  const auto T = j.at("T_wc").get<std::vector<double>>();
  if (K.size() != 9 || T.size() != 16) throw Error(ErrorCode::BadCalibration, "K needs 9 and T_wc 16 values");
  Eigen::Matrix3d Km;
  Eigen::Matrix4d Tm;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) Km(r, c) = K[r * 3 + c];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) Tm(r, c) = T[r * 4 + c];
  return Camera(Km, Tm, j.at("width").get<int>(), j.at("height").get<int>());
}

json camera_to_json(const Camera& cam) {
  std::vector<double> K, T;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) K.push_back(cam.intrinsics()(r, c));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) T.push_back(cam.world_to_camera()(r, c));
  return {{"K", K}, {"T_wc", T}, {"width", cam.width()}, {"height", cam.height()}};
}

}  // namespace

Scene load_scene(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "scene.json");
  if (!in) throw Error(ErrorCode::MissingFile, (root / "scene.json").string());
  json j;
  try {
    in >> j;
    Scene scene{camera_from_json(j.at("camera")), j.value("image", std::string("img.png")), {}, {}};

    const std::string points_name = j.value("points", std::string("points.f32le"));
    std::ifstream pin(root / points_name, std::ios::binary | std::ios::ate);
    if (!pin) throw Error(ErrorCode::MissingFile, (root / points_name).string());
    const auto bytes = std::size_t(pin.tellg());
    if (bytes % (3 * sizeof(float)) != 0) throw Error(ErrorCode::CorruptFile, "point file size is not N x 3 f32");
    scene.points.resize(Eigen::Index(bytes / (3 * sizeof(float))), 3);
    pin.seekg(0);
    pin.read(reinterpret_cast<char*>(scene.points.data()), std::streamsize(bytes));

    std::set<int> ids;
    for (const auto& ji : j.value("instances", json::array())) {
      Instance inst;
      inst.id = ji.at("id").get<int>();
      if (!ids.insert(inst.id).second) throw Error(ErrorCode::CorruptFile, "duplicate instance id");
      if (ji.contains("prompt")) inst.prompt = prompt_from_json(ji.at("prompt"));
      if (ji.contains("mask")) {
        const auto& jm = ji.at("mask");
        if (jm.is_string()) {
          const fs::path mp = root / jm.get<std::string>();
          if (!fs::exists(mp)) throw Error(ErrorCode::MissingFile, mp.string());
          inst.mask = load_mask_png(mp.string());
        } else {
          inst.mask = decode_rle(rle_from_json(jm.at("rle")));
        }
        if (inst.mask->width() != scene.camera.width() || inst.mask->height() != scene.camera.height())
          throw Error(ErrorCode::MaskSizeMismatch, "mask of instance " + std::to_string(inst.id));
      }
      scene.instances.push_back(std::move(inst));
    }
    return scene;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("scene.json: ") + e.what());
  }
}

void save_scene(const Scene& scene, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  json j;
  j["camera"] = camera_to_json(scene.camera);
  j["image"] = scene.image;
  j["points"] = "points.f32le";
  json insts = json::array();
  for (const auto& inst : scene.instances) {
    json ji{{"id", inst.id}, {"prompt", prompt_to_json(inst.prompt)}};
    if (inst.mask) {
      const std::string name = "m_" + std::to_string(inst.id) + ".png";
      save_mask_png(*inst.mask, (root / name).string());
      ji["mask"] = name;
    }
    insts.push_back(ji);
  }
  j["instances"] = insts;
  std::ofstream out(root / "scene.json");
  out << j.dump(2) << "\n";
  std::ofstream pout(root / "points.f32le", std::ios::binary);
  pout.write(reinterpret_cast<const char*>(scene.points.data()),
             std::streamsize(scene.points.size() * sizeof(float)));
  if (!out || !pout) throw Error(ErrorCode::IoError, "cannot write scene to " + dir);
}

GroundPlane fit_ground_ransac(const std::vector<Eigen::Vector3d>& input, const RansacOptions& opts) {
  std::vector<Eigen::Vector3d> pts(input);
  std::sort(pts.begin(), pts.end(), [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  const int n = int(pts.size());
  if (n < 3) throw Error(ErrorCode::DegenerateGround, "fewer than 3 candidate points");
  const double max_slope = std::tan(30.0 * M_PI / 180.0);

  auto count_inliers = [&](const Eigen::Vector3d& abc) {
    int c = 0;
    for (const auto& p : pts) c += std::abs(p.z() - (abc[0] * p.x() + abc[1] * p.y() + abc[2])) <= opts.threshold;
    return c;
  };

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  Eigen::Vector3d best = Eigen::Vector3d::Zero();
  int best_count = -1;
  for (int it = 0; it < opts.iterations; ++it) {
    const int i = pick(rng);
    int j = pick(rng), k = pick(rng);
    if (i == j || j == k || i == k) continue;
    Eigen::Matrix3d A;
    A << pts[i].x(), pts[i].y(), 1, pts[j].x(), pts[j].y(), 1, pts[k].x(), pts[k].y(), 1;
    // Collinear in x-y (or near it): no unique plane.
    const double area = std::abs((pts[j] - pts[i]).head<2>().homogeneous().cross((pts[k] - pts[i]).head<2>().homogeneous()).z());
    if (area < 1e-9) continue;
    const Eigen::Vector3d abc = A.partialPivLu().solve(Eigen::Vector3d(pts[i].z(), pts[j].z(), pts[k].z()));
    if (std::hypot(abc[0], abc[1]) >= max_slope) continue;
    const int c = count_inliers(abc);
    if (c > best_count) {
      best_count = c;
      best = abc;
    }
  }
  if (best_count < 3 || best_count * 10 < n)
    throw Error(ErrorCode::DegenerateGround, "no plane hypothesis with >= 10% inliers");

  // Least-squares refinement on the inliers, repeated once with the refined plane.
  for (int round = 0; round < 2; ++round) {
    Eigen::MatrixXd A(best_count, 3);
    Eigen::VectorXd z(best_count);
    int r = 0;
    for (const auto& p : pts)
      if (std::abs(p.z() - (best[0] * p.x() + best[1] * p.y() + best[2])) <= opts.threshold && r < best_count) {
        A.row(r) << p.x(), p.y(), 1;
        z[r++] = p.z();
      }
    A.conservativeResize(r, 3);
    z.conservativeResize(r);
    const Eigen::Vector3d refined = A.colPivHouseholderQr().solve(z);
    if (!refined.allFinite()) break;
    best = refined;
    best_count = count_inliers(best);
  }
  GroundPlane g;
  g.a = best[0];
  g.b = best[1];
  g.c = best[2];
  g.inliers = best_count;
  g.threshold = opts.threshold;
  return g;
}

std::vector<Eigen::Vector3d> ground_candidates(const Scene& scene) {
  const double max_z = scene.camera.center().z() - 0.5;
  std::vector<Eigen::Vector3d> out;
  for (Eigen::Index i = 0; i < scene.points.rows(); ++i) {
    const Eigen::Vector3d p = scene.points.row(i).cast<double>().transpose();
    if (p.z() < max_z) out.push_back(p);
  }
  return out;
}

FrustumCloud frustum_points(const Scene& scene, const Instance& instance, const GroundPlane* ground,
                            const FrustumOptions& opts) {
  if (!instance.mask) throw Error(ErrorCode::BadPrompt, "instance " + std::to_string(instance.id) + " has no mask");
  const Mask& mask = *instance.mask;
  const Camera& cam = scene.camera;
  FrustumCloud out;
  out.id = instance.id;
  std::vector<Eigen::Vector3d> kept;
  for (Eigen::Index i = 0; i < scene.points.rows(); ++i) {
    const Eigen::Vector3d p = scene.points.row(i).cast<double>().transpose();
    const Eigen::Vector3d xc = cam.to_camera(p);
    if (!(xc.z() > 0)) continue;
    const long u = std::lround(cam.fx() * xc.x() / xc.z() + cam.cx());
    const long v = std::lround(cam.fy() * xc.y() / xc.z() + cam.cy());
    if (u < 0 || v < 0 || u >= mask.width() || v >= mask.height()) continue;
    if (mask(int(u), int(v)) < 0.5f) continue;
    if (ground && std::abs(p.z() - ground->height(p.x(), p.y())) <= opts.ground_eps) continue;
    kept.push_back(p);
    out.depths.push_back(xc.z());
  }
  out.points.resize(3, Eigen::Index(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) out.points.col(Eigen::Index(i)) = kept[i];
  out.eligible = out.size() >= opts.n_min;
  return out;
}

}  // namespace slf
