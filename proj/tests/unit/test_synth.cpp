#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "slf/energy.hpp"
#include "slf/error.hpp"
#include "slf/synth.hpp"

using namespace slf;
using slf::test::field_grid;
using slf::test::world_prior;

namespace {

std::string bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Brute-force square-kernel morphology with out-of-image pixels counting as 0.
Mask morph_oracle(const Mask& m, MorphOp op, int k) {
  Mask out(m.width(), m.height());
  const int r = k / 2;
  for (int v = 0; v < m.height(); ++v)
    for (int u = 0; u < m.width(); ++u) {
      bool any = false, all = true;
      for (int dv = -r; dv <= r; ++dv)
        for (int du = -r; du <= r; ++du) {
          const int uu = u + du, vv = v + dv;
          const bool on = uu >= 0 && vv >= 0 && uu < m.width() && vv < m.height() && m(uu, vv) >= 0.5f;
          any |= on;
          all &= on;
        }
      out(u, v) = (op == MorphOp::Dilate ? any : all) ? 1.0f : 0.0f;
    }
  return out;
}

SynthConfig two_cars() {
  SynthConfig cfg;
  cfg.seed = 77;
  ShapeCode a = ShapeCode::Zero(world_prior().dim()), b = a;
  b[0] = world_prior().sigma[0];
  cfg.fixed = {{a, 10.0, 0.5, 0.3}, {b, 18.0, -0.8, 2.0}};
  cfg.ground = GroundPlane{0.01, 0.005, -0.05};
  return cfg;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("a fixed single placement lands exactly at its pose") {
    SynthConfig cfg;
    cfg.seed = 3;
    const ShapeCode s = ShapeCode::Zero(world_prior().dim());
    cfg.fixed = {{s, 12.5, -1.25, 0.75}};
    const SynthScene syn = gen_scene(cfg, world_prior());
    REQUIRE(syn.gt.size() == 1);
    const double z = resting_z(world_prior(), s, 12.5, -1.25, cfg.ground);
    CHECK(syn.gt[0].pose.center() == Eigen::Vector3d(12.5, -1.25, z));
    CHECK(syn.gt[0].pose.theta == 0.75);
    const auto back = gt_from_json(gt_to_json(syn.gt));
    CHECK(back[0].pose.center() == syn.gt[0].pose.center());
    CHECK(back[0].box.center == syn.gt[0].box.center);
    CHECK(back[0].code == syn.gt[0].code);
  }

  TEST_CASE("box bottoms rest on the ground plane") {
    SynthConfig cfg;
    cfg.seed = 8;
    cfg.min_instances = cfg.max_instances = 5;
    cfg.ground = GroundPlane{0.02, -0.01, 0.1};
    const SynthScene syn = gen_scene(cfg, world_prior());
    for (const auto& g : syn.gt) {
      const double h = shape_height(world_prior().meta, decode(world_prior(), g.code).values);
      CHECK(std::abs(h - g.box.dims.z()) < 1e-9);
      CHECK(std::abs(g.pose.z - h / 2 - cfg.ground.height(g.pose.x, g.pose.y)) < 1e-9);
    }
  }

  TEST_CASE("GT masks match a brute-force nearest-hit composite") {
    const SynthScene syn = gen_scene(two_cars(), world_prior());
    REQUIRE(syn.gt.size() == 2);
    const Camera& cam = syn.scene.camera;
    std::vector<Eigen::ArrayXXd> depth;
    for (const auto& g : syn.gt) depth.push_back(hard_depth(decode(world_prior(), g.code), g.pose, cam));
    int overlap = 0;
    for (int v = 0; v < cam.height(); ++v)
      for (int u = 0; u < cam.width(); ++u) {
        int nearest = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 2; ++i)
          if (depth[std::size_t(i)](v, u) < best) best = depth[std::size_t(i)](v, u), nearest = i;
        overlap += std::isfinite(depth[0](v, u)) && std::isfinite(depth[1](v, u));
        for (int i = 0; i < 2; ++i) CHECK(((*syn.scene.instances[std::size_t(i)].mask)(u, v) >= 0.5f) == (nearest == i));
      }
    // The placement is chosen so that the near car hides part of the far one.
    CHECK(overlap > 100);
    CHECK(syn.gt[0].occlusion == 0);
    CHECK(syn.gt[1].occlusion > 0);
  }

  TEST_CASE("ground-only LiDAR returns lie on the plane") {
    const GroundPlane g{0.03, -0.02, 0.2};
    LidarModel m;
    const auto r = simulate_lidar({}, {}, g, Eigen::Vector3d(0, 0, 1.8), 1.5, m, 5);
    REQUIRE(r.points.rows() > 1000);
    for (Eigen::Index i = 0; i < r.points.rows(); ++i) {
      const Eigen::Vector3d p = r.points.row(i).cast<double>().transpose();
      CHECK(std::abs(p.z() - g.height(p.x(), p.y())) <= 3 * m.range_noise);
      CHECK(r.owner[std::size_t(i)] == -1);
    }
  }

  TEST_CASE("sphere returns sit at the analytic ray-sphere range") {
    const double r = 1.0;
    const GridMeta meta = GridMeta::centered({40, 40, 40}, 0.1);
    const SdfGrid sphere = field_grid(meta, [r](const Eigen::Vector3d& x) { return r - x.norm(); });
    const Eigen::Vector3d origin(0, 0, 1.8), c(12, 0.5, 1.0);
    LidarModel m;
    const auto ret = simulate_lidar({sphere}, {Pose(c.x(), c.y(), c.z(), 0)}, GroundPlane{0, 0, 0}, origin, 1.0, m, 9);
    int hits = 0;
    for (Eigen::Index i = 0; i < ret.points.rows(); ++i) {
      if (ret.owner[std::size_t(i)] != 0) continue;
      ++hits;
      const Eigen::Vector3d p = ret.points.row(i).cast<double>().transpose();
      const Eigen::Vector3d d = (p - origin).normalized();
      const Eigen::Vector3d oc = c - origin;
      const double b = oc.dot(d), disc = b * b - (oc.squaredNorm() - r * r);
      if (disc < 0.05) continue;  // grazing rays: the range is ill-conditioned
      const double t = b - std::sqrt(disc);
      CHECK(std::abs((p - origin).norm() - t) <= 3 * m.range_noise + meta.voxel_size);
    }
    CHECK(hits > 20);
  }

  TEST_CASE("fewer beams give proportionally fewer points") {
    SynthConfig cfg = two_cars();
    std::vector<long> counts;
    for (int beams : {64, 32, 16, 8}) {
      cfg.lidar.beams = beams;
      counts.push_back(long(gen_scene(cfg, world_prior()).scene.points.rows()));
    }
    for (std::size_t k = 1; k < counts.size(); ++k) CHECK(counts[k] <= counts[k - 1]);
    CHECK(std::abs(double(counts[1]) / double(counts[0]) - 0.5) <= 0.05);
  }

  TEST_CASE("beam counts other than 64, 32, 16 and 8 are rejected") {
    LidarModel m;
    m.beams = 4;
    CHECK_THROWS_AS(m.validate(), Error);
    m.beams = 48;
    CHECK_THROWS_AS(m.validate(), Error);
  }

  TEST_CASE("morphology matches the brute-force oracle") {
    std::mt19937_64 rng(2);
    std::bernoulli_distribution coin(0.35);
    Mask m(41, 29);
    for (int v = 0; v < 29; ++v)
      for (int u = 0; u < 41; ++u) m(u, v) = coin(rng) ? 1.0f : 0.0f;
    for (int k : {5, 9})
      for (MorphOp op : {MorphOp::Erode, MorphOp::Dilate})
        CHECK((corrupt_mask(m, op, k).values == morph_oracle(m, op, k).values).all());
  }

  TEST_CASE("morphology examples") {
    const Mask full(30, 20, 1.0f);
    const Mask e = corrupt_mask(full, MorphOp::Erode, 5);
    for (int v = 0; v < 20; ++v)
      for (int u = 0; u < 30; ++u) {
        const bool border = u < 2 || v < 2 || u >= 28 || v >= 18;
        CHECK(e(u, v) == (border ? 0.0f : 1.0f));
      }
    Mask blob(30, 20);
    for (int v = 8; v < 11; ++v)
      for (int u = 8; u < 11; ++u) blob(u, v) = 1;
    CHECK(corrupt_mask(blob, MorphOp::Erode, 9).values.maxCoeff() == 0);
    std::mt19937_64 rng(6);
    std::bernoulli_distribution coin(0.2);
    Mask m(30, 20);
    for (int v = 0; v < 20; ++v)
      for (int u = 0; u < 30; ++u) m(u, v) = coin(rng) ? 1.0f : 0.0f;
    // Outside pixels count as 0, so closing only contains the original at
    // least half a kernel away from the image border.
    for (int k : {5, 9}) {
      const Mask closed = corrupt_mask(corrupt_mask(m, MorphOp::Dilate, k), MorphOp::Erode, k);
      const int r = k / 2;
      for (int v = r; v < 20 - r; ++v)
        for (int u = r; u < 30 - r; ++u) CHECK((closed(u, v) >= 0.5f || m(u, v) < 0.5f));
    }
  }

  TEST_CASE("identical configs write byte-identical scene directories") {
    namespace fs = std::filesystem;
    const std::string a = test::temp_dir("synth_det_a"), b = test::temp_dir("synth_det_b");
    SynthConfig cfg;
    cfg.seed = 2024;
    write_synth(gen_scene(cfg, world_prior()), a);
    write_synth(gen_scene(cfg, world_prior()), b);
    int files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      ++files;
      CHECK(bytes_of(e.path()) == bytes_of(fs::path(b) / e.path().filename()));
    }
    CHECK(files >= 5);  // scene.json, points, image, gt.json and masks
    CHECK(fs::exists(fs::path(a) / "gt.json"));
    CHECK(fs::exists(fs::path(a) / "img.png"));
  }

  TEST_CASE("frustums recover the simulator's points on unoccluded instances") {
    // Points in the 5 cm ground band are dropped by design; the cars rest on
    // the ground, so the recovery ratio is taken over the points above it.
    const FrustumOptions opts;
    int tested = 0;
    for (std::uint64_t seed = 90; seed < 94; ++seed) {
      SynthConfig cfg;
      cfg.seed = seed;
      const SynthScene syn = gen_scene(cfg, world_prior());
      for (std::size_t i = 0; i < syn.gt.size(); ++i) {
        if (syn.gt[i].occlusion > 0 || syn.gt[i].lidar_points < 20) continue;
        const FrustumCloud f = frustum_points(syn.scene, syn.scene.instances[i], &syn.ground, opts);
        int attributed = 0, recovered = 0;
        for (Eigen::Index k = 0; k < syn.scene.points.rows(); ++k) {
          if (syn.point_owner[std::size_t(k)] != int(i)) continue;
          const Eigen::Vector3d p = syn.scene.points.row(k).cast<double>().transpose();
          if (std::abs(p.z() - syn.ground.height(p.x(), p.y())) <= opts.ground_eps) continue;
          ++attributed;
          for (int c = 0; c < f.size(); ++c)
            if (f.points.col(c) == p) {
              ++recovered;
              break;
            }
        }
        ++tested;
        CHECK(double(recovered) >= 0.95 * attributed);
      }
    }
    CHECK(tested >= 3);
  }

  TEST_CASE("impossible placements are PlacementFailure") {
    SynthConfig cfg;
    cfg.min_instances = cfg.max_instances = 30;
    cfg.min_range = 6;
    cfg.max_range = 8;
    try {
      gen_scene(cfg, world_prior());
      FAIL("expected an exception");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::PlacementFailure);
    }
  }
}
