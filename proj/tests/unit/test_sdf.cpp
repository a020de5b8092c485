#include <doctest.h>

#include <random>
#include <sstream>

#include "helpers.hpp"
#include "slf/sdf.hpp"

using namespace slf;
using slf::test::field_grid;
using slf::test::sphere_grid;

namespace {

// Expected sign of a box centered at the origin with the given half extents.
bool inside_box(const Eigen::Vector3d& x, const Eigen::Vector3d& half) {
  return (x.cwiseAbs() - half).maxCoeff() < 0;
}

double box_margin(const Eigen::Vector3d& x, const Eigen::Vector3d& half) {
  return (x.cwiseAbs() - half).cwiseAbs().minCoeff();
}

}  // namespace

TEST_SUITE("sdf") {
  TEST_CASE("constant field samples to the constant") {
    const GridMeta meta = GridMeta::centered({8, 6, 5}, 0.2);
    const SdfGrid g = field_grid(meta, [](const Eigen::Vector3d&) { return 0.37; });
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    for (int n = 0; n < 100; ++n) CHECK(sample(g, {u(rng), u(rng), u(rng)}) == doctest::Approx(0.37));
  }

  TEST_CASE("sphere field matches r - |x| within one voxel") {
    const double r = 1.0, vs = 0.05;
    const SdfGrid g = sphere_grid(r, GridMeta::centered({64, 64, 64}, vs));
    CHECK(std::abs(sample(g, Eigen::Vector3d::Zero()) - r) <= vs);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int n = 0; n < 2000; ++n) {
      const Eigen::Vector3d x(u(rng), u(rng), u(rng));
      CHECK(std::abs(sample(g, x) - (r - x.norm())) <= vs);
    }
  }

  TEST_CASE("outside the cube samples to the exterior sentinel") {
    const GridMeta meta = GridMeta::centered({64, 32, 32}, 0.1);
    const SdfGrid g = sphere_grid(1.0, meta);
    const double cube_length = 6.4;
    CHECK(sample(g, {cube_length, 0, 0}) == kExteriorSentinel);
    CHECK(sample(g, {0, 0, -cube_length}) == kExteriorSentinel);
  }

  TEST_CASE("flat index is i + l (j + w k)") {
    const GridMeta meta = GridMeta::centered({5, 4, 3}, 0.1);
    CHECK(meta.index(2, 3, 1) == 2 + 5 * (3 + 4 * 1));
    const SdfGrid g = field_grid(meta, [&](const Eigen::Vector3d& x) { return x.x() + 10 * x.y() + 100 * x.z(); });
    const Eigen::Vector3d c = meta.voxel_center(2, 3, 1);
    CHECK(g.values[2 + 5 * (3 + 4 * 1)] == doctest::Approx(c.x() + 10 * c.y() + 100 * c.z()));
  }

  TEST_CASE("gradient of a linear field is its slope") {
    const Eigen::Vector3d a(0.3, -1.1, 0.7);
    const SdfGrid g = field_grid(GridMeta::centered({16, 12, 10}, 0.1),
                                 [&](const Eigen::Vector3d& x) { return a.dot(x) + 0.2; });
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.35, 0.35);
    for (int n = 0; n < 200; ++n) CHECK((spatial_gradient(g, {u(rng), u(rng), u(rng)}) - a).norm() < 1e-9);
  }

  TEST_CASE("sphere gradient agrees with finite differences of sample") {
    const double r = 1.0;
    const SdfGrid g = sphere_grid(r, GridMeta::centered({64, 64, 64}, 0.05));
    const Eigen::Vector3d x(r / 2 + 0.013, 0.007, -0.011);  // inside a cell, away from faces
    const double h = 1e-6;
    Eigen::Vector3d fd;
    for (int a = 0; a < 3; ++a) {
      Eigen::Vector3d e = Eigen::Vector3d::Zero();
      e[a] = h;
      fd[a] = (sample(g, x + e) - sample(g, x - e)) / (2 * h);
    }
    const Eigen::Vector3d grad = spatial_gradient(g, x);
    CHECK((grad - fd).norm() < 1e-6);
    CHECK((grad - Eigen::Vector3d(-1, 0, 0)).norm() < 0.1);
  }

  TEST_CASE("constant field has zero gradient") {
    const SdfGrid g = field_grid(GridMeta::centered({8, 8, 8}, 0.1), [](const Eigen::Vector3d&) { return -2.0; });
    CHECK(spatial_gradient(g, {0.01, 0.02, -0.03}).norm() == 0);
  }

  TEST_CASE("gradient outside its support throws OutOfSupport") {
    const SdfGrid g = sphere_grid(0.2, GridMeta::centered({8, 8, 8}, 0.1));
    try {
      spatial_gradient(g, {0.34, 0, 0});
      FAIL("expected an exception");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::OutOfSupport);
    }
  }

  TEST_CASE("sample is Lipschitz with the largest neighbour difference") {
    const SdfGrid g = make_car_sdf(CarParams{}, {64, 32, 32}, 0.1);
    double maxdiff = 0;
    const auto& m = g.meta;
    for (int k = 0; k < m.dims.z(); ++k)
      for (int j = 0; j < m.dims.y(); ++j)
        for (int i = 0; i < m.dims.x(); ++i) {
          if (i + 1 < m.dims.x()) maxdiff = std::max(maxdiff, std::abs(g.at(i + 1, j, k) - g.at(i, j, k)));
          if (j + 1 < m.dims.y()) maxdiff = std::max(maxdiff, std::abs(g.at(i, j + 1, k) - g.at(i, j, k)));
          if (k + 1 < m.dims.z()) maxdiff = std::max(maxdiff, std::abs(g.at(i, j, k + 1) - g.at(i, j, k)));
        }
    const double L = maxdiff / m.voxel_size;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ux(-3.0, 3.0), uy(-1.4, 1.4), uz(-1.4, 1.4), ud(-1, 1);
    for (int n = 0; n < 2000; ++n) {
      const Eigen::Vector3d x(ux(rng), uy(rng), uz(rng));
      const Eigen::Vector3d d = Eigen::Vector3d(ud(rng), ud(rng), ud(rng)).normalized() * 0.03;
      // Along a path of length |d| the trilinear slope is bounded by sqrt(3) L.
      CHECK(std::abs(sample(g, x + d) - sample(g, x)) <= std::sqrt(3.0) * L * d.norm() + 1e-12);
    }
  }

  TEST_CASE("degenerate car is a box: signs match box membership") {
    CarParams p;
    p.cabin_fraction = 0;
    p.cabin_height = 0;
    p.hood_drop = 0;
    p.rounding = 0;
    const SdfGrid g = make_car_sdf(p, {64, 32, 32}, 0.1);
    Eigen::Vector3d lo, hi;
    REQUIRE(interior_bounds(g, lo, hi));
    // The box is centered in x and y; its z placement comes from the grid.
    const Eigen::Vector3d center(0, 0, (lo.z() + hi.z()) / 2);
    const Eigen::Vector3d half(p.length / 2, p.width / 2, p.body_height / 2);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ux(-3.1, 3.1), uy(-1.5, 1.5), uz(-1.5, 1.5);
    int tested = 0;
    for (int n = 0; n < 10000; ++n) {
      const Eigen::Vector3d x(ux(rng), uy(rng), uz(rng));
      if (box_margin(x - center, half) < g.meta.voxel_size) continue;  // the interpolant may cross within a voxel
      CHECK((sample(g, x) > 0) == inside_box(x - center, half));
      ++tested;
    }
    CHECK(tested > 5000);
  }

  TEST_CASE("every procedural car has an interior center and the declared height") {
    for (const auto& p : sample_car_params(20, 11)) {
      const SdfGrid g = make_car_sdf(p, {64, 32, 32}, 0.1);
      CHECK(sample(g, Eigen::Vector3d::Zero()) > 0);
      Eigen::Vector3d lo, hi;
      REQUIRE(interior_bounds(g, lo, hi));
      const double extent = hi.z() - lo.z() + g.meta.voxel_size;
      CHECK(std::abs(extent - p.total_height()) <= g.meta.voxel_size);
    }
  }

  TEST_CASE("car params outside their ranges are rejected") {
    CarParams p;
    p.length = 6.0;
    CHECK_THROWS_AS(p.validate(), Error);
    CHECK_NOTHROW(CarParams{}.validate());
  }

  TEST_CASE("procedural grids satisfy the eikonal sanity band") {
    for (const auto& p : sample_car_params(3, 12)) {
      const SdfGrid g = make_car_sdf(p, {64, 32, 32}, 0.1);
      std::mt19937_64 rng(6);
      std::uniform_real_distribution<double> ux(-3.0, 3.0), uy(-1.4, 1.4), uz(-1.4, 1.4);
      int near = 0, ok = 0;
      while (near < 400) {
        const Eigen::Vector3d x(ux(rng), uy(rng), uz(rng));
        if (std::abs(sample(g, x)) >= 2 * g.meta.voxel_size) continue;
        ++near;
        const double n = spatial_gradient(g, x).norm();
        if (n >= 0.5 && n <= 1.5) ++ok;
      }
      CHECK(ok >= 0.95 * near);
    }
  }

  TEST_CASE("icosphere voxelizes to r - |x|") {
    const double r = 1.0, vs = 0.1;
    const SdfGrid g = mesh_to_sdf(make_icosphere(r, 2), {32, 32, 32}, vs);
    for (int k = 0; k < 32; ++k)
      for (int j = 0; j < 32; ++j)
        for (int i = 0; i < 32; ++i) {
          const Eigen::Vector3d c = g.meta.voxel_center(i, j, k);
          CHECK(std::abs(g.at(i, j, k) - (r - c.norm())) <= 1.5 * vs);
        }
  }

  TEST_CASE("box mesh signs match membership at voxel centers") {
    const Eigen::Vector3d half(1.03, 0.57, 0.41);  // faces fall between voxel centers
    const SdfGrid g = mesh_to_sdf(make_box_mesh(half), {32, 16, 12}, 0.1);
    for (int k = 0; k < 12; ++k)
      for (int j = 0; j < 16; ++j)
        for (int i = 0; i < 32; ++i) {
          const Eigen::Vector3d c = g.meta.voxel_center(i, j, k);
          CHECK((g.at(i, j, k) > 0) == inside_box(c, half));
        }
  }

  TEST_CASE("open mesh throws NonWatertightMesh") {
    TriangleMesh m = make_box_mesh({0.5, 0.5, 0.5});
    m.triangles.pop_back();
    try {
      mesh_to_sdf(m, {16, 16, 16}, 0.1);
      FAIL("expected an exception");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonWatertightMesh);
    }
  }

  TEST_CASE("grid blob round-trips and starts with its header") {
    const SdfGrid g = make_car_sdf(CarParams{}, {40, 20, 20}, 0.2);
    std::stringstream ss;
    write_grid(ss, g);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "SLFG");
    CHECK(bytes.size() == 4 + 2 + 12 + 4 + 12 + 4 * std::size_t(g.meta.size()));
    std::stringstream in(bytes);
    const SdfGrid back = read_grid(in);
    CHECK(back.meta.dims == g.meta.dims);
    // Values are stored as f32.
    CHECK((back.values - g.values.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0);
    std::stringstream again;
    write_grid(again, back);
    CHECK(again.str() == bytes);
  }

  TEST_CASE("corrupt grid blobs are rejected") {
    std::stringstream bad("SLFX\x01\x00");
    CHECK_THROWS_AS(read_grid(bad), Error);
    const SdfGrid g = make_car_sdf(CarParams{}, {40, 20, 20}, 0.2);
    std::stringstream ss;
    write_grid(ss, g);
    std::stringstream cut(ss.str().substr(0, 40));
    CHECK_THROWS_AS(read_grid(cut), Error);
  }
}
