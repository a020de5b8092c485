#include <doctest.h>

#include <numbers>
#include <random>

#include "helpers.hpp"
#include "slf/geometry.hpp"

using namespace slf;
using slf::test::small_camera;
constexpr double kPi = std::numbers::pi;

TEST_SUITE("geometry") {
  TEST_CASE("project_point on the principal axis") {
    const auto p = project_point(small_camera(), {0, 0, 10});
    CHECK(p.u == doctest::Approx(50));
    CHECK(p.v == doctest::Approx(50));
    CHECK(p.depth == doctest::Approx(10));
  }

  TEST_CASE("project_point off axis follows u = fx X / Z + cx") {
    const auto p = project_point(small_camera(), {1, 0, 10});
    CHECK(p.u == doctest::Approx(100.0 * 1 / 10 + 50));
    CHECK(p.v == doctest::Approx(50));
    CHECK(p.depth == doctest::Approx(10));
  }

  TEST_CASE("project_point behind the camera throws NonPositiveDepth") {
    try {
      project_point(small_camera(), {0, 0, -1});
      FAIL("expected an exception");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonPositiveDepth);
    }
  }

  TEST_CASE("ray through the principal point is the forward axis") {
    const Ray r = ray_through_pixel(small_camera(), 50, 50);
    CHECK((r.direction - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
    CHECK(r.direction.norm() == doctest::Approx(1).epsilon(1e-12));
  }

  TEST_CASE("translated camera: ray origin is the camera center from a linear solve") {
    Eigen::Matrix3d K;
    K << 200, 0, 80, 0, 210, 60, 0, 0, 1;
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    T.topRightCorner<3, 1>() = Eigen::Vector3d(0.5, -2, 4);
    const Camera cam(K, T, 160, 120);
    // Oracle: the center c solves T * [c; 1] = [0; 0; 0; 1].
    Eigen::Vector4d rhs(0, 0, 0, 1);
    const Eigen::Vector4d c = T.fullPivLu().solve(rhs);
    const Ray r = ray_through_pixel(cam, 17.5, 99.25);
    CHECK((r.origin - c.head<3>()).norm() < 1e-9);
  }

  TEST_CASE("project and ray_through_pixel are mutually consistent") {
    const Camera cam = make_forward_camera(540, 540, 479.5, 269.5, 960, 540, {0, 0, 1.6}, 0.035);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> x(2, 60), y(-20, 20), z(-1, 4), t(1, 80);
    int checked = 0;
    while (checked < 1000) {
      const Eigen::Vector3d w(x(rng), y(rng), z(rng));
      if (cam.to_camera(w).z() <= 0.1) continue;
      const auto p = project_point(cam, w);
      const Ray r = ray_through_pixel(cam, p.u, p.v);
      CHECK(r.direction.norm() == doctest::Approx(1).epsilon(1e-9));
      const auto q = project_point(cam, r.at(t(rng)));
      CHECK(std::abs(q.u - p.u) < 1e-6);
      CHECK(std::abs(q.v - p.v) < 1e-6);
      ++checked;
    }
  }

  TEST_CASE("object_to_world with the identity pose") {
    const Eigen::Vector3d x(0.3, -1.2, 2.5);
    CHECK((object_to_world(Pose(0, 0, 0, 0), x) - x).norm() == 0);
  }

  TEST_CASE("object_to_world with a quarter turn") {
    const Eigen::Vector3d w = object_to_world(Pose(1, 2, 3, kPi / 2), Eigen::Vector3d(1, 0, 0));
    CHECK((w - Eigen::Vector3d(1, 3, 3)).norm() < 1e-12);
  }

  TEST_CASE("world_to_object inverts object_to_world") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int n = 0; n < 200; ++n) {
      const Pose p(u(rng), u(rng), u(rng), u(rng));
      const Eigen::Vector3d x(u(rng), u(rng), u(rng));
      CHECK((world_to_object(p, object_to_world(p, x)) - x).norm() < 1e-12);
    }
  }

  TEST_CASE("yaw composition about the object center") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-kPi, kPi), t(-5, 5);
    for (int n = 0; n < 200; ++n) {
      const double t1 = u(rng), t2 = u(rng);
      const Pose p(t(rng), t(rng), t(rng), t1);
      const Eigen::Vector3d x(t(rng), t(rng), t(rng));
      const Eigen::Vector3d w = object_to_world(p, x);
      // Rotate the world point by t2 about the vertical axis through the center.
      const Eigen::Vector3d rotated =
          p.center() + Eigen::AngleAxisd(t2, Eigen::Vector3d::UnitZ()) * (w - p.center());
      const Pose q(p.x, p.y, p.z, t1 + t2);
      CHECK((object_to_world(q, x) - rotated).norm() < 1e-9);
      CHECK(q.theta > -kPi);
      CHECK(q.theta <= kPi);
    }
  }

  TEST_CASE("theta is wrapped to (-pi, pi]") {
    CHECK(Pose(0, 0, 0, -kPi).theta == doctest::Approx(kPi));
    CHECK(Pose(0, 0, 0, kPi).theta == doctest::Approx(kPi));
    CHECK(Pose(0, 0, 0, 3 * kPi / 2).theta == doctest::Approx(-kPi / 2));
    CHECK(Pose(0, 0, 0, -7.0).theta == doctest::Approx(-7.0 + 2 * kPi));
  }

  TEST_CASE("non-finite pose components are rejected") {
    CHECK_THROWS_AS(Pose(std::nan(""), 0, 0, 0), Error);
    CHECK_THROWS_AS(Pose(0, 0, 0, INFINITY), Error);
  }

  TEST_CASE("camera validation") {
    Eigen::Matrix3d K;
    K << -1, 0, 0, 0, 1, 0, 0, 0, 1;
    CHECK_THROWS_AS(Camera(K, Eigen::Matrix4d::Identity(), 10, 10), Error);
    K(0, 0) = 1;
    CHECK_THROWS_AS(Camera(K, Eigen::Matrix4d::Identity(), 0, 10), Error);
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T(0, 0) = 1.01;
    CHECK_THROWS_AS(Camera(K, T, 10, 10), Error);
  }
}
