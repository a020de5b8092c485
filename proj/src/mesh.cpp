#include <array>
#include <cmath>
#include <map>
#include <utility>

#include <Eigen/Geometry>

#include "slf/sdf.hpp"

namespace slf {

namespace {

// Closest point on triangle (a, b, c) to p, by Voronoi-region classification.
Eigen::Vector3d closest_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                    const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

bool ray_hits_triangle(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& a,
                       const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d e1 = b - a, e2 = c - a;
  const Eigen::Vector3d h = d.cross(e2);
  const double det = e1.dot(h);
  if (std::abs(det) < 1e-14) return false;
  const double inv = 1.0 / det;
  const Eigen::Vector3d s = o - a;
  const double u = inv * s.dot(h);
  if (u < 0 || u > 1) return false;
  const Eigen::Vector3d q = s.cross(e1);
  const double v = inv * d.dot(q);
  if (v < 0 || u + v > 1) return false;
  return inv * e2.dot(q) > 0;
}

}  // namespace

TriangleMesh make_icosphere(double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& v : m.vertices) v.normalize();
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const int idx = int(m.vertices.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Eigen::Vector3i> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& tri : m.triangles) {
      const int a = mid(tri[0], tri[1]), b = mid(tri[1], tri[2]), c = mid(tri[2], tri[0]);
      next.emplace_back(tri[0], a, c);
      next.emplace_back(tri[1], b, a);
      next.emplace_back(tri[2], c, b);
      next.emplace_back(a, b, c);
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v *= radius;
  return m;
}

TriangleMesh make_box_mesh(const Eigen::Vector3d& h) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back((i & 1 ? 1 : -1) * h.x(), (i & 2 ? 1 : -1) * h.y(), (i & 4 ? 1 : -1) * h.z());
  m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                 {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

SdfGrid mesh_to_sdf(const TriangleMesh& mesh, const Eigen::Vector3i& dims, double voxel_size) {
  const GridMeta meta = GridMeta::centered(dims, voxel_size);
  for (const auto& tri : mesh.triangles) {
    for (int a = 0; a < 3; ++a)
      if (tri[a] < 0 || tri[a] >= int(mesh.vertices.size()))
        throw Error(ErrorCode::ParamOutOfRange, "triangle references a missing vertex");
    const Eigen::Vector3d n =
        (mesh.vertices[tri[1]] - mesh.vertices[tri[0]]).cross(mesh.vertices[tri[2]] - mesh.vertices[tri[0]]);
    if (n.norm() < 1e-14) throw Error(ErrorCode::ParamOutOfRange, "degenerate triangle");
  }
  // Slightly skewed directions keep rays off edges and vertices of axis-aligned meshes.
  const std::array<Eigen::Vector3d, 3> dirs = {Eigen::Vector3d(1, 0.00137, 0.00291).normalized(),
                                               Eigen::Vector3d(0.00213, 1, 0.00171).normalized(),
                                               Eigen::Vector3d(0.00119, 0.00253, 1).normalized()};
  Eigen::VectorXd values(meta.size());
  Eigen::Index disagreements = 0;
  for (int k = 0; k < dims.z(); ++k)
    for (int j = 0; j < dims.y(); ++j)
      for (int i = 0; i < dims.x(); ++i) {
        const Eigen::Vector3d p = meta.voxel_center(i, j, k);
        double best = std::numeric_limits<double>::infinity();
        std::array<int, 3> crossings{0, 0, 0};
        for (const auto& tri : mesh.triangles) {
          const auto& a = mesh.vertices[tri[0]];
          const auto& b = mesh.vertices[tri[1]];
          const auto& c = mesh.vertices[tri[2]];
          best = std::min(best, (p - closest_on_triangle(p, a, b, c)).squaredNorm());
          for (int r = 0; r < 3; ++r) crossings[r] += ray_hits_triangle(p, dirs[r], a, b, c);
        }
        const int inside_votes = (crossings[0] & 1) + (crossings[1] & 1) + (crossings[2] & 1);
        if (inside_votes != 0 && inside_votes != 3) ++disagreements;
        values[meta.index(i, j, k)] = (inside_votes >= 2 ? 1.0 : -1.0) * std::sqrt(best);
      }
  if (disagreements * 1000 > meta.size())
    throw Error(ErrorCode::NonWatertightMesh, std::to_string(disagreements) +
                                                  " voxels with inconsistent ray parity");
  return SdfGrid(meta, std::move(values));
}

}  // namespace slf
