#include "slf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "slf/error.hpp"

namespace slf {

namespace {

void check_box(const Box3& b) {
  if (!(b.dims.array() > 0).all() || !b.dims.allFinite() || !b.center.allFinite() || !std::isfinite(b.yaw))
    throw Error(ErrorCode::DegenerateBox, "box dimensions must be positive and finite");
}

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

std::array<Eigen::Vector2d, 4> bev_corners(const Box3& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Eigen::Vector2d ex(c * 0.5 * b.dims.x(), s * 0.5 * b.dims.x());
  const Eigen::Vector2d ey(-s * 0.5 * b.dims.y(), c * 0.5 * b.dims.y());
  const Eigen::Vector2d o = b.center.head<2>();
  return {o - ex - ey, o + ex - ey, o + ex + ey, o - ex + ey};
}

std::vector<Eigen::Vector2d> clip_convex(const std::vector<Eigen::Vector2d>& subject,
                                         const std::vector<Eigen::Vector2d>& clip) {
  std::vector<Eigen::Vector2d> out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Eigen::Vector2d a = clip[e], b = clip[(e + 1) % clip.size()];
    const Eigen::Vector2d edge = b - a;
    auto side = [&](const Eigen::Vector2d& p) { return cross(edge, p - a); };
    std::vector<Eigen::Vector2d> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Eigen::Vector2d& p = in[i];
      const Eigen::Vector2d& q = in[(i + 1) % in.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0) out.push_back(p);
      if ((sp >= 0) != (sq >= 0)) out.push_back(p + (q - p) * (sp / (sp - sq)));
    }
  }
  return out;
}

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) a += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::abs(a);
}

double bev_intersection(const Box3& a, const Box3& b) {
  check_box(a);
  check_box(b);
  const auto ca = bev_corners(a), cb = bev_corners(b);
  return polygon_area(clip_convex({ca.begin(), ca.end()}, {cb.begin(), cb.end()}));
}

double iou_bev(const Box3& a, const Box3& b) {
  const double inter = bev_intersection(a, b);
  const double uni = a.dims.x() * a.dims.y() + b.dims.x() * b.dims.y() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3& a, const Box3& b) {
  const double inter_bev = bev_intersection(a, b);
  const double lo = std::max(a.center.z() - 0.5 * a.dims.z(), b.center.z() - 0.5 * b.dims.z());
  const double hi = std::min(a.center.z() + 0.5 * a.dims.z(), b.center.z() + 0.5 * b.dims.z());
  const double inter = inter_bev * std::max(0.0, hi - lo);
  const double uni = a.dims.prod() + b.dims.prod() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

ApResult ap_r40(const std::vector<Detection>& predictions, const std::vector<Box3>& gts, double iou_threshold,
                IouKind kind) {
  ApResult r;
  r.match.assign(predictions.size(), -1);
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return predictions[a].confidence > predictions[b].confidence; });
  std::vector<bool> taken(gts.size(), false);
  std::vector<double> precision, recall;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t p = order[rank];
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double iou = kind == IouKind::Bev ? iou_bev(predictions[p].box, gts[g]) : iou_3d(predictions[p].box, gts[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = int(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      taken[std::size_t(best)] = true;
      r.match[p] = best;
      ++r.tp;
    } else {
      ++r.fp;
    }
    precision.push_back(double(r.tp) / double(rank + 1));
    recall.push_back(gts.empty() ? 0.0 : double(r.tp) / double(gts.size()));
  }
  r.fn = int(gts.size()) - r.tp;
  if (gts.empty()) {
    r.defined = false;
    return r;
  }
  double sum = 0;
  for (int k = 1; k <= 40; ++k) {
    const double level = k / 40.0;
    double best = 0;
    for (std::size_t i = 0; i < precision.size(); ++i)
      if (recall[i] >= level - 1e-12) best = std::max(best, precision[i]);
    sum += best;
  }
  r.ap = sum / 40.0;
  return r;
}

double orientation_error(double yaw_pred, double yaw_gt, bool dagger) {
  const double d = std::abs(wrap_angle(yaw_pred - yaw_gt));
  return dagger ? std::min(d, std::numbers::pi - d) : d;
}

double size_error(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double inter = a.cwiseMin(b).prod();
  return 1.0 - inter / (a.prod() + b.prod() - inter);
}

EvalReport evaluate(const std::vector<LabeledBox>& predictions, const std::vector<LabeledBox>& gts,
                    const std::vector<double>& thresholds) {
  EvalReport rep;
  rep.gt_count = int(gts.size());
  rep.prediction_count = int(predictions.size());
  std::vector<Detection> dets;
  for (const auto& p : predictions) dets.push_back({p.box, p.confidence});
  std::vector<Box3> boxes;
  for (const auto& g : gts) boxes.push_back(g.box);
  for (double t : thresholds) {
    rep.ap_3d[t] = ap_r40(dets, boxes, t, IouKind::ThreeD);
    rep.ap_bev[t] = ap_r40(dets, boxes, t, IouKind::Bev);
  }

  std::vector<const LabeledBox*> sorted;
  for (const auto& g : gts) sorted.push_back(&g);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return a->id < b->id; });
  int matched = 0;
  for (const LabeledBox* g : sorted) {
    InstanceEval e;
    e.id = g->id;
    auto it = std::find_if(predictions.begin(), predictions.end(), [&](const auto& p) { return p.id == g->id; });
    if (it != predictions.end()) {
      e.predicted = true;
      e.iou_3d = iou_3d(it->box, g->box);
      e.iou_bev = iou_bev(it->box, g->box);
      e.center_error = (it->box.center - g->box.center).norm();
      e.size_error = size_error(it->box.dims, g->box.dims);
      e.yaw_error = orientation_error(it->box.yaw, g->box.yaw);
      e.yaw_error_dagger = orientation_error(it->box.yaw, g->box.yaw, true);
      rep.translation_error += e.center_error;
      rep.size_error += e.size_error;
      rep.orientation_error += e.yaw_error;
      rep.orientation_error_dagger += e.yaw_error_dagger;
      ++matched;
    }
    rep.mean_iou_3d += e.iou_3d;
    rep.mean_iou_bev += e.iou_bev;
    rep.instances.push_back(e);
  }
  if (!sorted.empty()) {
    rep.mean_iou_3d /= double(sorted.size());
    rep.mean_iou_bev /= double(sorted.size());
  }
  if (matched > 0) {
    rep.translation_error /= matched;
    rep.size_error /= matched;
    rep.orientation_error /= matched;
    rep.orientation_error_dagger /= matched;
  }
  return rep;
}

}  // namespace slf
