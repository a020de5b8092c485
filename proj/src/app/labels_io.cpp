#include "slf/app/labels_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "slf/error.hpp"

namespace slf::app {

using json = nlohmann::json;

namespace {

json vec_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json ap_json(const ApResult& ap) {
  return {{"ap", ap.ap}, {"defined", ap.defined}, {"tp", ap.tp}, {"fp", ap.fp}, {"fn", ap.fn}};
}

std::string threshold_key(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

}  // namespace

json label_to_json(const FitResult& r, const FitConfig& cfg) {
  return {{"id", r.id},
          {"status", std::string(to_string(r.status))},
          {"center", vec_json(r.box.center)},
          {"dims", vec_json(r.box.dims)},
          {"yaw", r.box.yaw},
          {"shape_code", vec_json(r.shape)},
          {"confidence", r.confidence},
          {"energy", {{"mask", r.energy.mask}, {"pc", r.energy.pc}, {"ground", r.energy.ground},
                      {"total", r.energy.total}}},
          {"config_echo", {{"weights", {{"mask", cfg.weights.mask}, {"pc", cfg.weights.pc},
                                        {"ground", cfg.weights.ground}}},
                           {"lr", cfg.learning_rate},
                           {"iters", cfg.iterations},
                           {"zeta", cfg.render.zeta}}}};
}

json labels_to_json(const std::vector<FitResult>& results, const FitConfig& cfg) {
  json out = json::array();
  for (const auto& r : results) out.push_back(label_to_json(r, cfg));
  return out;
}

std::string dump_labels(const json& labels) { return labels.dump(2) + "\n"; }

std::vector<LabeledBox> labels_from_json(const std::string& text) {
  std::vector<LabeledBox> out;
  try {
    const json j = json::parse(text);
    if (!j.is_array()) throw Error(ErrorCode::CorruptFile, "labels must be a JSON array");
    for (const auto& e : j) {
      const auto c = e.at("center").get<std::vector<double>>();
      const auto d = e.at("dims").get<std::vector<double>>();
      if (c.size() != 3 || d.size() != 3) throw Error(ErrorCode::CorruptFile, "center and dims need 3 entries");
      LabeledBox b;
      b.id = e.at("id").get<int>();
      b.box.center = Eigen::Vector3d(c[0], c[1], c[2]);
      b.box.dims = Eigen::Vector3d(d[0], d[1], d[2]);
      b.box.yaw = e.at("yaw").get<double>();
      b.confidence = e.value("confidence", 1.0);
      out.push_back(b);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed labels: ") + e.what());
  }
  return out;
}

std::vector<LabeledBox> load_labels(const std::string& path) { return labels_from_json(read_text(path)); }

json report_to_json(const EvalReport& r) {
  json ap3 = json::object(), apb = json::object();
  for (const auto& [t, ap] : r.ap_3d) ap3[threshold_key(t)] = ap_json(ap);
  for (const auto& [t, ap] : r.ap_bev) apb[threshold_key(t)] = ap_json(ap);
  json insts = json::array();
  for (const auto& i : r.instances) {
    insts.push_back({{"id", i.id},
                     {"predicted", i.predicted},
                     {"iou_3d", i.iou_3d},
                     {"iou_bev", i.iou_bev},
                     {"center_error", i.center_error},
                     {"size_error", i.size_error},
                     {"yaw_error", i.yaw_error},
                     {"yaw_error_dagger", i.yaw_error_dagger}});
  }
  return {{"ap_3d", ap3},
          {"ap_bev", apb},
          {"mean_iou_3d", r.mean_iou_3d},
          {"mean_iou_bev", r.mean_iou_bev},
          {"translation_error", r.translation_error},
          {"size_error", r.size_error},
          {"orientation_error", r.orientation_error},
          {"orientation_error_dagger", r.orientation_error_dagger},
          {"gt_count", r.gt_count},
          {"prediction_count", r.prediction_count},
          {"instances", insts}};
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path);
}

}  // namespace slf::app
