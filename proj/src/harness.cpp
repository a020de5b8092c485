#include "slf/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "slf/error.hpp"

namespace slf {

using json = nlohmann::json;

namespace {

const std::vector<std::string> kTerms = {"full", "mask+pc", "pc", "mask"};
const std::vector<std::string> kMorph = {"none", "erode5", "erode9", "dilate5", "dilate9"};

template <class T>
std::vector<T> axis_values(const json& v, const std::string& axis) {
  if (!v.is_array() || v.empty()) throw Error(ErrorCode::SpecError, "axis '" + axis + "' needs a non-empty list");
  try {
    return v.get<std::vector<T>>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::SpecError, "axis '" + axis + "' has values of the wrong type");
  }
}

void add_cell(SuiteSpec& s, CellSpec c, const std::string& axis, const std::string& value) {
  const CellSpec& base = s.cells.front();
  if (c.terms == base.terms && c.dim == base.dim && c.bank == base.bank && c.prompt_points == base.prompt_points &&
      c.beams == base.beams && c.morphology == base.morphology)
    return;
  c.axis = axis;
  c.value = value;
  for (const auto& existing : s.cells)
    if (existing.axis == axis && existing.value == value) return;
  s.cells.push_back(std::move(c));
}

EnergyWeights weights_for(const std::string& terms, EnergyWeights w) {
  if (terms == "mask+pc") w.ground = 0;
  if (terms == "pc") w.mask = w.ground = 0;
  if (terms == "mask") w.pc = w.ground = 0;
  return w;
}

double median_of(std::vector<double> v) { return v.empty() ? 0.0 : median(std::move(v)); }

}  // namespace

SuiteSpec parse_suite(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SpecError, std::string("suite is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::SpecError, "suite must be a JSON object");
  static const std::vector<std::string> known = {"name", "seed", "scenes", "instances", "iterations",
                                                 "eligible_points", "axes"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw Error(ErrorCode::SpecError, "unknown suite field '" + k + "'");
  SuiteSpec s;
  try {
    s.name = j.value("name", s.name);
    s.seed = j.value("seed", s.seed);
    s.scenes = j.value("scenes", s.scenes);
    if (j.contains("instances")) {
      auto r = j.at("instances").get<std::vector<int>>();
      if (r.size() != 2) throw Error(ErrorCode::SpecError, "instances must be [min, max]");
      s.min_instances = r[0];
      s.max_instances = r[1];
    }
    s.fit.iterations = j.value("iterations", s.fit.iterations);
    s.eligible_points = j.value("eligible_points", s.eligible_points);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SpecError, std::string("bad suite field: ") + e.what());
  }
  if (s.scenes < 1 || s.min_instances < 1 || s.max_instances < s.min_instances || s.fit.iterations < 1)
    throw Error(ErrorCode::SpecError, "suite sizes must be positive");
  s.fit.seed_trial_iters = std::min(s.fit.seed_trial_iters, s.fit.iterations);
  s.cells.push_back(CellSpec{});

  const json axes = j.value("axes", json::object());
  if (!axes.is_object()) throw Error(ErrorCode::SpecError, "axes must be an object");
  for (const auto& [axis, values] : axes.items()) {
    if (axis == "terms") {
      for (const auto& v : axis_values<std::string>(values, axis)) {
        if (std::find(kTerms.begin(), kTerms.end(), v) == kTerms.end())
          throw Error(ErrorCode::SpecError, "unknown energy-term subset '" + v + "'");
        CellSpec c;
        c.terms = v;
        add_cell(s, c, axis, v);
      }
    } else if (axis == "dim") {
      for (int v : axis_values<int>(values, axis)) {
        if (v < 1) throw Error(ErrorCode::SpecError, "dim must be positive");
        CellSpec c;
        c.dim = v;
        add_cell(s, c, axis, std::to_string(v));
      }
    } else if (axis == "bank") {
      for (int v : axis_values<int>(values, axis)) {
        if (v < 2 || v > kBankSize) throw Error(ErrorCode::SpecError, "bank size must be in [2, 79]");
        CellSpec c;
        c.bank = v;
        add_cell(s, c, axis, std::to_string(v));
      }
    } else if (axis == "points") {
      for (int v : axis_values<int>(values, axis)) {
        if (v < 0) throw Error(ErrorCode::SpecError, "prompt points must be non-negative");
        CellSpec c;
        c.prompt_points = v;
        add_cell(s, c, axis, std::to_string(v));
      }
    } else if (axis == "beams") {
      for (int v : axis_values<int>(values, axis)) {
        if (v != 64 && v != 32 && v != 16 && v != 8) throw Error(ErrorCode::SpecError, "beams must be 64, 32, 16 or 8");
        CellSpec c;
        c.beams = v;
        add_cell(s, c, axis, std::to_string(v));
      }
    } else if (axis == "morphology") {
      for (const auto& v : axis_values<std::string>(values, axis)) {
        if (std::find(kMorph.begin(), kMorph.end(), v) == kMorph.end())
          throw Error(ErrorCode::SpecError, "unknown morphology '" + v + "'");
        CellSpec c;
        c.morphology = v;
        add_cell(s, c, axis, v);
      }
    } else {
      throw Error(ErrorCode::SpecError, "unknown sweep axis '" + axis + "'");
    }
  }
  return s;
}

const CellResult& HarnessReport::find(const std::string& axis, const std::string& value) const {
  for (const auto& c : cells)
    if (c.spec.axis == axis && c.spec.value == value) return c;
  // Values equal to the baseline were folded into it.
  return cells.front();
}

CellMetrics summarize(const std::vector<InstanceRecord>& records, const std::vector<LabeledBox>& predictions,
                      const std::vector<LabeledBox>& gts) {
  CellMetrics m;
  m.instances = int(records.size());
  std::vector<double> ce, yd;
  int good = 0;
  for (const auto& r : records) {
    m.mean_iou_3d += r.iou_3d;
    m.mean_iou_bev += r.iou_bev;
    m.mean_center_error += r.center_error;
    m.mean_yaw_error += r.yaw_error;
    m.mean_yaw_dagger += r.yaw_error_dagger;
    if (!r.eligible) continue;
    ++m.eligible;
    good += r.iou_3d >= 0.5;
    ce.push_back(r.center_error);
    yd.push_back(r.yaw_error_dagger);
  }
  if (m.instances > 0) {
    const double n = m.instances;
    m.mean_iou_3d /= n;
    m.mean_iou_bev /= n;
    m.mean_center_error /= n;
    m.mean_yaw_error /= n;
    m.mean_yaw_dagger /= n;
  }
  if (m.eligible > 0) m.eligible_iou50 = double(good) / m.eligible;
  m.median_center_error = median_of(ce);
  m.median_yaw_dagger = median_of(yd);
  const EvalReport rep = evaluate(predictions, gts, {0.5, 0.7});
  m.ap3d_50 = rep.ap_3d.at(0.5).ap;
  m.ap3d_70 = rep.ap_3d.at(0.7).ap;
  m.apbev_50 = rep.ap_bev.at(0.5).ap;
  m.apbev_70 = rep.ap_bev.at(0.7).ap;
  return m;
}

namespace {

// Scenes and priors shared between cells of one harness run.
struct Cache {
  const SuiteSpec& spec;
  std::mutex mu;
  std::map<std::pair<int, int>, ShapePrior> priors;
  std::map<std::pair<int, int>, std::vector<SynthScene>> scenes;
  std::vector<SdfGrid> bank;

  explicit Cache(const SuiteSpec& s) : spec(s) {}

  const ShapePrior& prior(int bank_size, int dim) {
    std::lock_guard lock(mu);
    const int d = std::min(dim, bank_size - 1);
    auto key = std::make_pair(bank_size, d);
    auto it = priors.find(key);
    if (it != priors.end()) return it->second;
    if (bank.empty()) bank = procedural_bank(kBankSize);
    std::vector<SdfGrid> subset(bank.begin(), bank.begin() + bank_size);
    return priors.emplace(key, build_prior(subset, d)).first->second;
  }

  const std::vector<SynthScene>& suite(int beams, int points) {
    const ShapePrior& world = prior(kBankSize, 5);
    std::lock_guard lock(mu);
    auto key = std::make_pair(beams, points);
    auto it = scenes.find(key);
    if (it != scenes.end()) return it->second;
    std::vector<SynthScene> out;
    for (int k = 0; k < spec.scenes; ++k) {
      SynthConfig cfg;
      cfg.seed = spec.seed + std::uint64_t(k);
      cfg.min_instances = spec.min_instances;
      cfg.max_instances = spec.max_instances;
      cfg.prompt_points = points;
      cfg.lidar.beams = beams;
      out.push_back(gen_scene(cfg, world));
    }
    return scenes.emplace(key, std::move(out)).first->second;
  }
};

Mask apply_morphology(const Mask& m, const std::string& op) {
  if (op == "none") return m;
  const MorphOp kind = op.rfind("erode", 0) == 0 ? MorphOp::Erode : MorphOp::Dilate;
  return corrupt_mask(m, kind, std::stoi(op.substr(kind == MorphOp::Erode ? 5 : 6)));
}

CellResult run_cell_cached(Cache& cache, const SuiteSpec& spec, const CellSpec& cell, const HarnessLog& log) {
  const auto t0 = std::chrono::steady_clock::now();
  CellResult out;
  out.spec = cell;
  const ShapePrior& prior = cache.prior(cell.bank, cell.dim);
  const auto& scenes = cache.suite(cell.beams, cell.prompt_points);
  FitConfig cfg = spec.fit;
  cfg.weights = weights_for(cell.terms, cfg.weights);
  std::vector<LabeledBox> preds, gts;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    Scene scene = scenes[k].scene;
    for (auto& inst : scene.instances) inst.mask = apply_morphology(*inst.mask, cell.morphology);
    const SceneObservations obs = observe_scene(scene, cfg);
    const auto results = fit_scene(scene, obs, prior, cfg, {});
    for (std::size_t i = 0; i < results.size(); ++i) {
      const FitResult& r = results[i];
      const GtInstance& g = scenes[k].gt[i];
      InstanceRecord rec;
      rec.scene = int(k);
      rec.id = r.id;
      rec.status = r.status;
      rec.iou_3d = iou_3d(r.box, g.box);
      rec.iou_bev = iou_bev(r.box, g.box);
      rec.center_error = (r.box.center - g.box.center).norm();
      rec.yaw_error = orientation_error(r.box.yaw, g.box.yaw);
      rec.yaw_error_dagger = orientation_error(r.box.yaw, g.box.yaw, true);
      rec.occlusion = g.occlusion;
      rec.frustum_points = obs.frustums[i].size();
      rec.confidence = r.confidence;
      rec.eligible = g.occlusion == 0 && rec.frustum_points >= spec.eligible_points;
      out.records.push_back(rec);
      const int uid = int(k) * 1000 + r.id;
      preds.push_back({uid, r.box, r.confidence});
      gts.push_back({uid, g.box, 1.0});
    }
  }
  out.metrics = summarize(out.records, preds, gts);
  out.metrics.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s=%s: mean 3D IoU %.4f (%d instances, %.1f s)", cell.axis.c_str(),
                  cell.value.c_str(), out.metrics.mean_iou_3d, out.metrics.instances, out.metrics.seconds);
    log(buf);
  }
  return out;
}

}  // namespace

CellResult run_cell(const SuiteSpec& spec, const CellSpec& cell, const HarnessLog& log) {
  Cache cache(spec);
  return run_cell_cached(cache, spec, cell, log);
}

HarnessReport run_harness(const SuiteSpec& spec, const HarnessLog& log) {
  if (spec.cells.empty()) throw Error(ErrorCode::SpecError, "suite has no cells");
  Cache cache(spec);
  HarnessReport rep;
  rep.name = spec.name;
  for (const auto& cell : spec.cells) rep.cells.push_back(run_cell_cached(cache, spec, cell, log));
  return rep;
}

namespace {

std::vector<std::pair<std::string, double>> metric_list(const CellMetrics& m) {
  return {{"instances", m.instances},
          {"eligible", m.eligible},
          {"mean_iou_3d", m.mean_iou_3d},
          {"mean_iou_bev", m.mean_iou_bev},
          {"eligible_iou50", m.eligible_iou50},
          {"median_center_error", m.median_center_error},
          {"median_yaw_dagger_deg", m.median_yaw_dagger * 180.0 / 3.141592653589793},
          {"mean_center_error", m.mean_center_error},
          {"mean_yaw_error", m.mean_yaw_error},
          {"mean_yaw_dagger", m.mean_yaw_dagger},
          {"ap3d_50", m.ap3d_50},
          {"ap3d_70", m.ap3d_70},
          {"apbev_50", m.apbev_50},
          {"apbev_70", m.apbev_70}};
}

}  // namespace

void write_csv(const HarnessReport& report, std::ostream& out) {
  out << "suite,axis,value,metric,score\n";
  for (const auto& c : report.cells)
    for (const auto& [name, v] : metric_list(c.metrics)) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", v);
      out << report.name << ',' << c.spec.axis << ',' << c.spec.value << ',' << name << ',' << buf << '\n';
    }
}

std::string format_table(const HarnessReport& report) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %-9s %6s %8s %8s %8s %8s %8s %8s %8s\n", "axis", "value", "n", "IoU3D",
                "IoUBEV", "AP3D@.5", "AP3D@.7", "APBEV@.7", "ctr[m]", "yaw+[d]");
  os << buf;
  for (const auto& c : report.cells) {
    const auto& m = c.metrics;
    std::snprintf(buf, sizeof buf, "%-12s %-9s %6d %8.4f %8.4f %8.4f %8.4f %8.4f %8.3f %8.2f\n", c.spec.axis.c_str(),
                  c.spec.value.c_str(), m.instances, m.mean_iou_3d, m.mean_iou_bev, m.ap3d_50, m.ap3d_70, m.apbev_70,
                  m.median_center_error, m.median_yaw_dagger * 180.0 / 3.141592653589793);
    os << buf;
  }
  return os.str();
}

}  // namespace slf
