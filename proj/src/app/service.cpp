#include "slf/app/service.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <httplib.h>

#include "slf/app/labels_io.hpp"
#include "slf/error.hpp"
#include "slf/mask_io.hpp"
#include "slf/scene.hpp"

namespace slf::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Raised by handlers; turned into {"error": ...} with the given status.
struct HttpError {
  int status;
  std::string message;
};

[[noreturn]] void fail(int status, const std::string& message) { throw HttpError{status, message}; }

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SegmenterUnreachable:
    case ErrorCode::BadResponse:
      return 502;
    case ErrorCode::BadPrompt:
    case ErrorCode::MaskSizeMismatch:
    case ErrorCode::ParamOutOfRange:
    case ErrorCode::SpecError:
    case ErrorCode::CorruptFile:
      return 422;
    default:
      return 500;
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) fail(422, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    fail(422, std::string("malformed JSON: ") + e.what());
  }
}

Eigen::Vector2d parse_uv(const json& p) {
  if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
    fail(422, "prompt points must be [u, v] pairs");
  return {p[0].get<double>(), p[1].get<double>()};
}

Prompt parse_prompt(const json& body) {
  if (!body.contains("prompt") || !body.at("prompt").is_object()) fail(422, "missing prompt object");
  const json& j = body.at("prompt");
  Prompt p;
  for (const auto& [key, value] : j.items()) {
    if (key == "points") {
      if (!value.is_array() || value.empty()) fail(422, "points must be a non-empty array");
      for (const auto& q : value) p.points.push_back(parse_uv(q));
    } else if (key == "box") {
      if (!value.is_array() || value.size() != 4) fail(422, "box must be [u1, v1, u2, v2]");
      Eigen::Vector4d b;
      for (int i = 0; i < 4; ++i) {
        if (!value[std::size_t(i)].is_number()) fail(422, "box entries must be numbers");
        b[i] = value[std::size_t(i)].get<double>();
      }
      if (!(b[0] < b[2] && b[1] < b[3])) fail(422, "box corners must satisfy u1 < u2 and v1 < v2");
      p.box = b;
    } else if (key == "polygon") {
      if (!value.is_array() || value.size() < 3) fail(422, "polygon needs at least 3 vertices");
      for (const auto& q : value) p.polygon.push_back(parse_uv(q));
    } else {
      fail(422, "unknown prompt field '" + key + "'");
    }
  }
  if (p.empty()) fail(422, "empty prompt");
  return p;
}

/// Request overrides on top of the service defaults; unknown keys are rejected.
FitConfig apply_overrides(FitConfig cfg, const json& overrides) {
  if (!overrides.is_object()) fail(422, "config must be an object");
  for (const auto& [key, value] : overrides.items()) {
    if (!value.is_number()) fail(422, "config." + key + " must be a number");
    if (key == "lr") cfg.learning_rate = value.get<double>();
    else if (key == "iters") {
      if (!value.is_number_integer()) fail(422, "config.iters must be an integer");
      cfg.iterations = value.get<int>();
      cfg.seed_trial_iters = std::min(cfg.seed_trial_iters, cfg.iterations);
    } else if (key == "w_mask") cfg.weights.mask = value.get<double>();
    else if (key == "w_pc") cfg.weights.pc = value.get<double>();
    else if (key == "w_ground") cfg.weights.ground = value.get<double>();
    else if (key == "zeta") cfg.render.zeta = value.get<double>();
    else fail(422, "unknown config field '" + key + "'");
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(422, e.what());
  }
  return cfg;
}

json config_echo(const FitConfig& cfg) {
  return {{"weights", {{"mask", cfg.weights.mask}, {"pc", cfg.weights.pc}, {"ground", cfg.weights.ground}}},
          {"lr", cfg.learning_rate},
          {"iters", cfg.iterations},
          {"zeta", cfg.render.zeta}};
}

enum class JobState { Queued, Running, Done, Failed };

const char* to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "?";
}

struct Job {
  std::string id, scene_id;
  int instance_id{0};
  FitConfig cfg;
  std::shared_ptr<const Scene> scene;  // with the requested mask installed
  std::atomic<bool> cancel{false};

  mutable std::mutex mu;  // guards everything below
  JobState state{JobState::Queued};
  int iteration{0};
  std::vector<double> trace;
  std::optional<Rle> silhouette;
  json result;
  std::string reason;

  bool active() const {
    std::lock_guard lock(mu);
    return state == JobState::Queued || state == JobState::Running;
  }

  json snapshot() const {
    std::lock_guard lock(mu);
    json j = {{"job_id", id},
              {"scene_id", scene_id},
              {"instance_ids", {instance_id}},
              {"state", to_string(state)},
              {"iteration", iteration},
              {"iterations", cfg.iterations},
              {"energy_trace", trace},
              {"config_echo", config_echo(cfg)}};
    j["silhouette_rle"] = silhouette ? rle_to_json(*silhouette) : json(nullptr);
    if (state == JobState::Failed) j["reason"] = reason;
    return j;
  }
};

struct SceneEntry {
  fs::path dir;
  std::shared_ptr<const Scene> scene;  // loaded on first use
};

}  // namespace

struct Service::Impl {
  ServiceConfig cfg;
  std::shared_ptr<const ShapePrior> prior;
  std::optional<SegmenterClient> segmenter;
  httplib::Server server;
  std::thread server_thread;

  std::mutex scenes_mu;
  std::map<std::string, SceneEntry> scenes;

  std::mutex masks_mu;
  std::map<std::string, std::pair<std::string, Mask>> masks;  // mask id -> (scene id, mask)
  int next_mask{1};

  std::mutex jobs_mu;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::deque<std::shared_ptr<Job>> queue;
  std::condition_variable queue_cv;
  int next_job{1};
  bool stopping{false};
  std::vector<std::thread> workers;

  Impl(ServiceConfig c, std::shared_ptr<const ShapePrior> p) : cfg(std::move(c)), prior(std::move(p)) {
    cfg.fit.validate();
    if (cfg.segmenter != "none" && !cfg.segmenter.empty()) segmenter.emplace(cfg.segmenter, cfg.segmenter_options);
    discover_scenes();
    routes();
    const int n = cfg.workers > 0 ? cfg.workers : int(std::max(1u, std::thread::hardware_concurrency()));
    for (int i = 0; i < n; ++i) workers.emplace_back([this] { work(); });
  }

  void discover_scenes() {
    const fs::path root(cfg.scenes_dir);
    if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, "scenes directory " + cfg.scenes_dir);
    if (fs::exists(root / "scene.json")) {
      scenes[fs::weakly_canonical(root).filename().string()] = {root, nullptr};
      return;
    }
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && fs::exists(e.path() / "scene.json")) scenes[e.path().filename().string()] = {e.path(), nullptr};
  }

  std::pair<std::string, std::shared_ptr<const Scene>> scene(const std::string& id) {
    std::lock_guard lock(scenes_mu);
    auto it = scenes.find(id);
    if (it == scenes.end()) fail(404, "unknown scene '" + id + "'");
    if (!it->second.scene) it->second.scene = std::make_shared<const Scene>(load_scene(it->second.dir.string()));
    return {it->second.dir.string(), it->second.scene};
  }

  static json scene_meta(const std::string& id, const Scene& s) {
    json insts = json::array();
    for (const auto& inst : s.instances) {
      json prompt = json::object();
      if (!inst.prompt.points.empty()) {
        json pts = json::array();
        for (const auto& p : inst.prompt.points) pts.push_back({p.x(), p.y()});
        prompt["points"] = pts;
      }
      if (inst.prompt.box) prompt["box"] = {inst.prompt.box->x(), inst.prompt.box->y(), inst.prompt.box->z(), inst.prompt.box->w()};
      insts.push_back({{"id", inst.id}, {"has_mask", inst.mask.has_value()}, {"prompt", prompt}});
    }
    return {{"id", id},
            {"width", s.camera.width()},
            {"height", s.camera.height()},
            {"points", s.points.rows()},
            {"image", "/scenes/" + id + "/image"},
            {"instances", insts}};
  }

  static void reply(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        reply(res, {{"error", e.message}}, e.status);
      } catch (const Error& e) {
        reply(res, {{"error", e.what()}}, status_for(e.code()));
      } catch (const std::exception& e) {
        reply(res, {{"error", e.what()}}, 500);
      }
    };
  }

  void routes() {
    server.Get("/scenes", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::vector<std::string> ids;
      {
        std::lock_guard lock(scenes_mu);
        for (const auto& [id, entry] : scenes) ids.push_back(id);
      }
      json out = json::array();
      for (const auto& id : ids) out.push_back({{"id", id}, {"meta", scene_meta(id, *scene(id).second)}});
      reply(res, out);
    }));
    server.Get(R"(/scenes/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      reply(res, scene_meta(id, *scene(id).second));
    }));
    server.Get(R"(/scenes/([^/]+)/image)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto [dir, s] = scene(req.matches[1]);
      res.set_content(read_text((fs::path(dir) / s->image).string()), "image/png");
    }));
    server.Post(R"(/scenes/([^/]+)/segment)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      segment(req.matches[1], parse_body(req), res);
    }));
    server.Post(R"(/scenes/([^/]+)/fit)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      submit(req.matches[1], parse_body(req), res);
    }));
    server.Get(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, job(req.matches[1])->snapshot());
    }));
    server.Get(R"(/jobs/([^/]+)/result)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto j = job(req.matches[1]);
      std::lock_guard lock(j->mu);
      if (j->state != JobState::Done) fail(409, std::string("job is ") + to_string(j->state));
      res.set_content(dump_labels(j->result), "application/json");
    }));
    server.Delete(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto j = job(req.matches[1]);
      j->cancel = true;
      {
        std::lock_guard lock(j->mu);
        if (j->state == JobState::Queued) {
          j->state = JobState::Failed;
          j->reason = "cancelled";
        }
      }
      reply(res, j->snapshot());
    }));
  }

  std::shared_ptr<Job> job(const std::string& id) {
    std::lock_guard lock(jobs_mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) fail(404, "unknown job '" + id + "'");
    return it->second;
  }

  void segment(const std::string& scene_id, const json& body, httplib::Response& res) {
    const auto [dir, s] = scene(scene_id);
    const Prompt prompt = parse_prompt(body);
    Mask mask;
    std::string source;
    if (!prompt.polygon.empty()) {
      mask = rasterize_polygon(prompt.polygon, s->camera.width(), s->camera.height());
      source = "user";
    } else if (segmenter) {
      const std::string png = read_text((fs::path(dir) / s->image).string());
      mask = segmenter->segment(png, s->camera.width(), s->camera.height(), prompt);
      source = "external";
    } else {
      fail(422, "no segmenter configured; send a drawn polygon");
    }
    const Rle rle = encode_rle(mask);
    std::string mask_id;
    {
      std::lock_guard lock(masks_mu);
      mask_id = "m" + std::to_string(next_mask++);
      masks.emplace(mask_id, std::make_pair(scene_id, mask));
    }
    reply(res, {{"mask_id", mask_id}, {"mask_rle", rle_to_json(rle)}, {"source", source}});
  }

  void submit(const std::string& scene_id, const json& body, httplib::Response& res) {
    const auto [dir, base] = scene(scene_id);
    for (const auto& [key, value] : body.items())
      if (key != "instance_id" && key != "instance_mask_rle" && key != "mask_id" && key != "config")
        fail(422, "unknown field '" + key + "'");
    const FitConfig fit_cfg = apply_overrides(cfg.fit, body.value("config", json::object()));

    std::optional<Mask> mask;
    if (body.contains("instance_mask_rle") && body.contains("mask_id"))
      fail(422, "give either instance_mask_rle or mask_id");
    if (body.contains("instance_mask_rle")) {
      try {
        mask = decode_rle(rle_from_json(body.at("instance_mask_rle")));
      } catch (const json::exception& e) {
        fail(422, std::string("malformed instance_mask_rle: ") + e.what());
      }
    } else if (body.contains("mask_id")) {
      if (!body.at("mask_id").is_string()) fail(422, "mask_id must be a string");
      std::lock_guard lock(masks_mu);
      auto it = masks.find(body.at("mask_id").get<std::string>());
      if (it == masks.end() || it->second.first != scene_id) fail(404, "unknown mask '" + body.at("mask_id").get<std::string>() + "'");
      mask = it->second.second;
    }
    if (mask && (mask->width() != base->camera.width() || mask->height() != base->camera.height()))
      fail(422, "mask size does not match the camera");

    int instance_id = 0;
    if (body.contains("instance_id")) {
      if (!body.at("instance_id").is_number_integer()) fail(422, "instance_id must be an integer");
      instance_id = body.at("instance_id").get<int>();
    } else {
      for (const auto& inst : base->instances) instance_id = std::max(instance_id, inst.id);
      ++instance_id;
    }

    auto scene_copy = std::make_shared<Scene>(*base);
    Instance* inst = nullptr;
    for (auto& i : scene_copy->instances)
      if (i.id == instance_id) inst = &i;
    if (!inst) {
      if (!mask) fail(422, "a new instance needs instance_mask_rle or mask_id");
      scene_copy->instances.push_back({instance_id, {}, {}});
      inst = &scene_copy->instances.back();
    }
    if (mask) inst->mask = std::move(*mask);
    if (!inst->mask) fail(422, "instance " + std::to_string(instance_id) + " has no mask");

    auto j = std::make_shared<Job>();
    j->scene_id = scene_id;
    j->instance_id = instance_id;
    j->cfg = fit_cfg;
    j->scene = std::move(scene_copy);
    {
      std::lock_guard lock(jobs_mu);
      if (stopping) fail(503, "service is stopping");
      for (const auto& [id, other] : jobs)
        if (other->scene_id == scene_id && other->instance_id == instance_id && other->active())
          fail(409, "a fit for instance " + std::to_string(instance_id) + " is already " + id);
      j->id = "j" + std::to_string(next_job++);
      jobs[j->id] = j;
      queue.push_back(j);
    }
    queue_cv.notify_one();
    reply(res, {{"job_id", j->id}});
  }

  void work() {
    for (;;) {
      std::shared_ptr<Job> j;
      {
        std::unique_lock lock(jobs_mu);
        queue_cv.wait(lock, [this] { return stopping || !queue.empty(); });
        if (queue.empty()) return;
        j = queue.front();
        queue.pop_front();
      }
      run_job(*j);
    }
  }

  void run_job(Job& j) {
    {
      std::lock_guard lock(j.mu);
      if (j.state != JobState::Queued) return;  // cancelled while queued
      j.state = JobState::Running;
    }
    const Scene& s = *j.scene;
    FitOptions opts;
    opts.instance_ids = {j.instance_id};
    opts.threads = 1;
    opts.cancel = &j.cancel;
    opts.on_progress = [&](const FitProgress& p) {
      std::optional<Rle> sil;
      // The silhouette is refreshed every tenth step to bound the extra renders.
      if (p.iteration % 10 == 0) {
        try {
          sil = encode_rle(soft_silhouette(*prior, unpack_shape(*p.params), unpack_pose(*p.params), s.camera, j.cfg.render));
        } catch (const Error&) {
        }
      }
      std::lock_guard lock(j.mu);
      j.iteration = p.iteration;
      if (std::isfinite(p.energy)) j.trace.push_back(p.energy);
      if (sil) j.silhouette = std::move(sil);
    };
    try {
      const auto results = fit_scene(s, *prior, j.cfg, opts);
      std::optional<Rle> sil;
      if (!results.empty()) {
        try {
          sil = encode_rle(soft_silhouette(*prior, results.front().shape, results.front().pose, s.camera, j.cfg.render));
        } catch (const Error&) {
        }
      }
      std::lock_guard lock(j.mu);
      j.result = labels_to_json(results, j.cfg);
      if (!results.empty()) j.iteration = results.front().iterations;
      if (sil) j.silhouette = std::move(sil);
      j.state = JobState::Done;
    } catch (const std::exception& e) {
      std::lock_guard lock(j.mu);
      j.state = JobState::Failed;
      j.reason = j.cancel ? "cancelled" : e.what();
    }
  }

  void shutdown() {
    {
      std::lock_guard lock(jobs_mu);
      if (stopping && workers.empty()) return;
      stopping = true;
      for (auto& [id, j] : jobs) j->cancel = true;
    }
    queue_cv.notify_all();
    server.stop();
    if (server_thread.joinable()) server_thread.join();
    for (auto& w : workers) w.join();
    workers.clear();
  }
};

Service::Service(ServiceConfig cfg, std::shared_ptr<const ShapePrior> prior)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(prior))) {}

Service::~Service() { stop(); }

int Service::start() {
  auto& s = impl_->server;
  int port = impl_->cfg.port;
  if (port == 0) port = s.bind_to_any_port(impl_->cfg.host);
  else if (!s.bind_to_port(impl_->cfg.host, port)) port = -1;
  if (port < 0) throw Error(ErrorCode::IoError, "cannot bind " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port));
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  s.wait_until_ready();
  return port;
}

void Service::run() {
  if (!impl_->server.listen(impl_->cfg.host, impl_->cfg.port))
    throw Error(ErrorCode::IoError, "cannot listen on " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port));
}

void Service::stop() {
  if (impl_) impl_->shutdown();
}

}  // namespace slf::app
