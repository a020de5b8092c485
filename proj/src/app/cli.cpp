#include "slf/app/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <regex>
#include <sstream>

#include <CLI11.hpp>

#include "slf/app/labels_io.hpp"
#include "slf/app/segmenter.hpp"
#include "slf/app/service.hpp"
#include "slf/error.hpp"
#include "slf/fit.hpp"
#include "slf/harness.hpp"
#include "slf/metrics.hpp"
#include "slf/prior.hpp"
#include "slf/scene.hpp"
#include "slf/synth.hpp"

namespace slf::app {

namespace fs = std::filesystem;

namespace {

/// Thrown for option values CLI11 accepts syntactically but the command rejects.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Eigen::Vector3i parse_grid(const std::string& text) {
  static const std::regex re(R"((\d+)x(\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw UsageError("--grid must look like 64x32x32");
  return {std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])};
}

std::vector<SdfGrid> load_models(const std::string& source, const GridMeta& meta) {
  static const std::regex procedural(R"(procedural:(\d+))");
  std::smatch m;
  if (std::regex_match(source, m, procedural)) return procedural_bank(std::stoi(m[1]), kBankSeed, meta);
  if (!fs::is_directory(source)) throw Error(ErrorCode::MissingFile, "model directory " + source);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(source))
    if (e.is_regular_file() && e.path().extension() == ".slfg") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SdfGrid> bank;
  for (const auto& f : files) {
    bank.push_back(load_grid(f.string()));
    const GridMeta& g = bank.back().meta;
    if (g.dims != meta.dims || g.voxel_size != meta.voxel_size)
      throw Error(ErrorCode::MetaMismatch, f.string() + " does not match --grid/--voxel");
  }
  return bank;
}

ShapePrior default_prior() { return build_prior(procedural_bank(kBankSize), 5); }

struct Options {
  // build-prior
  std::string models{"procedural:79"}, grid{"64x32x32"}, prior_out{"prior.slfp"};
  int dim{5};
  double voxel{0.1};
  // fit
  std::string scene, prior, labels_out{"labels.json"};
  FitConfig fit;
  bool sequential{false};
  int threads{0};
  // synth
  std::uint64_t seed{1000};
  int scenes{1}, beams{64}, min_instances{1}, max_instances{5}, points{3};
  std::string synth_out, synth_prior;
  // eval
  std::string pred, gt, report_out;
  double iou{0.5};
  // harness
  std::string suite, csv_out{"report.csv"};
  // serve / stub-segmenter
  std::string host{"127.0.0.1"}, segmenter{"none"}, scenes_dir{"."}, serve_prior;
  int port{8080}, workers{0}, radius{20};
};

int build_prior_cmd(const Options& o) {
  if (o.voxel <= 0) throw UsageError("--voxel must be positive");
  const GridMeta meta = GridMeta::centered(parse_grid(o.grid), o.voxel);
  const auto bank = load_models(o.models, meta);
  const ShapePrior prior = build_prior(bank, o.dim);
  save_prior(prior, o.prior_out);
  std::cerr << "prior: " << prior.model_count << " models, d = " << prior.dim() << " -> " << o.prior_out << "\n";
  return kExitOk;
}

int fit_cmd(const Options& o) {
  const ShapePrior prior = load_prior(o.prior);
  const Scene scene = load_scene(o.scene);
  FitOptions opts;
  opts.batched = !o.sequential;
  opts.threads = o.threads;
  const auto results = fit_scene(scene, prior, o.fit, opts);
  write_text(o.labels_out, dump_labels(labels_to_json(results, o.fit)));
  for (const auto& r : results)
    std::cerr << "instance " << r.id << ": " << to_string(r.status) << ", energy " << r.energy.total
              << ", confidence " << r.confidence << "\n";
  return kExitOk;
}

int synth_cmd(const Options& o) {
  if (o.scenes < 1) throw UsageError("--scenes must be at least 1");
  const ShapePrior world = o.synth_prior.empty() ? default_prior() : load_prior(o.synth_prior);
  fs::create_directories(o.synth_out);
  for (int k = 0; k < o.scenes; ++k) {
    SynthConfig cfg;
    cfg.seed = o.seed + std::uint64_t(k);
    cfg.min_instances = o.min_instances;
    cfg.max_instances = o.max_instances;
    cfg.prompt_points = o.points;
    cfg.lidar.beams = o.beams;
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", k);
    const std::string dir = (fs::path(o.synth_out) / name).string();
    const SynthScene s = gen_scene(cfg, world);
    write_synth(s, dir);
    std::cerr << dir << ": " << s.gt.size() << " instances, " << s.scene.points.rows() << " points\n";
  }
  return kExitOk;
}

int eval_cmd(const Options& o) {
  const auto preds = load_labels(o.pred);
  std::vector<LabeledBox> gts;
  for (const auto& g : load_gt(o.gt)) gts.push_back({g.id, g.box, 1.0});
  const EvalReport report = evaluate(preds, gts, {o.iou});
  const std::string text = report_to_json(report).dump(2) + "\n";
  if (o.report_out.empty()) std::cout << text;
  else write_text(o.report_out, text);
  return kExitOk;
}

int harness_cmd(const Options& o) {
  const SuiteSpec spec = parse_suite(read_text(o.suite));
  const HarnessReport report = run_harness(spec, [](const std::string& line) { std::cerr << line << "\n"; });
  std::ostringstream csv;
  write_csv(report, csv);
  write_text(o.csv_out, csv.str());
  std::cout << format_table(report);
  return kExitOk;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

int serve_cmd(Options o) {
  // The environment overrides the flags.
  o.port = std::stoi(env_or("SLF_PORT", std::to_string(o.port)));
  o.segmenter = env_or("SLF_SEGMENTER_URL", o.segmenter);
  o.scenes_dir = env_or("SLF_SCENES_DIR", o.scenes_dir);
  ServiceConfig cfg;
  cfg.host = o.host;
  cfg.port = o.port;
  cfg.segmenter = o.segmenter;
  cfg.scenes_dir = o.scenes_dir;
  cfg.workers = o.workers;
  cfg.fit = o.fit;
  auto prior = std::make_shared<const ShapePrior>(o.serve_prior.empty() ? default_prior() : load_prior(o.serve_prior));
  Service service(cfg, prior);
  std::cerr << "serving " << cfg.scenes_dir << " on http://" << cfg.host << ":" << cfg.port << "\n";
  service.run();
  return kExitOk;
}

int stub_cmd(const Options& o) {
  StubSegmenter stub({o.radius, 0, 0});
  std::cerr << "stub segmenter on http://" << o.host << ":" << o.port << "/segment\n";
  stub.run(o.host, o.port);
  return kExitOk;
}

void add_fit_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--iters", o.fit.iterations, "Adam iterations")->capture_default_str();
  cmd->add_option("--lr", o.fit.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--w-mask", o.fit.weights.mask, "mask term weight")->capture_default_str();
  cmd->add_option("--w-pc", o.fit.weights.pc, "point-cloud term weight")->capture_default_str();
  cmd->add_option("--w-ground", o.fit.weights.ground, "ground term weight")->capture_default_str();
  cmd->add_option("--zeta", o.fit.render.zeta, "silhouette sharpness, 1/m")->capture_default_str();
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  Options o;
  CLI::App app("Shape-prior 3D box auto-labeler", "slf");
  app.require_subcommand(1);

  auto* bp = app.add_subcommand("build-prior", "Build a PCA shape prior from an SDF model bank");
  bp->add_option("--models", o.models, "directory of .slfg grids, or procedural:<count>")->capture_default_str();
  bp->add_option("--dim", o.dim, "latent dimension")->capture_default_str();
  bp->add_option("--grid", o.grid, "grid dimensions NXxNYxNZ")->capture_default_str();
  bp->add_option("--voxel", o.voxel, "voxel size, m")->capture_default_str();
  bp->add_option("--out", o.prior_out, "output prior file")->capture_default_str();

  auto* fit = app.add_subcommand("fit", "Fit every instance of a scene and write labels.json");
  fit->add_option("--scene", o.scene, "scene directory")->required();
  fit->add_option("--prior", o.prior, "prior file")->required();
  add_fit_flags(fit, o);
  fit->add_option("--out", o.labels_out, "output labels file")->capture_default_str();
  fit->add_flag("--sequential", o.sequential, "fit instances one after another");
  fit->add_option("--threads", o.threads, "worker threads for batched fitting (0: all cores)");

  auto* synth = app.add_subcommand("synth", "Generate seeded synthetic scenes with ground truth");
  synth->add_option("--seed", o.seed, "seed of the first scene; scene k uses seed + k")->capture_default_str();
  synth->add_option("--scenes", o.scenes, "number of scenes")->capture_default_str();
  synth->add_option("--beams", o.beams, "LiDAR beams (64, 32, 16 or 8)")->capture_default_str();
  synth->add_option("--min-instances", o.min_instances)->capture_default_str();
  synth->add_option("--max-instances", o.max_instances)->capture_default_str();
  synth->add_option("--points", o.points, "prompt points per instance")->capture_default_str();
  synth->add_option("--prior", o.synth_prior, "prior the scenes are drawn from (default: procedural 79, d = 5)");
  synth->add_option("--out", o.synth_out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "Score labels.json against gt.json");
  ev->add_option("--pred", o.pred, "labels.json")->required();
  ev->add_option("--gt", o.gt, "gt.json")->required();
  ev->add_option("--iou", o.iou, "IoU threshold for AP")->capture_default_str();
  ev->add_option("--out", o.report_out, "report file (default: stdout)");

  auto* harness = app.add_subcommand("harness", "Run an ablation suite and write a CSV report");
  harness->add_option("--suite", o.suite, "suite spec JSON")->required();
  harness->add_option("--out", o.csv_out, "output CSV")->capture_default_str();

  auto* serve = app.add_subcommand("serve", "Run the labeling service");
  serve->add_option("--port", o.port, "TCP port (env SLF_PORT)")->capture_default_str();
  serve->add_option("--host", o.host, "bind address")->capture_default_str();
  serve->add_option("--segmenter", o.segmenter, "segmenter URL or none (env SLF_SEGMENTER_URL)")->capture_default_str();
  serve->add_option("--scenes", o.scenes_dir, "scene directory (env SLF_SCENES_DIR)")->capture_default_str();
  serve->add_option("--prior", o.serve_prior, "prior file (default: procedural 79, d = 5)");
  serve->add_option("--workers", o.workers, "fit worker threads (0: all cores)");
  add_fit_flags(serve, o);

  auto* stub = app.add_subcommand("stub-segmenter", "Serve the offline disk-mask segmenter");
  stub->add_option("--port", o.port, "TCP port")->capture_default_str();
  stub->add_option("--host", o.host, "bind address")->capture_default_str();
  stub->add_option("--radius", o.radius, "disk radius, px")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    o.fit.seed_trial_iters = std::min(o.fit.seed_trial_iters, o.fit.iterations);
    try {
      o.fit.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (sub == bp) return build_prior_cmd(o);
    if (sub == fit) return fit_cmd(o);
    if (sub == synth) return synth_cmd(o);
    if (sub == ev) return eval_cmd(o);
    if (sub == harness) return harness_cmd(o);
    if (sub == serve) return serve_cmd(o);
    return stub_cmd(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

int cli_dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_dispatch(int(argv.size()), argv.data());
}

}  // namespace slf::app
