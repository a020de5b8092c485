#pragma once

#include <memory>
#include <string>

#include "slf/app/segmenter.hpp"
#include "slf/fit.hpp"
#include "slf/prior.hpp"

namespace slf::app {

struct ServiceConfig {
  std::string host{"127.0.0.1"};
  int port{8080};                  // 0 picks a free port
  std::string segmenter{"none"};   // URL of the external segmenter, or "none"
  std::string scenes_dir{"."};     // scene directories (each with scene.json), or one scene
  int workers{0};                  // fit worker threads; 0: hardware concurrency
  FitConfig fit;                   // defaults that request overrides start from
  SegmenterOptions segmenter_options;
};

/// Labeling service over HTTP/JSON.
///
///   GET    /scenes                 [{id, meta}]
///   GET    /scenes/{id}            scene meta
///   GET    /scenes/{id}/image      PNG bytes
///   POST   /scenes/{id}/segment    {prompt: {points | box | polygon}} -> {mask_id, mask_rle, source}
///   POST   /scenes/{id}/fit        {instance_id?, instance_mask_rle | mask_id?, config?} -> {job_id}
///   GET    /jobs/{id}              job snapshot with energy trace and silhouette
///   GET    /jobs/{id}/result       labels.json fragment of a finished job
///   DELETE /jobs/{id}              cancels a queued or running job
///
/// Errors carry {"error": message}: 404 unknown ids, 409 a fit already
/// queued or running for the instance (or a result requested early), 422
/// malformed requests, 502 segmenter failures.
class Service {
 public:
  Service(ServiceConfig cfg, std::shared_ptr<const ShapePrior> prior);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  /// Stops accepting requests, cancels outstanding jobs and joins the workers.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace slf::app
