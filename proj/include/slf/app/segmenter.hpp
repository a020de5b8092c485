#pragma once

#include <memory>
#include <string>
#include <string_view>

#include <json.hpp>

#include "slf/render.hpp"
#include "slf/scene.hpp"

namespace slf::app {

std::string base64_encode(std::string_view bytes);
/// Throws BadResponse on malformed input.
std::string base64_decode(std::string_view text);

/// Wire request: {"image": base64 PNG, "points": [[u, v, 1], ...], "box": [u1, v1, u2, v2]}
/// with absent prompt parts omitted. Serialized compactly with sorted keys.
nlohmann::json segment_request(const std::string& png_bytes, const Prompt& prompt);

struct SegmenterOptions {
  int retries{2};           // extra attempts after a transport failure or 5xx
  int backoff_ms{100};      // doubled after every retry
  int timeout_ms{10000};
};

/// HTTP client for an external promptable segmenter. The URL is
/// `http://host:port[/path]`; the path defaults to /segment.
class SegmenterClient {
 public:
  explicit SegmenterClient(const std::string& url, SegmenterOptions opts = {});

  /// Expects {"mask_rle": {...}, "score": s} of the image's size. Throws
  /// SegmenterUnreachable once retries are exhausted and BadResponse for an
  /// unusable reply.
  Mask segment(const std::string& png_bytes, int width, int height, const Prompt& prompt) const;

  const std::string& url() const { return url_; }

 private:
  std::string url_, base_, path_;
  SegmenterOptions opts_;
};

/// Offline stand-in for the segmenter: answers every request with a filled
/// disk of the configured radius centred on the mean prompt point (else the
/// box centre, else the image centre). The mask size is read from the PNG
/// header unless overridden.
struct StubOptions {
  int radius{20};
  int width_override{0}, height_override{0};
};

Mask stub_disk(int width, int height, double cu, double cv, int radius);
/// Response body for one request; throws BadPrompt when the request is malformed.
nlohmann::json stub_respond(const nlohmann::json& request, const StubOptions& opts);

class StubSegmenter {
 public:
  explicit StubSegmenter(StubOptions opts = {});
  ~StubSegmenter();
  StubSegmenter(const StubSegmenter&) = delete;
  StubSegmenter& operator=(const StubSegmenter&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  std::string url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace slf::app
