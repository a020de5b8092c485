#include "slf/app/segmenter.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "slf/error.hpp"
#include "slf/mask_io.hpp"

namespace slf::app {

using json = nlohmann::json;

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), int(bytes.size()));
  out.resize(std::size_t(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::BadResponse, "base64 length is not a multiple of 4");
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), int(text.size()));
  if (n < 0) throw Error(ErrorCode::BadResponse, "invalid base64");
  // EVP_DecodeBlock keeps the zero bytes that stand for padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') pad = text.size() >= 2 && text[text.size() - 2] == '=' ? 2 : 1;
  out.resize(std::size_t(n) - pad);
  return out;
}

json segment_request(const std::string& png_bytes, const Prompt& prompt) {
  json req = {{"image", base64_encode(png_bytes)}};
  if (!prompt.points.empty()) {
    json pts = json::array();
    for (const auto& p : prompt.points) pts.push_back({p.x(), p.y(), 1});
    req["points"] = pts;
  }
  if (prompt.box) req["box"] = {prompt.box->x(), prompt.box->y(), prompt.box->z(), prompt.box->w()};
  return req;
}

SegmenterClient::SegmenterClient(const std::string& url, SegmenterOptions opts) : url_(url), opts_(opts) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.substr(0, scheme) != "http")
    throw Error(ErrorCode::SegmenterUnreachable, "segmenter URL must start with http://: " + url);
  const auto slash = url.find('/', scheme + 3);
  base_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/segment" : url.substr(slash);
}

Mask SegmenterClient::segment(const std::string& png_bytes, int width, int height, const Prompt& prompt) const {
  const std::string body = segment_request(png_bytes, prompt).dump();
  httplib::Client client(base_);
  const auto timeout = std::chrono::milliseconds(opts_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  int backoff = opts_.backoff_ms;
  std::string failure;
  for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      failure = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      failure = "status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw Error(ErrorCode::BadResponse, "segmenter replied " + std::to_string(res->status));
    Mask mask;
    try {
      const json reply = json::parse(res->body);
      if (!reply.contains("score") || !reply.at("score").is_number())
        throw Error(ErrorCode::BadResponse, "reply lacks a numeric score");
      mask = decode_rle(rle_from_json(reply.at("mask_rle")));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BadResponse, std::string("unparsable reply: ") + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BadResponse) throw;
      throw Error(ErrorCode::BadResponse, e.what());
    }
    if (mask.width() != width || mask.height() != height)
      throw Error(ErrorCode::BadResponse, "mask is " + std::to_string(mask.width()) + "x" +
                                              std::to_string(mask.height()) + ", expected " +
                                              std::to_string(width) + "x" + std::to_string(height));
    return mask;
  }
  throw Error(ErrorCode::SegmenterUnreachable, url_ + ": " + failure);
}

Mask stub_disk(int width, int height, double cu, double cv, int radius) {
  Mask m(width, height);
  const double r2 = double(radius) * radius;
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u)
      if ((u - cu) * (u - cu) + (v - cv) * (v - cv) <= r2) m(u, v) = 1.0f;
  return m;
}

namespace {

// Width and height from the IHDR chunk, which always follows the 8-byte signature.
std::pair<int, int> png_size(const std::string& png) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (png.size() < 24 || png.compare(0, 8, reinterpret_cast<const char*>(sig), 8) != 0 ||
      png.compare(12, 4, "IHDR") != 0)
    throw Error(ErrorCode::BadPrompt, "image is not a PNG");
  auto be32 = [&](std::size_t at) {
    int v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(png[at + i]);
    return v;
  };
  return {be32(16), be32(20)};
}

}  // namespace

json stub_respond(const json& request, const StubOptions& opts) {
  int width = 0, height = 0;
  double cu = 0, cv = 0;
  try {
    std::tie(width, height) = png_size(base64_decode(request.at("image").get<std::string>()));
    cu = (width - 1) / 2.0;
    cv = (height - 1) / 2.0;
    if (request.contains("points") && !request.at("points").empty()) {
      cu = cv = 0;
      for (const auto& p : request.at("points")) {
        cu += p.at(0).get<double>();
        cv += p.at(1).get<double>();
      }
      cu /= double(request.at("points").size());
      cv /= double(request.at("points").size());
    } else if (request.contains("box")) {
      const auto& b = request.at("box");
      cu = (b.at(0).get<double>() + b.at(2).get<double>()) / 2;
      cv = (b.at(1).get<double>() + b.at(3).get<double>()) / 2;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadPrompt, std::string("malformed segment request: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::BadPrompt, e.what());
  }
  if (opts.width_override > 0) width = opts.width_override;
  if (opts.height_override > 0) height = opts.height_override;
  return {{"mask_rle", rle_to_json(encode_rle(stub_disk(width, height, cu, cv, opts.radius)))}, {"score", 1.0}};
}

struct StubSegmenter::Impl {
  StubOptions opts;
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port{0};
};

StubSegmenter::StubSegmenter(StubOptions opts) : impl_(std::make_unique<Impl>()) {
  impl_->opts = opts;
  impl_->server.Post("/segment", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(stub_respond(json::parse(req.body), impl_->opts).dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 422;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

StubSegmenter::~StubSegmenter() { stop(); }

int StubSegmenter::start(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host) : port;
  if (port != 0 && !impl_->server.bind_to_port(host, port))
    throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  if (impl_->port < 0) throw Error(ErrorCode::IoError, "cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void StubSegmenter::run(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

void StubSegmenter::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string StubSegmenter::url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port) + "/segment";
}

}  // namespace slf::app
