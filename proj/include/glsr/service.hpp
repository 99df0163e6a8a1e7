#pragma once

// JSON-over-HTTP access to a trained model. Handlers are plain functions of
// the request so they can be exercised without a socket; HttpServer wires
// them onto cpp-httplib.
//
//   POST /encode  {tokens}                    -> {mu, sigma}
//   POST /decode  {z, mode, seed?}            -> {tokens, g, attributes, deterministic}
//   POST /walk    {z, dim, step, count}       -> {steps: [{z, tokens, g}]}
//   POST /sample  {n, seed}                   -> {items: [{z, tokens, g}]}
//   GET  /info                                -> model and vocabulary summary
//   GET  /scan?dim_x&dim_y&range&res          -> ScanGrid JSON
//
// Errors are {"error": code, "detail": text} with status 400 or 422.

#include <map>
#include <memory>
#include <string>

#include "glsr/latentlab.hpp"
#include "glsr/trainer.hpp"

namespace glsr {

struct ApiResponse {
  int status = 200;
  std::string body;
};

inline constexpr int kMaxWalkCount = 64;
inline constexpr int kMaxSampleCount = 256;
inline constexpr int kMaxScanResolution = 101;

class Api {
 public:
  explicit Api(Checkpoint checkpoint);

  ApiResponse encode(const std::string& body) const;
  ApiResponse decode(const std::string& body) const;
  ApiResponse walk(const std::string& body) const;
  ApiResponse sample(const std::string& body) const;
  ApiResponse info() const;
  ApiResponse scan(const std::map<std::string, std::string>& query) const;

  const Model& model() const { return model_; }
  const TokenVocab& vocab() const { return checkpoint_.vocab; }
  const AttributeSpec& g_attribute() const { return g_attribute_; }
  /// Scan attributes besides g: pitch extremes and accidental class.
  const std::vector<AttributeSpec>& attributes() const { return attributes_; }

 private:
  Checkpoint checkpoint_;
  Model model_;
  AttributeSpec g_attribute_;
  std::vector<AttributeSpec> attributes_;
};

class HttpServer {
 public:
  explicit HttpServer(const Api& api);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Blocks until stop(). Returns false if the socket cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it (or -1); follow with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace glsr
