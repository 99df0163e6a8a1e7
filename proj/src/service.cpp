#include "glsr/service.hpp"

#include <cmath>
#include <random>

#include "httplib.h"
#include "json.hpp"

namespace glsr {

namespace {

using Json = nlohmann::ordered_json;

ApiResponse error(int status, const std::string& code, const std::string& detail) {
  return {status, Json{{"error", code}, {"detail", detail}}.dump()};
}

ApiResponse ok(const Json& body) { return {200, body.dump()}; }

struct BadRequest {
  std::string code;
  std::string detail;
};

Json parse_body(const std::string& body) {
  try {
    auto j = Json::parse(body);
    if (!j.is_object()) throw BadRequest{"bad_request", "request body must be a JSON object"};
    return j;
  } catch (const Json::parse_error& e) {
    throw BadRequest{"bad_json", e.what()};
  } catch (const Json::out_of_range& e) {
    // Literals such as 1e999 overflow a double.
    throw BadRequest{"non_finite", e.what()};
  }
}

template <class T>
T field(const Json& j, const char* name) {
  if (!j.contains(name)) throw BadRequest{"bad_request", std::string("missing field '") + name + "'"};
  try {
    return j[name].get<T>();
  } catch (const Json::exception&) {
    throw BadRequest{"bad_request", std::string("field '") + name + "' has the wrong type"};
  }
}

LatentPoint latent_field(const Json& j, int dims) {
  const auto z = field<std::vector<double>>(j, "z");
  if (static_cast<int>(z.size()) != dims) {
    throw BadRequest{"wrong_length", "z must have " + std::to_string(dims) + " entries, got " + std::to_string(z.size())};
  }
  for (double v : z) {
    if (!std::isfinite(v)) throw BadRequest{"non_finite", "z entries must be finite"};
  }
  return {z};
}

Json tokens_json(const SequenceSample& s, const TokenVocab& vocab) {
  Json a = Json::array();
  for (int id : s.ids) a.push_back(vocab.token(id));
  return a;
}

template <class F>
ApiResponse guarded(F&& handler) {
  try {
    return handler();
  } catch (const BadRequest& e) {
    return error(400, e.code, e.detail);
  } catch (const std::exception& e) {
    return error(400, "bad_request", e.what());
  }
}

}  // namespace

Api::Api(Checkpoint checkpoint)
    : checkpoint_(std::move(checkpoint)), model_(checkpoint_.as_model()) {
  g_attribute_ = checkpoint_.config.reg.empty() ? num_played_notes(checkpoint_.vocab)
                                                 : attribute_by_name(checkpoint_.vocab, checkpoint_.config.reg[0].attribute);
  for (auto& a : standard_attributes(checkpoint_.vocab)) {
    if (a.name != g_attribute_.name) attributes_.push_back(std::move(a));
  }
}

ApiResponse Api::encode(const std::string& body) const {
  return guarded([&] {
    const auto req = parse_body(body);
    const auto tokens = field<std::vector<std::string>>(req, "tokens");
    if (static_cast<int>(tokens.size()) != model_.config.seq_len) {
      return error(400, "wrong_length",
                   "expected " + std::to_string(model_.config.seq_len) + " tokens, got " + std::to_string(tokens.size()));
    }
    SequenceSample x;
    for (const auto& t : tokens) {
      auto id = vocab().id_of(t);
      if (!id) return error(400, "unknown_token", "unknown token '" + t + "'");
      x.ids.push_back(*id);
    }
    const auto post = glsr::encode(model_, x);
    const auto sigma = post.sigma();
    for (std::size_t d = 0; d < sigma.size(); ++d) {
      if (!std::isfinite(post.mu[d]) || !std::isfinite(sigma[d])) return error(422, "non_finite", "posterior is not finite");
    }
    return ok(Json{{"mu", post.mu}, {"sigma", sigma}});
  });
}

ApiResponse Api::decode(const std::string& body) const {
  return guarded([&] {
    const auto req = parse_body(body);
    const auto z = latent_field(req, model_.config.latent_dim);
    const std::string mode = req.contains("mode") ? field<std::string>(req, "mode") : "argmax";
    SequenceSample x;
    bool deterministic = true;
    if (mode == "argmax") {
      x = argmax_decode(model_, z);
    } else if (mode == "sample") {
      std::uint64_t seed;
      if (req.contains("seed")) {
        seed = field<std::uint64_t>(req, "seed");
      } else {
        seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
        deterministic = false;
      }
      x = sample_decode(model_, z, seed);
    } else {
      return error(400, "bad_mode", "mode must be 'argmax' or 'sample'");
    }
    Json attrs = Json::object();
    attrs[g_attribute_.name] = attribute_value(g_attribute_, x);
    for (const auto& a : attributes_) {
      if (a.name == "accidental_class") {
        attrs[a.name] = to_string(accidental_class(vocab(), x));
      } else {
        attrs[a.name] = attribute_value(a, x);
      }
    }
    return ok(Json{{"tokens", tokens_json(x, vocab())},
               {"g", attribute_value(g_attribute_, x)},
               {"attributes", attrs},
               {"deterministic", deterministic}});
  });
}

ApiResponse Api::walk(const std::string& body) const {
  return guarded([&] {
    const auto req = parse_body(body);
    const auto z = latent_field(req, model_.config.latent_dim);
    const int dim = field<int>(req, "dim");
    const double step = field<double>(req, "step");
    const int count = field<int>(req, "count");
    if (dim < 0 || dim >= model_.config.latent_dim) return error(400, "out_of_range", "dim out of range");
    if (count < 1 || count > kMaxWalkCount) {
      return error(400, "limit_exceeded", "count must lie in [1, " + std::to_string(kMaxWalkCount) + "]");
    }
    if (!std::isfinite(step)) return error(400, "non_finite", "step must be finite");
    const auto steps = latent_walk(model_, z, dim, step, count, g_attribute_);
    Json out = Json::array();
    for (const auto& s : steps) out.push_back({{"z", s.z.z}, {"tokens", tokens_json(s.tokens, vocab())}, {"g", s.g}});
    return ok(Json{{"steps", out}});
  });
}

ApiResponse Api::sample(const std::string& body) const {
  return guarded([&] {
    const auto req = parse_body(body);
    const int n = field<int>(req, "n");
    const auto seed = field<std::uint64_t>(req, "seed");
    if (n < 1 || n > kMaxSampleCount) {
      return error(400, "limit_exceeded", "n must lie in [1, " + std::to_string(kMaxSampleCount) + "]");
    }
    Json items = Json::array();
    for (int i = 0; i < n; ++i) {
      const auto z = sample_prior(model_.config.latent_dim, mix_seed(seed, static_cast<std::uint64_t>(i)));
      const auto x = argmax_decode(model_, z);
      items.push_back({{"z", z.z}, {"tokens", tokens_json(x, vocab())}, {"g", attribute_value(g_attribute_, x)}});
    }
    return ok(Json{{"items", items}});
  });
}

ApiResponse Api::info() const {
  Json reg = Json::array();
  for (const auto& r : checkpoint_.config.reg) {
    reg.push_back({{"dim", r.dim}, {"attribute", r.attribute}, {"r_mu", r.r_mu}, {"r_sigma", r.r_sigma}});
  }
  const auto& v = vocab();
  return ok(Json{{"D", model_.config.latent_dim},
             {"T", model_.config.seq_len},
             {"A", model_.config.vocab_size},
             {"vocab", {{"tokens", v.tokens()}, {"hold", v.token(v.hold_id())}, {"rest", v.rest_id() ? Json(v.token(*v.rest_id())) : Json(nullptr)}}},
             {"reg_dims", reg},
             {"g_attribute", g_attribute_.name},
             {"limits", {{"walk_count", kMaxWalkCount}, {"sample_n", kMaxSampleCount}, {"scan_res", kMaxScanResolution}}},
             {"model", {{"hidden", model_.config.hidden}, {"layers", model_.config.layers}, {"embed", model_.config.embed}}}});
}

ApiResponse Api::scan(const std::map<std::string, std::string>& query) const {
  return guarded([&] {
    auto get_int = [&](const char* key, int fallback) {
      auto it = query.find(key);
      if (it == query.end()) return fallback;
      std::size_t used = 0;
      const int v = std::stoi(it->second, &used);
      if (used != it->second.size()) throw BadRequest{"bad_request", std::string("bad integer for ") + key};
      return v;
    };
    ScanOptions opt;
    opt.dim_x = get_int("dim_x", 0);
    opt.dim_y = get_int("dim_y", 1);
    opt.resolution = get_int("res", 41);
    double range = 4.0;
    if (auto it = query.find("range"); it != query.end()) {
      std::size_t used = 0;
      range = std::stod(it->second, &used);
      if (used != it->second.size() || !std::isfinite(range) || range <= 0.0) {
        return error(400, "bad_request", "range must be a positive number");
      }
    }
    if (opt.resolution < 2 || opt.resolution > kMaxScanResolution) {
      return error(400, "limit_exceeded", "res must lie in [2, " + std::to_string(kMaxScanResolution) + "]");
    }
    const int dims = model_.config.latent_dim;
    if (opt.dim_x < 0 || opt.dim_x >= dims || opt.dim_y < 0 || opt.dim_y >= dims || opt.dim_x == opt.dim_y) {
      return error(400, "out_of_range", "dim_x and dim_y must be distinct dims below " + std::to_string(dims));
    }
    opt.lo = -range;
    opt.hi = range;
    return ApiResponse{200, scan_to_json(plane_scan(model_, opt, g_attribute_, attributes_))};
  });
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const Api& api) : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  const Api* a = &api;
  srv.Post("/encode", [a, reply](const httplib::Request& req, httplib::Response& res) { reply(res, a->encode(req.body)); });
  srv.Post("/decode", [a, reply](const httplib::Request& req, httplib::Response& res) { reply(res, a->decode(req.body)); });
  srv.Post("/walk", [a, reply](const httplib::Request& req, httplib::Response& res) { reply(res, a->walk(req.body)); });
  srv.Post("/sample", [a, reply](const httplib::Request& req, httplib::Response& res) { reply(res, a->sample(req.body)); });
  srv.Get("/info", [a, reply](const httplib::Request&, httplib::Response& res) { reply(res, a->info()); });
  srv.Get("/scan", [a, reply](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    reply(res, a->scan(query));
  });
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.set_error_handler([reply](const httplib::Request&, httplib::Response& res) {
    if (res.status == 404) reply(res, error(404, "not_found", "no such endpoint"));
  });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HttpServer::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace glsr
