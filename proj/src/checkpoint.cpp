#include <cstdio>
#include <fstream>
#include <sstream>

#include "glsr/trainer.hpp"
#include "json.hpp"

namespace glsr {

namespace {

using Json = nlohmann::ordered_json;

Json config_json(const TrainConfig& c) {
  Json j;
  j["latent_dim"] = c.latent_dim;
  j["hidden"] = c.hidden;
  j["layers"] = c.layers;
  j["embed"] = c.embed;
  j["dropout"] = c.dropout;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["ramp_steps"] = c.ramp_steps;
  Json reg = Json::array();
  for (const auto& r : c.reg) {
    reg.push_back({{"dim", r.dim}, {"attribute", r.attribute}, {"r_mu", r.r_mu}, {"r_sigma", r.r_sigma}});
  }
  j["reg"] = reg;
  j["fd_step"] = c.fd_step;
  j["patience"] = c.patience;
  j["clip_norm"] = c.clip_norm;
  j["init_seed"] = c.init_seed;
  j["shuffle_seed"] = c.shuffle_seed;
  j["eps_seed"] = c.eps_seed;
  j["deterministic"] = c.deterministic;
  j["workers"] = c.workers;
  return j;
}

// Missing keys keep their defaults, so a config file may list only overrides.
TrainConfig config_from(const Json& j) {
  TrainConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.embed = j.value("embed", c.embed);
  c.dropout = j.value("dropout", c.dropout);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.ramp_steps = j.value("ramp_steps", c.ramp_steps);
  if (j.contains("reg")) {
    c.reg.clear();
    for (const auto& r : j["reg"]) {
      RegConfig rc;
      rc.dim = r.value("dim", rc.dim);
      rc.attribute = r.value("attribute", rc.attribute);
      rc.r_mu = r.value("r_mu", rc.r_mu);
      rc.r_sigma = r.value("r_sigma", rc.r_sigma);
      c.reg.push_back(rc);
    }
  }
  c.fd_step = j.value("fd_step", c.fd_step);
  c.patience = j.value("patience", c.patience);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  c.eps_seed = j.value("eps_seed", c.eps_seed);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.workers = j.value("workers", c.workers);
  return c;
}

Json report_json(const LossReport& r) {
  return {{"recon", r.recon}, {"kl", r.kl}, {"glsr", r.glsr}, {"beta", r.beta}, {"total", r.total}, {"partials", r.partials}};
}

LossReport report_from(const Json& j) {
  LossReport r;
  r.recon = j.at("recon").get<double>();
  r.kl = j.at("kl").get<double>();
  r.glsr = j.at("glsr").get<double>();
  r.beta = j.at("beta").get<double>();
  r.total = j.at("total").get<double>();
  r.partials = j.at("partials").get<std::vector<double>>();
  return r;
}

Json record_json(const EpochRecord& e, bool with_wall_time) {
  Json j;
  j["epoch"] = e.epoch;
  j["train"] = report_json(e.train);
  j["val"] = report_json(e.validation);
  j["val_accuracy"] = e.validation_accuracy;
  if (with_wall_time) j["wall_seconds"] = e.wall_seconds;
  return j;
}

Json grad_json(const Grad& g, const ParamTree& params) {
  Json j = Json::object();
  for (std::size_t i = 0; i < g.leaves.size(); ++i) j[params.at(i).path] = g.leaves[i];
  return j;
}

Grad grad_from(const Json& j, const ParamTree& params) {
  Grad g = Grad::zeros_like(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = j.at(params.at(i).path).get<std::vector<double>>();
    if (v.size() != g.leaves[i].size()) throw CheckpointError("optimizer state shape mismatch at " + params.at(i).path);
    g.leaves[i] = std::move(v);
  }
  return g;
}

}  // namespace

std::string to_json(const TrainConfig& config) { return config_json(config).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    return config_from(Json::parse(text));
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("bad train config: ") + e.what());
  }
}

std::string to_json(const EpochRecord& record, bool with_wall_time) { return record_json(record, with_wall_time).dump(); }

std::string checkpoint_to_json(const Checkpoint& ck) {
  Json doc;
  doc["version"] = kCheckpointVersion;
  Json config = config_json(ck.config);
  config["model"] = {{"vocab_size", ck.model.vocab_size}, {"seq_len", ck.model.seq_len},
                     {"latent_dim", ck.model.latent_dim}, {"hidden", ck.model.hidden},
                     {"layers", ck.model.layers},         {"embed", ck.model.embed},
                     {"dropout", ck.model.dropout}};
  config["vocab"] = {{"tokens", ck.vocab.tokens()},
                     {"hold", ck.vocab.token(ck.vocab.hold_id())},
                     {"rest", ck.vocab.rest_id() ? Json(ck.vocab.token(*ck.vocab.rest_id())) : Json(nullptr)}};
  doc["config"] = std::move(config);

  Json params = Json::object();
  for (const auto& leaf : ck.params) params[leaf.path] = {{"shape", leaf.shape}, {"data", leaf.data}};
  doc["params"] = std::move(params);

  Json opt;
  opt["step"] = ck.optimizer.step;
  if (!ck.optimizer.m.leaves.empty()) {
    opt["m"] = grad_json(ck.optimizer.m, ck.params);
    opt["v"] = grad_json(ck.optimizer.v, ck.params);
  }
  doc["optimizer_state"] = std::move(opt);

  const auto& s = ck.state;
  doc["trainer_state"] = {{"epochs_done", s.epochs_done},
                          {"global_step", s.global_step},
                          {"ramp_steps", s.ramp_steps},
                          {"best_validation", s.best_validation ? Json(*s.best_validation) : Json(nullptr)},
                          {"best_epoch", s.best_epoch},
                          {"stale_epochs", s.stale_epochs},
                          {"stopped", s.stopped}};

  Json history = Json::array();
  for (const auto& e : ck.history) history.push_back(record_json(e, false));
  doc["history"] = std::move(history);
  return doc.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  try {
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    const auto& config = doc.at("config");
    ck.config = config_from(config);
    const auto& m = config.at("model");
    ck.model.vocab_size = m.at("vocab_size").get<int>();
    ck.model.seq_len = m.at("seq_len").get<int>();
    ck.model.latent_dim = m.at("latent_dim").get<int>();
    ck.model.hidden = m.at("hidden").get<int>();
    ck.model.layers = m.at("layers").get<int>();
    ck.model.embed = m.at("embed").get<int>();
    ck.model.dropout = m.at("dropout").get<double>();
    const auto& v = config.at("vocab");
    std::optional<std::string> rest;
    if (!v.at("rest").is_null()) rest = v["rest"].get<std::string>();
    ck.vocab = TokenVocab(v.at("tokens").get<std::vector<std::string>>(), v.at("hold").get<std::string>(), rest);
    if (ck.vocab.size() != ck.model.vocab_size) throw CheckpointError("vocabulary size disagrees with model config");

    // Leaf order comes from the model layout, not from the file.
    const auto layout = model_layout(ck.model);
    ck.params = init_params(layout, 0);
    const auto& params = doc.at("params");
    if (params.size() != ck.params.size()) throw CheckpointError("parameter leaf count mismatch");
    for (auto& leaf : ck.params) {
      const auto& entry = params.at(leaf.path);
      if (entry.at("shape").get<std::vector<int>>() != leaf.shape) throw CheckpointError("shape mismatch at " + leaf.path);
      auto data = entry.at("data").get<std::vector<double>>();
      if (data.size() != leaf.data.size()) throw CheckpointError("data size mismatch at " + leaf.path);
      leaf.data = std::move(data);
    }

    const auto& opt = doc.at("optimizer_state");
    ck.optimizer.step = opt.at("step").get<std::int64_t>();
    if (opt.contains("m")) {
      ck.optimizer.m = grad_from(opt["m"], ck.params);
      ck.optimizer.v = grad_from(opt.at("v"), ck.params);
    }

    const auto& s = doc.at("trainer_state");
    ck.state.epochs_done = s.at("epochs_done").get<int>();
    ck.state.global_step = s.at("global_step").get<long long>();
    ck.state.ramp_steps = s.at("ramp_steps").get<long long>();
    if (!s.at("best_validation").is_null()) ck.state.best_validation = s["best_validation"].get<double>();
    ck.state.best_epoch = s.at("best_epoch").get<int>();
    ck.state.stale_epochs = s.at("stale_epochs").get<int>();
    ck.state.stopped = s.at("stopped").get<bool>();

    for (const auto& e : doc.at("history")) {
      EpochRecord r;
      r.epoch = e.at("epoch").get<int>();
      r.train = report_from(e.at("train"));
      r.validation = report_from(e.at("val"));
      r.validation_accuracy = e.at("val_accuracy").get<double>();
      ck.history.push_back(std::move(r));
    }
    return ck;
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const CorpusError& e) {
    throw CheckpointError(std::string("corrupt checkpoint vocabulary: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out << checkpoint_to_json(checkpoint);
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace glsr
