#include "glsr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "glsr/latentlab.hpp"
#include "glsr/service.hpp"
#include "glsr/trainer.hpp"
#include "json.hpp"

namespace glsr {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

Json loss_json(const LossReport& r) {
  return {{"recon", r.recon}, {"kl", r.kl}, {"glsr", r.glsr}, {"beta", r.beta}, {"total", r.total}, {"partials", r.partials}};
}

AttributeSpec g_attribute_of(const Checkpoint& ck) {
  return ck.config.reg.empty() ? num_played_notes(ck.vocab) : attribute_by_name(ck.vocab, ck.config.reg[0].attribute);
}

int default_dim(const Checkpoint& ck) { return ck.config.reg.empty() ? 0 : ck.config.reg[0].dim; }

int other_dim(int dim) { return dim == 0 ? 1 : 0; }

std::vector<AttributeSpec> scan_attributes(const Checkpoint& ck, const AttributeSpec& g) {
  std::vector<AttributeSpec> out;
  for (auto& a : standard_attributes(ck.vocab)) {
    if (a.name != g.name) out.push_back(std::move(a));
  }
  return out;
}

ScanGrid scan_checkpoint(const Checkpoint& ck, int dim_x, int dim_y, double range, int res) {
  ScanOptions opt;
  opt.dim_x = dim_x < 0 ? default_dim(ck) : dim_x;
  opt.dim_y = dim_y < 0 ? other_dim(opt.dim_x) : dim_y;
  opt.lo = -range;
  opt.hi = range;
  opt.resolution = res;
  const auto g = g_attribute_of(ck);
  return plane_scan(ck.as_model(), opt, g, scan_attributes(ck, g));
}

struct Common {
  std::uint64_t seed = 1;
  bool deterministic = false;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--seed", c.seed, "Seed for every random stream")->capture_default_str();
  cmd->add_flag("--deterministic", c.deterministic, "Fixed reduction order and single-stream randomness");
  if (with_out) cmd->add_option("--out", c.out, "Output directory")->required();
}

Json common_json(const Common& c) { return {{"seed", c.seed}, {"deterministic", c.deterministic}, {"out", c.out}}; }

void print_config(std::ostream& out, const std::string& name, Json config) {
  Json j;
  j["subcommand"] = name;
  j["config"] = std::move(config);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct MakeCorpusArgs {
  Common common;
  int n = 1000;
  int n_val = 100;
  int length = 16;
  double density = 0.5;
  std::vector<double> densities;
  double val_fraction = 0.1;
};

int run_make_corpus(const MakeCorpusArgs& a, std::ostream& out) {
  Json cfg = common_json(a.common);
  cfg["n"] = a.n;
  cfg["len"] = a.length;
  if (a.densities.empty()) {
    cfg["density"] = a.density;
    cfg["val_fraction"] = a.val_fraction;
  } else {
    cfg["densities"] = a.densities;
    cfg["n_val"] = a.n_val;
  }
  cfg["scale"] = default_scale();
  print_config(out, "make-corpus", cfg);

  Corpus corpus;
  if (a.densities.empty()) {
    SynthOptions opt;
    opt.seed = a.common.seed;
    opt.n = a.n;
    opt.length = a.length;
    opt.density = a.density;
    opt.validation_fraction = a.val_fraction;
    opt.scale = default_scale();
    corpus = synth_corpus(opt);
  } else {
    corpus = mixed_density_corpus(a.common.seed, a.n, a.n_val, a.length, a.densities);
  }
  const auto dir = prepare_out(a.common.out);
  save_corpus(corpus, dir / "corpus.json");
  out << "wrote " << corpus.samples.size() << " sequences to " << (dir / "corpus.json").string() << "\n";

  // Note-count statistics, to help pick r_mu and r_sigma for the regularizer.
  const auto notes = num_played_notes(corpus.vocab);
  std::map<int, int> histogram;
  double sum = 0.0, sq = 0.0;
  for (const auto& x : corpus.samples) {
    const double v = attribute_value(notes, x);
    ++histogram[static_cast<int>(v)];
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(corpus.samples.size());
  const double mean = sum / n;
  const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
  Json hist = Json::object();
  for (const auto& [k, c] : histogram) hist[std::to_string(k)] = c;
  write_file(dir / "stats.json", Json{{"num_played_notes", {{"mean", mean}, {"std", sd}, {"histogram", hist}}}}.dump(2) + "\n");
  out << "num_played_notes mean " << mean << "  std " << sd << "  range [" << histogram.begin()->first << ", "
      << histogram.rbegin()->first << "]\n";
  return kExitOk;
}

struct TrainArgs {
  Common common;
  std::string corpus;
  std::string config;
  std::string preset;
  std::string resume;
  bool no_reg = false;
  int epochs = -1;
  int workers = -1;
};

int run_train(const TrainArgs& a, CLI::App* cmd, std::ostream& out) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : train_config_from_json(read_file(a.config));
  if (cmd->count("--seed") > 0) {
    config.init_seed = a.common.seed;
    config.shuffle_seed = a.common.seed + 1;
    config.eps_seed = a.common.seed + 2;
  }
  if (a.common.deterministic) config.deterministic = true;
  if (a.no_reg) config.reg.clear();
  if (a.preset == "two-phase") config = two_phase_preset(config);
  if (a.epochs >= 0) config.max_epochs = a.epochs;
  if (a.workers >= 0) config.workers = a.workers;
  config.validate();

  const Corpus corpus = load_corpus(a.corpus);
  Json cfg = Json::parse(to_json(config));
  print_config(out, "train", {{"corpus", a.corpus}, {"out", a.common.out}, {"train", cfg}});

  const auto dir = prepare_out(a.common.out);
  write_file(dir / "config.json", to_json(config) + "\n");
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());

  TrainOptions options;
  if (!a.resume.empty()) options.resume = load_checkpoint(a.resume);
  options.on_epoch = [&](const EpochRecord& r) {
    log << to_json(r) << "\n";
    log.flush();
    out << "epoch " << r.epoch << "  train " << r.train.total << "  val " << r.validation.total << "  val_acc "
        << r.validation_accuracy << "  beta " << r.train.beta << "  (" << r.wall_seconds << " s)\n";
    out.flush();
  };
  const auto result = train(config, corpus, options);
  save_checkpoint(result.best, dir / "best.json");
  save_checkpoint(result.last, dir / "last.json");
  out << "best epoch " << result.best.state.best_epoch << (result.last.state.stopped ? " (early stop)" : "") << "\n";
  return kExitOk;
}

struct ScanArgs {
  Common common;
  std::string checkpoint;
  std::string compare;
  int dim_x = -1;
  int dim_y = -1;
  double range = 4.0;
  int res = 41;
};

int run_scan(const ScanArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint(a.checkpoint);
  Json cfg = common_json(a.common);
  cfg["checkpoint"] = a.checkpoint;
  cfg["compare"] = a.compare.empty() ? Json(nullptr) : Json(a.compare);
  cfg["dim_x"] = a.dim_x < 0 ? default_dim(ck) : a.dim_x;
  cfg["dim_y"] = a.dim_y < 0 ? other_dim(cfg["dim_x"].get<int>()) : a.dim_y;
  cfg["range"] = a.range;
  cfg["res"] = a.res;
  print_config(out, "scan", cfg);

  const auto dir = prepare_out(a.common.out);
  const auto grid = scan_checkpoint(ck, a.dim_x, a.dim_y, a.range, a.res);
  write_file(dir / "scan.csv", scan_to_csv(grid));
  write_file(dir / "scan.json", scan_to_json(grid));
  out << "monotonicity " << monotonicity_score(grid) << "\n";
  if (!a.compare.empty()) {
    const auto other = load_checkpoint(a.compare);
    const auto grid_b = scan_checkpoint(other, a.dim_x, a.dim_y, a.range, a.res);
    write_file(dir / "scan_compare.csv", scan_to_csv(grid_b));
    write_file(dir / "scan_compare.json", scan_to_json(grid_b));
    out << "monotonicity (compare) " << monotonicity_score(grid_b) << "\n";
  }
  return kExitOk;
}

struct AggArgs {
  Common common;
  std::string checkpoint;
  std::string corpus;
  int n = 10000;
};

int run_agg(const AggArgs& a, std::ostream& out) {
  Json cfg = common_json(a.common);
  cfg["checkpoint"] = a.checkpoint;
  cfg["corpus"] = a.corpus;
  cfg["n"] = a.n;
  cfg["split"] = "train";
  print_config(out, "agg", cfg);

  const auto ck = load_checkpoint(a.checkpoint);
  const auto corpus = load_corpus(a.corpus);
  const auto samples = corpus.subset(Split::kTrain);
  const auto g = g_attribute_of(ck);
  const auto agg = aggregated_sample(ck.as_model(), samples, a.n, a.common.seed, g);
  const auto dir = prepare_out(a.common.out);
  write_file(dir / "agg.csv", agg_to_csv(agg, ck.vocab));
  write_file(dir / "agg.json", agg_to_json(agg, ck.vocab));
  const auto moments = latent_moments(agg);
  write_file(dir / "moments.json", Json{{"mean", moments.mean}, {"variance", moments.variance}}.dump(2) + "\n");
  if (agg.size() >= 30) {
    auto attrs = standard_attributes(ck.vocab);
    write_file(dir / "decorrelation.json", decorrelation_to_json(decorrelation_report(agg, attrs)));
  }
  for (std::size_t d = 0; d < moments.mean.size(); ++d) {
    out << "z" << d << "  mean " << moments.mean[d] << "  var " << moments.variance[d] << "\n";
  }
  return kExitOk;
}

struct WalkArgs {
  Common common;
  std::string checkpoint;
  int dim = -1;
  double step = 0.5;
  int count = 8;
  int starts = 20;
};

int run_walk(const WalkArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint(a.checkpoint);
  const int dim = a.dim < 0 ? default_dim(ck) : a.dim;
  Json cfg = common_json(a.common);
  cfg["checkpoint"] = a.checkpoint;
  cfg["dim"] = dim;
  cfg["step"] = a.step;
  cfg["count"] = a.count;
  cfg["starts"] = a.starts;
  print_config(out, "walk", cfg);

  const auto model = ck.as_model();
  const auto g = g_attribute_of(ck);
  const auto dir = prepare_out(a.common.out);
  Json walks = Json::array();
  double fraction_sum = 0.0;
  for (int i = 0; i < a.starts; ++i) {
    const auto z0 = sample_prior(model.config.latent_dim, mix_seed(a.common.seed, static_cast<std::uint64_t>(i)));
    const auto walk = latent_walk(model, z0, dim, a.step, a.count, g);
    char name[32];
    std::snprintf(name, sizeof name, "walk_%03d.csv", i);
    write_file(dir / name, walk_to_csv(walk, ck.vocab));
    const double f = nondecreasing_fraction(walk);
    fraction_sum += f;
    Json w = Json::parse(walk_to_json(walk, ck.vocab));
    w["nondecreasing_fraction"] = f;
    walks.push_back(std::move(w));
  }
  const double overall = a.starts > 0 ? fraction_sum / a.starts : 0.0;
  write_file(dir / "walks.json", Json{{"dim", dim}, {"nondecreasing_fraction", overall}, {"walks", walks}}.dump(2) + "\n");
  out << "nondecreasing fraction " << overall << "\n";
  return kExitOk;
}

struct SampleArgs {
  Common common;
  std::string checkpoint;
  int n = 16;
};

int run_sample(const SampleArgs& a, std::ostream& out) {
  Json cfg = common_json(a.common);
  cfg["checkpoint"] = a.checkpoint;
  cfg["n"] = a.n;
  print_config(out, "sample", cfg);

  const Api api(load_checkpoint(a.checkpoint));
  const auto r = api.sample(Json{{"n", a.n}, {"seed", a.common.seed}}.dump());
  if (r.status != 200) throw std::runtime_error(Json::parse(r.body).value("detail", "sampling failed"));
  const auto dir = prepare_out(a.common.out);
  write_file(dir / "samples.json", Json::parse(r.body).dump(2) + "\n");
  for (const auto& item : Json::parse(r.body)["items"]) {
    std::string line;
    for (const auto& t : item["tokens"]) line += t.get<std::string>() + " ";
    out << line << " g=" << item["g"].get<double>() << "\n";
  }
  return kExitOk;
}

struct ServeArgs {
  Common common;
  std::string checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int run_serve(const ServeArgs& a, std::ostream& out) {
  Json cfg = common_json(a.common);
  cfg.erase("out");
  cfg["checkpoint"] = a.checkpoint;
  cfg["host"] = a.host;
  cfg["port"] = a.port;
  print_config(out, "serve", cfg);

  const Api api(load_checkpoint(a.checkpoint));
  HttpServer server(api);
  out << "listening on http://" << a.host << ":" << a.port << "\n";
  out.flush();
  if (!server.listen(a.host, a.port)) throw std::runtime_error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string compare;
  std::string corpus;
  int agg_samples = 1000;
};

Json eval_report(const std::string& path, const Corpus& corpus, const EvalArgs& a) {
  const auto ck = load_checkpoint(path);
  if (ck.vocab != corpus.vocab || ck.model.seq_len != corpus.seq_len) {
    throw std::runtime_error("corpus does not match the vocabulary or length of " + path);
  }
  auto samples = corpus.subset(Split::kValidation);
  if (samples.empty()) samples = corpus.subset(Split::kTrain);
  const auto model = ck.as_model();
  const auto spec = reg_spec(ck.config, ck.vocab);
  const auto g = g_attribute_of(ck);

  Json r;
  r["checkpoint"] = path;
  r["reconstruction_accuracy"] = reconstruction_accuracy(model, samples);
  r["validation"] = loss_json(validation_objective(model, samples, spec, ck.config.eps_seed));
  const auto grid = scan_checkpoint(ck, -1, -1, 4.0, 41);
  r["monotonicity"] = monotonicity_score(grid);
  const auto train_set = corpus.subset(Split::kTrain);
  const auto agg = aggregated_sample(model, train_set.empty() ? samples : train_set, a.agg_samples, a.common.seed, g);
  if (agg.size() >= 30) {
    auto attrs = standard_attributes(ck.vocab);
    r["decorrelation"] = Json::parse(decorrelation_to_json(decorrelation_report(agg, attrs)));
  }
  return r;
}

void print_report(std::ostream& out, const std::string& label, const Json& r) {
  const auto& v = r["validation"];
  out << label << ": accuracy " << r["reconstruction_accuracy"].get<double>() << "  monotonicity "
      << r["monotonicity"].get<double>() << "\n";
  out << label << ": val total " << v["total"].get<double>() << "  recon " << v["recon"].get<double>() << "  kl "
      << v["kl"].get<double>() << "  glsr " << v["glsr"].get<double>() << "\n";
  if (!r.contains("decorrelation")) return;
  // One row per numeric attribute, one column per latent dim.
  std::map<std::string, std::vector<double>> rows;
  for (const auto& e : r["decorrelation"]["correlations"]) {
    rows[e["attribute"].get<std::string>()].push_back(e["correlation"].get<double>());
  }
  for (const auto& [name, row] : rows) {
    out << label << ": corr " << name;
    for (double c : row) out << ' ' << c;
    out << "\n";
  }
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  Json cfg = common_json(a.common);
  cfg["checkpoint"] = a.checkpoint;
  cfg["compare"] = a.compare.empty() ? Json(nullptr) : Json(a.compare);
  cfg["corpus"] = a.corpus;
  cfg["agg_samples"] = a.agg_samples;
  cfg["scan"] = {{"range", 4.0}, {"res", 41}};
  print_config(out, "eval", cfg);

  const auto corpus = load_corpus(a.corpus);
  Json report;
  report["primary"] = eval_report(a.checkpoint, corpus, a);
  print_report(out, "primary", report["primary"]);
  if (!a.compare.empty()) {
    report["compare"] = eval_report(a.compare, corpus, a);
    print_report(out, "compare", report["compare"]);
    report["accuracy_delta"] = report["primary"]["reconstruction_accuracy"].get<double>() -
                               report["compare"]["reconstruction_accuracy"].get<double>();
    report["monotonicity_delta"] =
        report["primary"]["monotonicity"].get<double>() - report["compare"]["monotonicity"].get<double>();
    out << "accuracy delta " << report["accuracy_delta"].get<double>() << "\n";
  }
  const auto dir = prepare_out(a.common.out);
  write_file(dir / "report.json", report.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent-space regularized sequence VAE toolkit", "glsr"};
  app.require_subcommand(1);

  MakeCorpusArgs mk;
  auto* c_mk = app.add_subcommand("make-corpus", "Generate a seeded synthetic melody corpus");
  add_common(c_mk, mk.common);
  c_mk->add_option("--n", mk.n, "Sequences (training sequences with --densities)")->capture_default_str();
  c_mk->add_option("--n-val", mk.n_val, "Validation sequences with --densities")->capture_default_str();
  c_mk->add_option("--len", mk.length, "Sequence length T")->capture_default_str();
  c_mk->add_option("--density", mk.density, "Onset probability per step")->capture_default_str();
  c_mk->add_option("--densities", mk.densities, "Mix of densities, e.g. 0.2,0.5,0.8")->delimiter(',');
  c_mk->add_option("--val-fraction", mk.val_fraction, "Validation fraction")->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model and write checkpoints");
  add_common(c_tr, tr.common);
  c_tr->add_option("--corpus", tr.corpus, "Corpus JSON")->required();
  c_tr->add_option("--config", tr.config, "TrainConfig JSON; flags override it");
  c_tr->add_option("--preset", tr.preset, "Named preset")->check(CLI::IsMember({"two-phase"}));
  c_tr->add_option("--resume", tr.resume, "Continue from a checkpoint");
  c_tr->add_flag("--no-reg", tr.no_reg, "Disable the latent regularizer");
  c_tr->add_option("--epochs", tr.epochs, "Override max_epochs");
  c_tr->add_option("--workers", tr.workers, "Worker threads (0 = all cores)");

  ScanArgs sc;
  auto* c_sc = app.add_subcommand("scan", "Plane scan of the decoded attribute");
  add_common(c_sc, sc.common);
  c_sc->add_option("--checkpoint", sc.checkpoint)->required();
  c_sc->add_option("--compare", sc.compare, "Second checkpoint scanned with the same grid");
  c_sc->add_option("--dim-x", sc.dim_x, "Horizontal dim (default: regularized dim)");
  c_sc->add_option("--dim-y", sc.dim_y, "Vertical dim");
  c_sc->add_option("--range", sc.range)->capture_default_str();
  c_sc->add_option("--res", sc.res)->capture_default_str()->check(CLI::Range(2, kMaxScanResolution));

  AggArgs ag;
  auto* c_ag = app.add_subcommand("agg", "Samples from the aggregated posterior");
  add_common(c_ag, ag.common);
  c_ag->add_option("--checkpoint", ag.checkpoint)->required();
  c_ag->add_option("--corpus", ag.corpus)->required();
  c_ag->add_option("--n", ag.n)->capture_default_str()->check(CLI::PositiveNumber);

  WalkArgs wk;
  auto* c_wk = app.add_subcommand("walk", "Straight-line walks along one latent dim from prior draws");
  add_common(c_wk, wk.common);
  c_wk->add_option("--checkpoint", wk.checkpoint)->required();
  c_wk->add_option("--dim", wk.dim, "Walk dim (default: regularized dim)");
  c_wk->add_option("--step", wk.step)->capture_default_str();
  c_wk->add_option("--count", wk.count)->capture_default_str()->check(CLI::Range(1, kMaxWalkCount));
  c_wk->add_option("--starts", wk.starts)->capture_default_str()->check(CLI::PositiveNumber);

  SampleArgs sm;
  auto* c_sm = app.add_subcommand("sample", "Decode prior draws");
  add_common(c_sm, sm.common);
  c_sm->add_option("--checkpoint", sm.checkpoint)->required();
  c_sm->add_option("--n", sm.n)->capture_default_str()->check(CLI::Range(1, kMaxSampleCount));

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "Serve the HTTP API");
  add_common(c_sv, sv.common, false);
  c_sv->add_option("--checkpoint", sv.checkpoint)->required();
  c_sv->add_option("--host", sv.host)->capture_default_str();
  c_sv->add_option("--port", sv.port)->capture_default_str();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Metrics report for one checkpoint or a pair");
  add_common(c_ev, ev.common);
  c_ev->add_option("--checkpoint", ev.checkpoint)->required();
  c_ev->add_option("--compare", ev.compare, "Baseline checkpoint for paired metrics");
  c_ev->add_option("--corpus", ev.corpus)->required();
  c_ev->add_option("--agg-samples", ev.agg_samples)->capture_default_str()->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*c_mk) return run_make_corpus(mk, out);
    if (*c_tr) return run_train(tr, c_tr, out);
    if (*c_sc) return run_scan(sc, out);
    if (*c_ag) return run_agg(ag, out);
    if (*c_wk) return run_walk(wk, out);
    if (*c_sm) return run_sample(sm, out);
    if (*c_sv) return run_serve(sv, out);
    if (*c_ev) return run_eval(ev, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace glsr
