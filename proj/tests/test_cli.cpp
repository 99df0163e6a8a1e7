#include <fstream>
#include <sstream>

#include "doctest.h"
#include "glsr/cli.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace glsr;
using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Every run starts by printing the resolved configuration as a JSON object.
Json printed_config(const Run& r) { return Json::parse(r.out.substr(0, r.out.find("\n}\n") + 2)); }

/// Number after `key` on the first output line containing `prefix`.
double printed_value(const std::string& text, const std::string& prefix, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) != 0) continue;
    const auto at = line.find(key + " ");
    if (at == std::string::npos) continue;
    return std::stod(line.substr(at + key.size() + 1));
  }
  FAIL("no '" << key << "' after '" << prefix << "'");
  return 0.0;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage") {
  const auto help = run({"--help"});
  CHECK(help.code == kExitOk);
  for (const char* sub : {"make-corpus", "train", "scan", "agg", "walk", "sample", "serve", "eval"}) {
    CHECK_MESSAGE(help.out.find(sub) != std::string::npos, sub);
  }
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"train", "--corpus", "x.json"}).code == kExitUsage);
  CHECK(run({"scan", "--checkpoint", "x.json", "--out", "o", "--res", "1"}).code == kExitUsage);
  CHECK(run({"train", "--help"}).code == kExitOk);

  const auto dir = glsr::testing::test_dir("cli_usage");
  const auto missing = run({"eval", "--checkpoint", (dir / "none.json").string(), "--corpus", (dir / "none.json").string(),
                            "--out", (dir / "o").string()});
  CHECK(missing.code == kExitRuntime);
  CHECK(missing.err.rfind("error: ", 0) == 0);
  CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);
}

TEST_CASE("end-to-end pipeline") {
  const auto dir = glsr::testing::test_dir("cli_pipeline");
  const auto p = [&](const char* name) { return (dir / name).string(); };

  auto mk = run({"make-corpus", "--seed", "4", "--n", "60", "--len", "6", "--density", "0.5", "--out", p("corpus")});
  REQUIRE(mk.code == kExitOk);
  CHECK(printed_config(mk)["subcommand"] == "make-corpus");
  CHECK(printed_config(mk)["config"]["seed"] == 4);
  const auto corpus = p("corpus/corpus.json");
  REQUIRE(fs::exists(corpus));
  const auto stats = Json::parse(slurp(p("corpus/stats.json")))["num_played_notes"];
  int counted = 0;
  for (const auto& [k, c] : stats["histogram"].items()) counted += c.get<int>();
  CHECK(counted == 60);
  CHECK(stats["mean"].get<double>() >= 1.0);
  CHECK(stats["mean"].get<double>() <= 6.0);
  REQUIRE(run({"make-corpus", "--seed", "4", "--n", "60", "--len", "6", "--density", "0.5", "--out", p("corpus2")}).code ==
          kExitOk);
  CHECK(slurp(corpus) == slurp(p("corpus2/corpus.json")));

  {
    std::ofstream cfg(p("cfg.json"));
    cfg << R"({"latent_dim": 3, "hidden": 8, "embed": 4, "batch_size": 8, "max_epochs": 2})";
  }
  const std::vector<std::string> train_args{"train", "--corpus", corpus, "--config", p("cfg.json"), "--seed", "9",
                                            "--deterministic"};
  auto with_out = [](std::vector<std::string> a, const std::string& out) {
    a.push_back("--out");
    a.push_back(out);
    return a;
  };
  const auto tr = run(with_out(train_args, p("run")));
  REQUIRE_MESSAGE(tr.code == kExitOk, tr.err);
  const auto resolved = printed_config(tr)["config"]["train"];
  CHECK(resolved["latent_dim"] == 3);
  CHECK(resolved["init_seed"] == 9);
  CHECK(resolved["eps_seed"] == 11);
  CHECK(resolved["patience"] == 5);
  for (const char* f : {"run/config.json", "run/train_log.jsonl", "run/best.json", "run/last.json"}) {
    CHECK_MESSAGE(fs::exists(p(f)), f);
  }
  REQUIRE(run(with_out(train_args, p("run2"))).code == kExitOk);
  CHECK(slurp(p("run/best.json")) == slurp(p("run2/best.json")));
  CHECK(slurp(p("run/last.json")) == slurp(p("run2/last.json")));

  const auto off = run(with_out({"train", "--corpus", corpus, "--config", p("cfg.json"), "--no-reg", "--deterministic"}, p("off")));
  REQUIRE(off.code == kExitOk);
  CHECK(printed_config(off)["config"]["train"]["reg"].empty());

  const auto best = p("run/best.json");
  const auto ev = run({"eval", "--checkpoint", best, "--compare", p("off/best.json"), "--corpus", corpus, "--agg-samples",
                       "50", "--out", p("eval")});
  REQUIRE_MESSAGE(ev.code == kExitOk, ev.err);
  const auto report = Json::parse(slurp(p("eval/report.json")));
  const auto& primary = report["primary"];
  CHECK(printed_value(ev.out, "primary:", "accuracy") == doctest::Approx(primary["reconstruction_accuracy"].get<double>()));
  CHECK(printed_value(ev.out, "primary:", "monotonicity") == doctest::Approx(primary["monotonicity"].get<double>()));
  CHECK(printed_value(ev.out, "primary:", "total") == doctest::Approx(primary["validation"]["total"].get<double>()));
  CHECK(printed_value(ev.out, "primary:", "kl") == doctest::Approx(primary["validation"]["kl"].get<double>()));
  CHECK(primary["reconstruction_accuracy"].get<double>() <= 1.0);
  CHECK(primary["decorrelation"]["correlations"].size() == 3 * 3);
  CHECK(report["accuracy_delta"].get<double>() ==
        doctest::Approx(primary["reconstruction_accuracy"].get<double>() -
                        report["compare"]["reconstruction_accuracy"].get<double>()));

  // Seeded analysis commands are byte-reproducible.
  auto twice = [&](std::vector<std::string> args, const char* a, const char* b, std::vector<const char*> files) {
    REQUIRE(run(with_out(args, p(a))).code == kExitOk);
    REQUIRE(run(with_out(args, p(b))).code == kExitOk);
    for (const char* f : files) {
      const auto x = dir / a / f;
      CHECK_MESSAGE(fs::exists(x), x.string());
      CHECK_MESSAGE(slurp(x) == slurp(dir / b / f), f);
    }
  };
  twice({"scan", "--checkpoint", best, "--compare", p("off/best.json"), "--res", "9"}, "scan", "scan2",
        {"scan.csv", "scan.json", "scan_compare.csv", "scan_compare.json"});
  twice({"agg", "--checkpoint", best, "--corpus", corpus, "--n", "100", "--seed", "3"}, "agg", "agg2",
        {"agg.csv", "agg.json", "moments.json", "decorrelation.json"});
  twice({"walk", "--checkpoint", best, "--starts", "3", "--seed", "3"}, "walk", "walk2",
        {"walk_000.csv", "walk_002.csv", "walks.json"});
  twice({"sample", "--checkpoint", best, "--n", "4", "--seed", "3"}, "sample", "sample2", {"samples.json"});

  const auto scan = Json::parse(slurp(p("scan/scan.json")));
  CHECK(scan["dim_x"] == 0);
  CHECK(scan["x_values"].size() == 9);

  // Resuming the finished run for more epochs extends the history.
  const auto resumed = run({"train", "--corpus", corpus, "--config", p("cfg.json"), "--seed", "9", "--deterministic",
                            "--resume", p("run/last.json"), "--epochs", "3", "--out", p("resumed")});
  REQUIRE(resumed.code == kExitOk);
  std::ifstream log(p("resumed/train_log.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 1);
}

TEST_CASE("two-phase preset") {
  const auto dir = glsr::testing::test_dir("cli_preset");
  const auto p = [&](const char* name) { return (dir / name).string(); };
  REQUIRE(run({"make-corpus", "--n", "30", "--len", "4", "--out", p("c")}).code == kExitOk);
  {
    std::ofstream cfg(p("cfg.json"));
    cfg << R"({"latent_dim": 2, "hidden": 4, "embed": 2, "max_epochs": 0})";
  }
  const auto tr = run({"train", "--corpus", p("c/corpus.json"), "--config", p("cfg.json"), "--preset", "two-phase", "--out",
                       p("run")});
  REQUIRE(tr.code == kExitOk);
  const auto reg = printed_config(tr)["config"]["train"]["reg"];
  REQUIRE(reg.size() == 1);
  CHECK(reg[0]["r_mu"] == 5.0);
  CHECK(reg[0]["r_sigma"] == 1.0);
}

}  // TEST_SUITE
