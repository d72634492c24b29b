#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "saeboost_cli_test";

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Result cli(const std::string& args) {
  const fs::path out = kWork / "stdout.txt";
  const fs::path err = kWork / "stderr.txt";
  const std::string cmd = std::string("\"") + SAEBOOST_CLI_PATH + "\" " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string p(const std::string& name) { return (kWork / name).string(); }

/// World plus general and domain shards, built once.
void ensure_data() {
  if (fs::exists(kWork / "dom.saea")) return;
  fs::create_directories(kWork);
  std::ofstream(p("world_spec.json"))
      << R"({"d": 12, "general_features": 20, "domains": [{"id": "dom-a", "features": 6}],
            "general_active": 3, "domain_active": 2, "max_cross_cosine": 0.8})";
  REQUIRE(cli("--seed 1 synth world --spec " + p("world_spec.json") + " --out " + p("world.json")).code == 0);
  REQUIRE(cli("--seed 2 synth gen --world " + p("world.json") + " --mix general --n 3000 --out " + p("gen.saea")).code ==
          0);
  REQUIRE(cli("--seed 3 synth gen --world " + p("world.json") + " --mix dom-a --n 2000 --out " + p("dom.saea")).code ==
          0);
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  CHECK(cli("--help").code == 0);
  CHECK(cli("").code == 2);
  CHECK(cli("--no-such-flag synth world --out x").code == 2);
  CHECK(cli("train base --out x.saec").code == 2);
  CHECK(cli("synth gen --world /does/not/exist --n 5 --out y").code == 2);
}

TEST_CASE("synthetic data is reproducible and carries a manifest") {
  ensure_data();
  CHECK(fs::exists(p("gen.saea") + ".meta.json"));
  const json m = json::parse(slurp(p("gen.saea") + ".manifest.json"));
  CHECK(m["seed"] == 2);
  REQUIRE(m["inputs"].size() == 1);
  CHECK(m["inputs"][0]["hash"].get<std::string>().size() == 40);
  REQUIRE(cli("--seed 2 synth gen --world " + p("world.json") + " --mix general --n 3000 --out " + p("gen2.saea"))
              .code == 0);
  CHECK(slurp(p("gen.saea")) == slurp(p("gen2.saea")));
}

TEST_CASE("corrupt data exits with code 3") {
  ensure_data();
  std::string bytes = slurp(p("gen.saea"));
  bytes[0] = 'Z';
  std::ofstream(p("bad.saea"), std::ios::binary) << bytes;
  const Result r = cli("train base --data " + p("bad.saea") + " --out " + p("never.saec"));
  CHECK(r.code == 3);
  CHECK(r.err.find("magic") != std::string::npos);
  CHECK_FALSE(fs::exists(p("never.saec")));
}

TEST_CASE("flags override config files") {
  ensure_data();
  std::ofstream(p("cfg.json")) << R"({"seed": 5, "train": {"base": {"k": 2, "lr": 0.01, "features": 24}}})";
  const Result r = cli("--config " + p("cfg.json") + " --deterministic train base --k 4 --samples 3000 --data " +
                       p("gen.saea") + " --out " + p("cfg_base.saec"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json m = json::parse(slurp(p("cfg_base.saec") + ".manifest.json"));
  CHECK(m["seed"] == 5);
  CHECK(m["config"]["train"]["base"]["k"] == "4");
  CHECK(m["config"]["train"]["base"]["lr"] == "0.01");
  CHECK(m["config"]["train"]["base"]["features"] == "24");
  CHECK(m["started"] == "1970-01-01T00:00:00Z");

  std::ofstream(p("cfg_bad.json")) << R"({"train": {"base": {"kk": 2}}})";
  CHECK(cli("--config " + p("cfg_bad.json") + " train base --data " + p("gen.saea") + " --out " + p("z.saec")).code ==
        2);
  std::ofstream(p("cfg_worse.json")) << R"({"train": {"base": {"k": {"x": null}}}})";
  CHECK(cli("--config " + p("cfg_worse.json") + " train base --data " + p("gen.saea") + " --out " + p("z.saec"))
            .code == 2);
}

TEST_CASE("a base, residual, calibration and eval chain runs and repeats bitwise") {
  ensure_data();
  for (const std::string tag : {"a", "b"}) {
    fs::create_directories(kWork / tag);
    const std::string base = p(tag + "/base.saec");
    const std::string res = p(tag + "/res.saec");
    REQUIRE(cli("--deterministic --seed 9 train base --features 24 --k 3 --samples 6000 --data " + p("gen.saea") +
                " --out " + base)
                .code == 0);
    REQUIRE(cli("--deterministic --seed 9 train boost --base " + base + " --features 6 --k 2 --samples 4000 --data " +
                p("dom.saea") + " --out " + res)
                .code == 0);
    REQUIRE(cli("--deterministic calibrate --model " + res + " --data " + p("dom.saea") + " --out " +
                p(tag + "/res_jr.saec"))
                .code == 0);
    const Result ev = cli("--deterministic eval --stack " + base + " --residual " + res + " --data " + p("dom.saea") +
                          " --model-id boost --out " + p("eval_" + tag));
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
  }
  for (const char* f : {"base.saec", "res.saec", "res_jr.saec"}) {
    CHECK_MESSAGE(slurp(kWork / "a" / f) == slurp(kWork / "b" / f), f);
  }
  const auto ea = fs::directory_iterator(p("eval_a"));
  std::size_t reports = 0;
  for (const auto& e : ea) {
    if (e.path().extension() != ".json" || e.path().filename() == "manifest.json") continue;
    ++reports;
    const json j = json::parse(slurp(e.path()));
    CHECK(j["model_id"] == "boost");
    CHECK(slurp(e.path()) == slurp(fs::path(p("eval_b")) / e.path().filename()));
  }
  CHECK(reports == 1);
  CHECK(fs::exists(fs::path(p("eval_a")) / "manifest.json"));

  const Result wrong = cli("eval --stack " + p("a/res.saec") + " --data " + p("dom.saea") + " --out " + p("e3"));
  CHECK(wrong.code != 0);
}

TEST_CASE("the pipeline command prints one scored line per criterion") {
  fs::create_directories(kWork);
  std::ofstream(p("pipe.json"))
      << R"({"world": {"d": 16, "general_features": 24, "domains": [{"id": "dom-a", "features": 8}],
                       "general_active": 3, "domain_active": 2, "max_cross_cosine": 0.8},
            "base_features": 32, "base_k": 3, "residual_features": 8, "residual_k": 2,
            "train_samples": 10000, "calibration_samples": 3000, "holdout_samples": 1000,
            "eval_samples": 1000, "eval_batch": 500, "seeds": 1, "sweep_ks": [1, 2],
            "equivalence_inputs": 20, "dynamics_interval": 5000, "gradient_instances": 2,
            "roundtrip_instances": 3})";
  const Result r = cli("--deterministic --seed 4 repro paper-pattern --spec " + p("pipe.json") + " --out " + p("pipe"));
  CHECK((r.code == 0 || r.code == 5));
  std::size_t lines = 0;
  for (std::size_t pos = 0; (pos = r.out.find('\n', pos)) != std::string::npos; ++pos) ++lines;
  CHECK(lines == 10);
  CHECK(r.out == slurp(fs::path(p("pipe")) / "criteria.txt"));
  CHECK(fs::exists(fs::path(p("pipe")) / "manifest.json"));

  std::ofstream(p("pipe_bad.json")) << R"({"base_kk": 3})";
  CHECK(cli("repro paper-pattern --spec " + p("pipe_bad.json") + " --out " + p("pipe2")).code == 2);
}
