// Acceptance run: the full synthetic pipeline twice through the CLI, plus
// independent gradient and format checks. One PASS/FAIL line per criterion.
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "oracles.hpp"
#include "saeboost/repro.hpp"
#include "saeboost/selfcheck.hpp"
#include "saeboost/shard_io.hpp"
#include "saeboost/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace saeboost;

namespace {

struct Line {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_pipeline(const fs::path& out, const std::string& spec) {
  fs::remove_all(out);
  const std::string extra = spec.empty() ? "" : " --spec \"" + spec + "\"";
  const std::string cmd = std::string("\"") + SAEBOOST_CLI_PATH + "\" --deterministic --seed 7 repro paper-pattern" + extra +
                          " --out \"" + out.string() + "\" >\"" + out.string() + ".log\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<double> flatten(const Gradients<double>& g) {
  std::vector<double> out(g.w_enc.values().begin(), g.w_enc.values().end());
  out.insert(out.end(), g.b_enc.begin(), g.b_enc.end());
  out.insert(out.end(), g.w_dec.values().begin(), g.w_dec.values().end());
  if (g.b_dec) out.insert(out.end(), g.b_dec->begin(), g.b_dec->end());
  return out;
}

Line oracle_gradients() {
  std::size_t partials = 0, failures = 0;
  double worst_rel = 0.0, worst_abs = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const oracle::Tiny t = oracle::random_tiny(7000 + s);
    const auto lg = compute_loss_and_grads<double>(t.sae, t.x, t.target, t.l1);
    const auto fd = oracle::finite_differences(t, flatten(lg.grads), 1e-3, 1e-4, 1e-6);
    partials += fd.partials;
    failures += fd.failures;
    worst_rel = std::max(worst_rel, fd.worst_rel);
    worst_abs = std::max(worst_abs, fd.worst_abs);
  }
  std::ostringstream os;
  os << "independent oracle: 20 instances, " << partials << " partials, " << failures << " outside 1e-4 rel / 1e-6 abs"
     << " (worst abs " << worst_abs << ", worst rel " << worst_rel << ")";
  return {"gradient oracle", failures == 0 && partials > 0, os.str()};
}

bool same_params(const SaeParams& a, const SaeParams& b) {
  if (a.role != b.role || !bitwise_equal(a.w_enc, b.w_enc) || !bitwise_equal(a.w_dec, b.w_dec)) return false;
  if (!bitwise_equal<float>(a.b_enc, b.b_enc) || a.b_dec.has_value() != b.b_dec.has_value()) return false;
  if (a.b_dec && !bitwise_equal<float>(*a.b_dec, *b.b_dec)) return false;
  if (a.activation.index() != b.activation.index()) return false;
  if (const auto* t = std::get_if<BatchTopK>(&a.activation)) return t->k == std::get<BatchTopK>(b.activation).k;
  return bitwise_equal<float>(std::get<JumpRelu>(a.activation).thresholds,
                              std::get<JumpRelu>(b.activation).thresholds);
}

Line format_round_trips(const fs::path& scratch) {
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  std::size_t ok = 0, residuals = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const SaeParams p = random_params(9000 + s);
    if (!p.b_dec) ++residuals;
    const std::string ckpt = (scratch / "m.saec").string();
    save_checkpoint(ckpt, p, {{"instance", s}});
    const Checkpoint back = load_checkpoint(ckpt);
    const bool ckpt_ok = same_params(back.params, p) && serialize_checkpoint(back.params, back.provenance) == slurp(ckpt);

    Rng rng(derive_seed(9000, s));
    Matrix rows(1 + rng.next_u64() % 40, 1 + rng.next_u64() % 16);
    for (auto& v : rows.values()) v = static_cast<float>(rng.normal());
    const std::string shard = (scratch / "x.saea").string();
    write_shard(shard, rows, {"dom", "model", "layer", std::to_string(s)});
    const ActivationShard read = read_shard(shard);
    const bool shard_ok = bitwise_equal(read.data, rows) && read.meta.notes == std::to_string(s);
    if (ckpt_ok && shard_ok) ++ok;
  }
  fs::remove_all(scratch);
  return {"format round-trips", ok == 100 && residuals > 0,
          "independent check: " + std::to_string(ok) + "/100 shard+checkpoint pairs bitwise identical, " +
              std::to_string(residuals) + " residual checkpoints without b_dec"};
}

Line determinism(const fs::path& a, const fs::path& b) {
  const auto fa = list_files(a.string());
  const auto fb = list_files(b.string());
  if (fa != fb) return {"determinism", false, "runs wrote different file sets"};
  std::size_t compared = 0;
  for (const auto& f : fa) {
    // The manifest records the output directory, which differs between runs.
    if (f == "manifest.json") continue;
    if (slurp(a / f) != slurp(b / f)) return {"determinism", false, f + " differs between runs"};
    ++compared;
  }
  return {"determinism", compared > 0,
          std::to_string(compared) + " checkpoints and reports byte-identical across two --seed 7 runs"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <work-dir> [pipeline-spec.json]\n";
    return 2;
  }
  const fs::path work = argv[1];
  const std::string spec = argc > 2 ? argv[2] : "";
  fs::create_directories(work);
  const fs::path run1 = work / "run1";
  const fs::path run2 = work / "run2";

  const int rc1 = run_pipeline(run1, spec);
  const int rc2 = run_pipeline(run2, spec);
  if ((rc1 != 0 && rc1 != 5) || (rc2 != 0 && rc2 != 5) || !fs::exists(run1 / "summary.json")) {
    std::cout << "FAIL pipeline: CLI exited with " << rc1 << " and " << rc2 << "; see " << run1.string() << ".log\n";
    return 1;
  }

  const json summary = json::parse(slurp(run1 / "summary.json"));
  std::vector<Line> lines;
  for (const auto& c : summary.at("criteria")) {
    lines.push_back({c.at("name"), c.at("passed"), c.at("detail")});
  }
  const Line grad = oracle_gradients();
  const Line trip = format_round_trips(work / "roundtrip");
  for (auto& l : lines) {
    const Line* extra = l.name == grad.name ? &grad : l.name == trip.name ? &trip : nullptr;
    if (extra == nullptr) continue;
    l.detail += "; " + extra->detail;
    l.passed = l.passed && extra->passed;
  }
  lines.push_back(determinism(run1, run2));

  bool all = true;
  for (const auto& l : lines) {
    std::cout << (l.passed ? "PASS " : "FAIL ") << l.name << ": " << l.detail << '\n';
    all = all && l.passed;
  }
  std::size_t passed = 0;
  for (const auto& l : lines) passed += l.passed ? 1 : 0;
  std::cout << passed << "/" << lines.size() << " criteria passed\n";
  return all ? 0 : 1;
}
