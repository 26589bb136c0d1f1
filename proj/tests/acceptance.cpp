// Acceptance run: one PASS/FAIL line per criterion.
// Usage: pgn_acceptance <path to pgn CLI> <work dir>

#include <openssl/evp.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "pgn/bundle.hpp"
#include "pgn/gradnorm.hpp"
#include "pgn/metamodel.hpp"
#include "pgn/metrics.hpp"
#include "pgn/npy.hpp"
#include "pgn/oracle.hpp"
#include "pgn/rng.hpp"
#include "pgn/runtime.hpp"
#include "pgn/segments.hpp"
#include "pgn/toynet.hpp"

namespace fs = std::filesystem;
using namespace pgn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(const std::string& id, const std::string& title, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << title << "): " << o.detail << std::endl;
  if (!o.pass) ++g_failures;
}

void note(const std::string& id, const std::string& title, const Outcome& o) {
  std::cout << "      " << (o.pass ? "PASS" : "FAIL") << "  " << id << " (" << title << "): " << o.detail
            << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. closed forms vs central differences

const HeadDims kOracleDims{4, 6, 5, 8, 8};
constexpr int kOracleSeeds = 20;

struct OracleSweep {
  double max_err = 0.0;
  double grad_err = 0.0;
  std::size_t excluded = 0, compared = 0;
  bool all_passed = true;
};

OracleSweep oracle_sweep(const std::vector<OracleRoute>& routes) {
  OracleSweep s;
  for (int seed = 1; seed <= kOracleSeeds; ++seed) {
    const SyntheticInstance inst = gen_synthetic(static_cast<std::uint64_t>(seed), kOracleDims);
    CheckOptions opt;
    opt.routes = routes;
    const OracleReport r = check_closed_form(inst.params, inst.psi_prev, opt);
    s.max_err = std::max(s.max_err, r.max_rel_err);
    s.all_passed = s.all_passed && r.passed;
    for (const auto& c : r.configs) {
      s.grad_err = std::max(s.grad_err, c.grad_max_rel_err);
      if (c.layer == Layer::Penultimate) {
        s.excluded += c.pixels_excluded;
        s.compared += c.pixels_compared;
      }
    }
  }
  return s;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const OracleSweep literal = oracle_sweep({{LabelFactor::Pgn, FdTarget::PixelLoss}});
  const OracleSweep linearized = oracle_sweep({{LabelFactor::Pgn, FdTarget::LinearizedLoss}});
  const OracleSweep exact = oracle_sweep({{LabelFactor::Exact, FdTarget::PixelLoss}});
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = literal.all_passed && secs < 120.0;
  o.detail = std::to_string(kOracleSeeds) + " seeds, oh+uni, last+penult: PGN closed form vs pixel-loss finite " +
             "differences max_rel_err " + fmt(literal.max_err) + " (gradients alone " + fmt(literal.grad_err) + ", tolerance 1e-4), total " + fmt(secs) + " s";
  report("1", "oracle equivalence", o);
  note("1a", "PGN closed form vs finite differences of the loss linearised at the PGN label factor",
       {linearized.all_passed, "max_rel_err " + fmt(linearized.max_err) + " (gradients alone " + fmt(linearized.grad_err) + ")"});
  note("1b", "softmax-minus-label closed form vs pixel-loss finite differences",
       {exact.all_passed, "max_rel_err " + fmt(exact.max_err) + " (gradients alone " + fmt(exact.grad_err) + ")"});
  note("1c", "penultimate pixels excluded near a ReLU kink",
       {true, std::to_string(linearized.excluded) + " of " +
                  std::to_string(linearized.excluded + linearized.compared) + " pixel checks"});
}

// ---------------------------------------------------------------------------
// 2. factored p-norm vs materialized outer product

void criterion2() {
  SplitMix64 rng(2024);
  double worst = 0.0;
  for (int pair = 0; pair < 1000; ++pair) {
    const std::size_t a = 1 + rng.below(20), b = 1 + rng.below(40);
    Tensor S({a, 1, 1}), Psi({b, 1, 1});
    for (auto& v : S.data()) v = rng.uniform(-3.0, 3.0);
    for (auto& v : Psi.data()) v = rng.uniform(-3.0, 3.0);
    if (pair % 7 == 0) S[0] = 0.0;
    const GradFactors f{S, Psi};
    for (double p : {0.1, 0.3, 0.5, 1.0, 2.0}) {
      const double fac = pnorm_factored(S, Psi, p)[0];
      const double mat = flat_pnorm(materialize_gradient(f, 0, 0), p);
      worst = std::max(worst, std::abs(fac - mat) / std::max(mat, 1e-300));
    }
  }
  report("2", "factorization identity",
         {worst <= 1e-6, "1000 random (S, Psi) pairs x 5 exponents, max relative gap " + fmt(worst)});
}

// ---------------------------------------------------------------------------
// 3. one-hot annihilation

void criterion3() {
  std::size_t pixels = 0, zero = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SyntheticInstance inst = gen_synthetic(seed, {4, 6, 5, 12, 12});
    const ForwardTrace t = forward(inst.params, inst.psi_prev);
    const GradFactors f = last_layer_grad_factors(t, LabelMode::one_hot());
    const std::size_t kt = f.Psi.dim(0);
    for (std::size_t a = 0; a < t.height(); ++a) {
      for (std::size_t b = 0; b < t.width(); ++b) {
        const auto g = materialize_gradient(f, a, b);
        const auto c = static_cast<std::size_t>(t.pred(a, b));
        ++pixels;
        bool all = true;
        for (std::size_t j = 0; j < kt; ++j) all = all && g[c * kt + j] == 0.0;
        if (all) ++zero;
      }
    }
  }
  report("3", "one-hot annihilation",
         {zero == pixels, std::to_string(zero) + " of " + std::to_string(pixels) +
                              " pixels have an all-zero predicted-class slice over 10 seeds"});
}

// ---------------------------------------------------------------------------
// 4. metric oracles

struct Counts {
  std::vector<std::size_t> tp, fp;
  std::size_t pos = 0, neg = 0;
};

Counts threshold_sweep(const std::vector<double>& s, const std::vector<int>& y) {
  Counts c;
  for (int l : y) (l ? c.pos : c.neg)++;
  for (double t : std::set<double, std::greater<>>(s.begin(), s.end())) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] ? tp : fp)++;
    }
    c.tp.push_back(tp);
    c.fp.push_back(fp);
  }
  return c;
}

void criterion4() {
  SplitMix64 rng(404);
  int exact = 0;
  for (int fixture = 0; fixture < 50; ++fixture) {
    const std::size_t n = 2 + rng.below(999);
    const std::uint32_t levels = fixture % 3 == 0 ? 7 : 1u << 20;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(levels)) / levels;
      y[i] = rng.uniform01() < 0.25 ? 1 : 0;
    }
    y[0] = 1;
    y[n - 1] = 0;
    const Counts c = threshold_sweep(s, y);
    double ap = 0.0, prev = 0.0, fpr = 1.0;
    bool found = false;
    for (std::size_t k = 0; k < c.tp.size(); ++k) {
      const double r = static_cast<double>(c.tp[k]) / static_cast<double>(c.pos);
      ap += (r - prev) * (static_cast<double>(c.tp[k]) / static_cast<double>(c.tp[k] + c.fp[k]));
      prev = r;
      if (!found && r >= 0.95) {
        fpr = static_cast<double>(c.fp[k]) / static_cast<double>(c.neg);
        found = true;
      }
    }
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!y[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (y[j]) continue;
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
    if (auprc(s, y) == ap && fpr_at_95_tpr(s, y) == fpr && auroc(s, y) == wins / pairs) ++exact;
  }

  std::vector<double> conf(100000);
  std::vector<int> correct(conf.size());
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = rng.uniform01();
    correct[i] = rng.uniform01() < conf[i] ? 1 : 0;
  }
  const double e = ece(conf, correct, 10);

  const SyntheticScene scene = gen_scene(4, {4, 6, 5, 32, 32});
  const ForwardTrace t = forward(scene.params, scene.psi_prev);
  std::vector<double> brier;
  for (std::size_t a = 0; a < t.height(); ++a)
    for (std::size_t b = 0; b < t.width(); ++b) brier.push_back(brier_error(t.probs, a, b, scene.gt(a, b)));
  const double oracle_ause = ause(brier, brier);

  report("4", "metric oracles",
         {exact == 50 && e < 0.01 && oracle_ause == 0.0,
          std::to_string(exact) + "/50 fixtures exact for AuPRC, FPR95 and AuROC; calibrated ECE " + fmt(e) +
              "; AuSE of the Brier-oracle ordering " + fmt(oracle_ause)});
}

// ---------------------------------------------------------------------------
// 5. segment protocol

void criterion5() {
  LabelMap gt(12, 12, 0);
  Tensor scores({12, 12});
  for (std::size_t a = 4; a < 8; ++a) {
    for (std::size_t b = 2; b < 6; ++b) gt(a, b) = 1;
    for (std::size_t b = 4; b < 8; ++b) scores(a, b) = 1.0;
  }
  const auto th = default_ood_thresholds();
  const OodSegmentMetrics m = ood_segment_metrics(scores, gt, th);
  bool per_threshold = th.size() == 11;
  std::vector<double> f1;
  for (std::size_t i = 0; i < th.size(); ++i) {
    per_threshold = per_threshold && m.siou_per_threshold[i] == 1.0 / 3.0 && m.ppv_per_threshold[i] == 0.5;
    const bool tp = 1.0 / 3.0 > th[i], fp = 0.5 <= th[i];
    f1.push_back(tp ? 2.0 / (2.0 + (fp ? 1.0 : 0.0)) : 0.0);
    per_threshold = per_threshold && m.f1_per_threshold[i] == f1.back();
  }
  double siou_avg = 0.0, ppv_avg = 0.0, f1_avg = 0.0;
  for (std::size_t i = 0; i < th.size(); ++i) {
    siou_avg += 1.0 / 3.0;
    ppv_avg += 0.5;
    f1_avg += f1[i];
  }
  siou_avg /= 11.0;
  ppv_avg /= 11.0;
  f1_avg /= 11.0;
  const bool averages = m.siou == siou_avg && m.ppv == ppv_avg && m.f1 == f1_avg;

  // Column count of a real table with 3 heatmaps.
  const SyntheticScene scene = gen_scene(5, {4, 6, 5, 16, 16});
  const ForwardTrace t = forward(scene.params, scene.psi_prev);
  std::vector<GradientScoreMap> maps;
  for (double p : {0.5, 1.0, 2.0}) maps.push_back(pgn_heatmap(t, scene.params, LabelMode::uniform(), Layer::Last, p));
  const SegmentTable table = build_feature_table(t, connected_components(t.pred), maps, scene.gt);
  const std::size_t expected = 5 + 5 + 10 + 10 * 3;
  bool columns = table.feature_names.size() == expected && feature_count(5, 3) == expected;
  for (const auto& row : table.rows) columns = columns && row.features.size() == expected;

  report("5", "segment protocol",
         {per_threshold && averages && columns,
          std::string("shifted square: per-threshold sIoU 1/3 ") + (per_threshold ? "exact" : "MISMATCH") +
              ", averages sIoU " + fmt(m.siou) + " PPV " + fmt(m.ppv) + " F1 " + fmt(m.f1) +
              (averages ? " exact" : " MISMATCH") + "; feature columns " +
              std::to_string(table.feature_names.size()) + " (expected " + std::to_string(expected) + ")"});
}

// ---------------------------------------------------------------------------
// 6. OoD scenes: PGN_uni p=0.5 vs max softmax

void criterion6() {
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SceneOptions opt;
    opt.ood = true;
    const SyntheticScene scene = gen_scene(seed, {4, 6, 5, 32, 32}, opt);
    const ForwardTrace t = forward(scene.params, scene.psi_prev);
    const Tensor pgn = pgn_heatmap(t, scene.params, LabelMode::uniform(), Layer::Last, 0.5).scores;
    const Tensor msp = baseline_maps(t).max_softmax;
    std::vector<double> sp, sm;
    std::vector<int> y;
    for (std::size_t i = 0; i < pgn.size(); ++i) {
      if (scene.ood_mask.labels[i] == kIgnoreLabel) continue;
      sp.push_back(pgn[i]);
      sm.push_back(msp[i]);
      y.push_back(scene.ood_mask.labels[i] == 1 ? 1 : 0);
    }
    const double a = auprc(sp, y), b = auprc(sm, y);
    if (a > b) ++wins;
    per_seed += (per_seed.empty() ? "" : ", ") + fmt(a) + "/" + fmt(b);
  }
  report("6", "downstream sanity",
         {wins >= 8, "PGN_uni p=0.5 AuPRC beats max softmax on " + std::to_string(wins) +
                         "/10 seeds (pgn/softmax: " + per_seed + ")"});
}

// ---------------------------------------------------------------------------
// 7. factored vs materialized timing, and the bench overhead report

int run_cli(const std::string& cli, const std::string& args) {
  const int status = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion7(const std::string& cli, const fs::path& work) {
  const SyntheticInstance inst = gen_synthetic(7, {16, 64, 19, 128, 128});
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  volatile double sink = 0.0;
  std::string detail;
  bool fast = true;
  for (double p : {0.5, 2.0}) {
    const TimingStats fac = time_repeated(
        [&] {
          const GradFactors f = last_layer_grad_factors(t, LabelMode::uniform());
          sink = sink + pnorm_factored(f.S, f.Psi, p)[0];
        },
        1, 5);
    const TimingStats mat = time_repeated(
        [&] {
          const GradFactors f = last_layer_grad_factors(t, LabelMode::uniform());
          sink = sink + materialized_pnorm(f, p)[0];
        },
        1, 5);
    const double speedup = mat.median / fac.median;
    fast = fast && speedup >= 5.0;
    detail += "p=" + fmt(p) + ": factored " + fmt(fac.median * 1e3) + " ms, materialized " +
              fmt(mat.median * 1e3) + " ms (" + fmt(speedup) + "x); ";
  }

  const fs::path out = work / "bench";
  bool bench_ok = run_cli(cli, "bench --reps 3 --warmup 1 --out " + out.string()) == 0;
  double ratio = 0.0;
  if (bench_ok) {
    const auto j = read_json(out / "bench.json");
    bench_ok = j.contains("overhead") && j["overhead"].contains("forward") &&
               j["overhead"].contains("forward_plus_scores");
    if (bench_ok) ratio = j["overhead"]["overhead_ratio"].get<double>();
  }
  detail += "bench overhead ratio " + (bench_ok ? fmt(ratio) : std::string("missing"));
  report("7", "performance property", {fast && bench_ok, detail});
}

// ---------------------------------------------------------------------------
// 8. determinism of CLI outputs

std::string sha256(const fs::path& path) {
  const auto bytes = read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::string hex;
  char h[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(h, sizeof h, "%02x", md[i]);
    hex += h;
  }
  return hex;
}

std::map<std::string, std::string> digests(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256(e.path());
  }
  return out;
}

void criterion8(const std::string& cli, const fs::path& work) {
  const fs::path root = work / "determinism";
  const std::string b1 = (root / "scene").string(), b2 = (root / "plain").string(),
                    b3 = (root / "scene2").string();
  const std::vector<std::string> commands{
      "gen-synthetic --seed 42 --ood --height 24 --width 24 --out " + b1,
      "gen-synthetic --seed 43 --out " + b2,
      "gen-synthetic --seed 44 --scene --height 24 --width 24 --out " + b3,
      "heatmap --in " + b1 + " --in " + b2 + " --layer last --layer penult --pgm --out " + (root / "heat").string(),
      "oracle-check --in " + b2 + " --out " + (root / "oracle").string(),
      "eval-pixel --in " + b1 + " --in " + b3 + " --out " + (root / "pixel").string(),
      "eval-segment --in " + b1 + " --in " + b3 + " --out " + (root / "segment").string(),
      "eval-ood --in " + b1 + " --out " + (root / "ood").string(),
  };
  std::map<std::string, std::string> first;
  bool ok = true;
  std::size_t files = 0, mismatched = 0;
  for (int pass = 0; pass < 2 && ok; ++pass) {
    fs::remove_all(root);
    fs::create_directories(root);
    for (const auto& c : commands) {
      if (run_cli(cli, c) != 0) {
        ok = false;
        std::cout << "      command failed: pgn " << c << std::endl;
      }
    }
    if (!ok) break;
    auto d = digests(root);
    if (pass == 0) {
      first = std::move(d);
      files = first.size();
    } else {
      for (const auto& [name, hash] : first) {
        const auto it = d.find(name);
        if (it == d.end() || it->second != hash) ++mismatched;
      }
      if (d.size() != first.size()) ++mismatched;
    }
  }
  report("8", "determinism",
         {ok && mismatched == 0 && files > 0,
          std::to_string(commands.size()) + " commands rerun, " + std::to_string(files) + " files, " +
              std::to_string(mismatched) + " SHA-256 mismatches"});
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: pgn_acceptance <pgn executable> <work dir>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argv[2];
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<void()>>> steps{
      {"1", criterion1},
      {"2", criterion2},
      {"3", criterion3},
      {"4", criterion4},
      {"5", criterion5},
      {"6", criterion6},
      {"7", [&] { criterion7(cli, work); }},
      {"8", [&] { criterion8(cli, work); }},
  };
  for (const auto& [id, step] : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      report(id, "exception", {false, e.what()});
    }
  }
  std::cout << (8 - g_failures) << "/8 criteria passed" << std::endl;
  return g_failures == 0 ? 0 : 1;
}
