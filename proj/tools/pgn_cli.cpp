// pgn: closed-form gradient-norm uncertainty scores from the command line.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "pgn/errors.hpp"

namespace {

using pgn::cli::RunConfig;

struct Cli {
  std::unique_ptr<CLI::App> app;
  std::string config_path;
  std::map<std::string, int (*)(const RunConfig&)> handlers;
};

void add_dims(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--in-channels", cfg.dims.in_channels, "input channels of the head");
  sub->add_option("--hidden", cfg.dims.hidden_channels, "hidden channels of the head");
  sub->add_option("--classes", cfg.dims.num_classes, "number of classes (>= 2)");
  sub->add_option("--height", cfg.dims.height, "image height");
  sub->add_option("--width", cfg.dims.width, "image width");
  sub->add_option("--bn-eps", cfg.bn_eps, "batch-norm epsilon");
}

void add_scores(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--mode", cfg.modes, "label mode: oh, uni or explicit (repeatable)");
  sub->add_option("--layer", cfg.layers, "layer: last or penult (repeatable)");
  sub->add_option("--p", cfg.ps, "norm exponent (repeatable)");
  sub->add_option("--labels", cfg.labels, "explicit label tensor per bundle (NPY, C x H x W)");
}

void add_common(CLI::App* sub, RunConfig& cfg, std::string& config_path) {
  sub->add_option("--config", config_path, "JSON config; command-line flags take precedence");
  sub->add_option("--out", cfg.out, "output directory");
  sub->add_option("--seed", cfg.seed, "generator seed");
}

Cli build(RunConfig& cfg) {
  Cli c;
  c.app = std::make_unique<CLI::App>("Pixel-wise gradient-norm uncertainty scores", "pgn");
  c.app->require_subcommand(1);
  auto& app = *c.app;

  auto* gen = app.add_subcommand("gen-synthetic", "write a random head and input as an NPY bundle");
  add_common(gen, cfg, c.config_path);
  add_dims(gen, cfg);
  gen->add_flag("--scene", cfg.scene, "structured input with ground-truth labels");
  gen->add_flag("--ood", cfg.ood, "scene with an out-of-distribution box and mask");
  c.handlers["gen-synthetic"] = pgn::cli::cmd_gen_synthetic;

  auto* heat = app.add_subcommand("heatmap", "write PGN heatmaps and baseline maps");
  add_common(heat, cfg, c.config_path);
  add_scores(heat, cfg);
  heat->add_option("--in", cfg.in, "input bundle directory (repeatable)");
  heat->add_flag("--pgm", cfg.pgm, "also write 8-bit PGM images");
  c.handlers["heatmap"] = pgn::cli::cmd_heatmap;

  auto* oracle = app.add_subcommand("oracle-check", "compare closed forms with finite differences");
  add_common(oracle, cfg, c.config_path);
  add_scores(oracle, cfg);
  add_dims(oracle, cfg);
  oracle->add_option("--in", cfg.in, "input bundle directory; a synthetic instance when omitted");
  oracle->add_option("--tolerance", cfg.tolerance, "maximum relative error");
  oracle->add_option("--epsilon", cfg.epsilon, "finite-difference step");
  oracle->add_option("--size-guard", cfg.size_guard, "limit on pixels x weights");
  oracle->add_option("--route", cfg.routes,
                     "closed form vs target: pgn:linearized, exact:loss, pgn:loss, exact:linearized");
  c.handlers["oracle-check"] = pgn::cli::cmd_oracle_check;

  const auto add_eval = [&](const char* name, const char* help, int (*fn)(const RunConfig&)) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, cfg, c.config_path);
    add_scores(sub, cfg);
    sub->add_option("--in", cfg.in, "input bundle directory (repeatable)");
    sub->add_option("--gt", cfg.gt, "NPY label map per bundle, overriding the bundle's annotation");
    c.handlers[name] = fn;
    return sub;
  };
  auto* pixel = add_eval("eval-pixel", "ECE and AuSE per heatmap", pgn::cli::cmd_eval_pixel);
  pixel->add_option("--bins", cfg.bins, "ECE bins");
  pixel->add_option("--points", cfg.points, "sparsification grid points");
  add_eval("eval-segment", "segment features and meta models", pgn::cli::cmd_eval_segment);
  auto* ood = add_eval("eval-ood", "AuPRC, FPR95 and component metrics", pgn::cli::cmd_eval_ood);
  ood->add_option("--thresholds", cfg.thresholds, "binarisation thresholds in (0, 1)");

  auto* bench = app.add_subcommand("bench", "time the forward pass with and without PGN scores");
  add_common(bench, cfg, c.config_path);
  add_scores(bench, cfg);
  add_dims(bench, cfg);
  bench->add_option("--in", cfg.in, "input bundle directory; a 128x128 synthetic instance when omitted");
  bench->add_option("--reps", cfg.reps, "timed repetitions");
  bench->add_option("--warmup", cfg.warmup, "untimed warm-up runs");
  c.handlers["bench"] = pgn::cli::cmd_bench;
  return c;
}

CLI::App* chosen(CLI::App& app) {
  auto subs = app.get_subcommands();
  return subs.empty() ? nullptr : subs.front();
}

std::string option_name(const CLI::Option* opt) {
  const auto& names = opt->get_lnames();
  return names.empty() ? std::string() : names.front();
}

// Turns config entries whose flags are absent from the command line into
// extra arguments.
std::vector<std::string> config_args(const nlohmann::json& doc, CLI::App* sub) {
  if (!doc.is_object()) throw pgn::ValidationError("config must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : doc.items()) {
    if (key == "config") throw pgn::ValidationError("config files cannot include other configs");
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) throw pgn::ValidationError("unknown config key '" + key + "' for " + sub->get_name());
    if (opt->count() > 0) continue;
    const auto push = [&](const nlohmann::json& v) {
      if (v.is_string()) args.push_back(v.get<std::string>());
      else if (v.is_number() || v.is_boolean()) args.push_back(v.dump());
      else throw pgn::ValidationError("config key '" + key + "' must hold scalars");
    };
    if (opt->get_expected_max() == 0) {
      if (!value.is_boolean()) throw pgn::ValidationError("config key '" + key + "' must be a boolean");
      if (value.get<bool>()) args.push_back("--" + key);
      continue;
    }
    if (value.is_array()) {
      for (const auto& v : value) {
        args.push_back("--" + key);
        push(v);
      }
    } else {
      args.push_back("--" + key);
      push(value);
    }
  }
  return args;
}

int parse_into(Cli& cli, const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  try {
    cli.app->parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return cli.app->exit(e);
  }
  return -1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    RunConfig probe_cfg;
    Cli probe = build(probe_cfg);
    if (int rc = parse_into(probe, args); rc >= 0) return rc;
    CLI::App* sub = chosen(*probe.app);

    if (!probe.config_path.empty()) {
      std::ifstream in(probe.config_path);
      if (!in) throw pgn::IoError("cannot open config " + probe.config_path);
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw pgn::FormatError(std::string("config: ") + e.what(), e.byte);
      }
      const auto extra = config_args(doc, sub);
      // Sub-command name first, config arguments, then the original flags.
      std::vector<std::string> merged{args.front(), sub->get_name()};
      merged.insert(merged.end(), extra.begin(), extra.end());
      bool skipped = false;
      for (std::size_t i = 1; i < args.size(); ++i) {
        if (!skipped && args[i] == sub->get_name()) {
          skipped = true;
          continue;
        }
        merged.push_back(args[i]);
      }
      args = std::move(merged);
    }

    RunConfig cfg;
    Cli cli = build(cfg);
    if (int rc = parse_into(cli, args); rc >= 0) return rc;
    sub = chosen(*cli.app);
    for (const CLI::Option* opt : sub->get_options()) {
      if (opt->count() > 0) cfg.given.insert(option_name(opt));
    }
    cfg.validate();
    return cli.handlers.at(sub->get_name())(cfg);
  } catch (const pgn::SizeGuardError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pgn::cli::kExitSizeGuard;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pgn::cli::kExitFailed;
  }
}
