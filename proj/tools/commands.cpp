#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "pgn/bundle.hpp"
#include "pgn/errors.hpp"
#include "pgn/gradnorm.hpp"
#include "pgn/metamodel.hpp"
#include "pgn/metrics.hpp"
#include "pgn/npy.hpp"
#include "pgn/oracle.hpp"
#include "pgn/runtime.hpp"
#include "pgn/segments.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace pgn::cli {

namespace {

const std::vector<double> kAblationPs{0.1, 0.3, 0.5, 1.0, 2.0};

template <class T>
std::vector<T> or_default(const std::vector<T>& v, std::vector<T> fallback) {
  return v.empty() ? fallback : v;
}

std::vector<std::string> modes_of(const RunConfig& cfg) { return or_default(cfg.modes, {"oh", "uni"}); }
std::vector<std::string> layers_of(const RunConfig& cfg) { return or_default(cfg.layers, {"last"}); }
std::vector<double> ps_of(const RunConfig& cfg) { return or_default(cfg.ps, kAblationPs); }
std::vector<double> thresholds_of(const RunConfig& cfg) {
  return or_default(cfg.thresholds, default_ood_thresholds());
}

void report_path(const fs::path& p) { std::cout << p.string() << '\n'; }

// One input image: its bundle and forward pass.
struct Image {
  std::string source;
  Bundle bundle;
  ForwardTrace trace;
  std::optional<Tensor> explicit_labels;
};

void check_map_shape(const LabelMap& m, const ForwardTrace& t, const std::string& what) {
  if (m.height != t.height() || m.width != t.width()) {
    throw DimensionError(what + " is " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                         ", image is " + std::to_string(t.height()) + "x" + std::to_string(t.width()));
  }
}

std::vector<Image> load_images(const RunConfig& cfg) {
  if (cfg.in.empty()) throw ValidationError("no input bundle given (--in)");
  if (!cfg.gt.empty() && cfg.gt.size() != cfg.in.size()) {
    throw ValidationError("--gt must be given once per --in bundle");
  }
  if (!cfg.labels.empty() && cfg.labels.size() != cfg.in.size()) {
    throw ValidationError("--labels must be given once per --in bundle");
  }
  std::vector<Image> images;
  for (std::size_t i = 0; i < cfg.in.size(); ++i) {
    Image img;
    img.source = cfg.in[i];
    img.bundle = read_bundle(cfg.in[i]);
    img.trace = forward(img.bundle.params, img.bundle.psi_prev);
    if (!cfg.labels.empty()) img.explicit_labels = read_npy(cfg.labels[i]);
    images.push_back(std::move(img));
  }
  return images;
}

LabelMode make_mode(const std::string& name, const Image& img) {
  switch (parse_label_kind(name)) {
    case LabelKind::OneHot:
      return LabelMode::one_hot();
    case LabelKind::Uniform:
      return LabelMode::uniform();
    case LabelKind::Explicit:
      if (!img.explicit_labels) throw ValidationError("mode explicit needs --labels");
      return LabelMode::explicit_labels(*img.explicit_labels);
  }
  throw ValidationError("unknown mode " + name);
}

std::vector<GradientScoreMap> heatmaps_of(const RunConfig& cfg, const Image& img) {
  std::vector<GradientScoreMap> maps;
  for (const auto& m : modes_of(cfg)) {
    const LabelMode mode = make_mode(m, img);
    for (const auto& l : layers_of(cfg)) {
      const Layer layer = parse_layer(l);
      for (double p : ps_of(cfg)) maps.push_back(pgn_heatmap(img.trace, img.bundle.params, mode, layer, p));
    }
  }
  return maps;
}

// Ground-truth class map: --gt overrides the bundle annotation.
LabelMap gt_labels_of(const RunConfig& cfg, const Image& img, std::size_t index) {
  LabelMap gt;
  if (!cfg.gt.empty()) {
    gt = read_npy_labels(cfg.gt[index]);
  } else if (img.bundle.gt) {
    gt = *img.bundle.gt;
  } else {
    throw ValidationError("bundle " + img.source + " has no ground truth; pass --gt");
  }
  check_map_shape(gt, img.trace, "ground truth");
  return gt;
}

LabelMap ood_mask_of(const RunConfig& cfg, const Image& img, std::size_t index) {
  LabelMap mask;
  if (!cfg.gt.empty()) {
    mask = read_npy_labels(cfg.gt[index]);
  } else if (img.bundle.ood_mask) {
    mask = *img.bundle.ood_mask;
  } else {
    throw ValidationError("bundle " + img.source + " has no OoD mask; pass --gt");
  }
  check_map_shape(mask, img.trace, "OoD mask");
  for (auto v : mask.labels) {
    if (v != 0 && v != 1 && v != kIgnoreLabel) throw ValidationError("OoD mask values must be 0, 1 or 255");
  }
  return mask;
}

// Heatmap descriptor shared by the evaluation commands: PGN maps and baselines.
struct ScoreSource {
  std::string name;
  ojson provenance;
  bool gradient = false;  // normalise by the dataset maximum
};

std::vector<ScoreSource> score_sources(const RunConfig& cfg) {
  std::vector<ScoreSource> out;
  for (const auto& m : modes_of(cfg)) {
    for (const auto& l : layers_of(cfg)) {
      for (double p : ps_of(cfg)) {
        GradientScoreMap g;
        g.mode = parse_label_kind(m);
        g.layer = parse_layer(l);
        g.p = p;
        out.push_back({g.name(), ojson{{"kind", "pgn"}, {"mode", m}, {"layer", l}, {"p", p}}, true});
      }
    }
  }
  out.push_back({"max_softmax", ojson{{"kind", "baseline"}}, false});
  out.push_back({"entropy", ojson{{"kind", "baseline"}}, false});
  return out;
}

// All score maps of one image in score_sources order.
std::vector<Tensor> score_maps(const RunConfig& cfg, const Image& img) {
  std::vector<Tensor> maps;
  for (auto& g : heatmaps_of(cfg, img)) maps.push_back(std::move(g.scores));
  BaselineMaps b = baseline_maps(img.trace);
  maps.push_back(std::move(b.max_softmax));
  maps.push_back(std::move(b.entropy));
  return maps;
}

ojson sources_json(const std::vector<Image>& images) {
  ojson j = ojson::array();
  for (const auto& img : images) j.push_back({{"bundle", img.source}, {"seed", img.bundle.seed}});
  return j;
}

template <class F>
void try_metric(MetricsReport& r, const std::string& key, F&& f) {
  try {
    r.set(key, f());
  } catch (const UndefinedMetricError& e) {
    r.set(key, std::nullopt);
    r.errors.push_back(key + ": " + e.what());
  } catch (const DegenerateTargetError& e) {
    r.set(key, std::nullopt);
    r.errors.push_back(key + ": " + e.what());
  }
}

fs::path write_reports(const std::vector<MetricsReport>& reports, const fs::path& out, const std::string& stem) {
  ojson arr = ojson::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  const fs::path json_path = out / (stem + ".json");
  write_json(arr, json_path);
  write_reports_csv(reports, out / (stem + ".csv"));
  for (const auto& r : reports) {
    for (const auto& e : r.errors) std::cerr << "warning: " << r.name << ": " << e << '\n';
  }
  return json_path;
}

void write_pgm(const Tensor& map, const fs::path& path) {
  const std::size_t h = map.dim(0), w = map.dim(1);
  const double mx = max_value(map);
  std::vector<std::byte> bytes;
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (char c : header) bytes.push_back(static_cast<std::byte>(c));
  for (double v : map.data()) {
    const double s = mx > 0.0 ? std::clamp(v / mx, 0.0, 1.0) : 0.0;
    bytes.push_back(static_cast<std::byte>(static_cast<unsigned char>(std::lround(s * 255.0))));
  }
  write_file(bytes, path);
}

ojson map_sidecar(const std::string& name, const Tensor& map, const Image& img) {
  ojson j;
  j["name"] = name;
  j["bundle"] = img.source;
  j["seed"] = img.bundle.seed;
  j["shape"] = map.shape();
  j["dtype"] = "<f4";
  j["min"] = *std::min_element(map.data().begin(), map.data().end());
  j["max"] = max_value(map);
  return j;
}

void write_map(const Tensor& map, const ojson& sidecar, const fs::path& dir, const std::string& name, bool pgm) {
  fs::create_directories(dir);
  Tensor f32 = map;
  f32.set_dtype(DType::F32);
  write_npy(f32, dir / (name + ".npy"));
  write_json(sidecar, dir / (name + ".json"));
  if (pgm) write_pgm(f32, dir / (name + ".pgm"));
}

}  // namespace

void RunConfig::validate() const {
  for (double p : ps) {
    if (!(p > 0.0) || !std::isfinite(p)) throw ValidationError("p must be positive, got " + format_p(p));
  }
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("thresholds must lie in (0, 1)");
  }
  for (const auto& m : modes) parse_label_kind(m);
  for (const auto& l : layers) parse_layer(l);
  if (bins == 0) throw ValidationError("bins must be at least 1");
  if (points < 2) throw ValidationError("points must be at least 2");
  if (!(tolerance >= 0.0)) throw ValidationError("tolerance must be nonnegative");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (!(bn_eps > 0.0)) throw ValidationError("bn-eps must be positive");
  if (reps == 0) throw ValidationError("reps must be at least 1");
}

int cmd_gen_synthetic(const RunConfig& cfg) {
  cfg.dims.validate();
  Bundle b;
  b.dims = cfg.dims;
  b.seed = cfg.seed;
  if (cfg.scene || cfg.ood) {
    SceneOptions opt;
    opt.ood = cfg.ood;
    SyntheticScene s = gen_scene(cfg.seed, cfg.dims, opt, cfg.bn_eps);
    b.params = std::move(s.params);
    b.psi_prev = std::move(s.psi_prev);
    b.gt = std::move(s.gt);
    if (cfg.ood) b.ood_mask = std::move(s.ood_mask);
  } else {
    SyntheticInstance s = gen_synthetic(cfg.seed, cfg.dims, cfg.bn_eps);
    b.params = std::move(s.params);
    b.psi_prev = std::move(s.psi_prev);
  }
  write_bundle(b, cfg.out);
  report_path(fs::path(cfg.out) / kManifestName);
  return kExitOk;
}

int cmd_heatmap(const RunConfig& cfg) {
  const auto images = load_images(cfg);
  const fs::path out(cfg.out);
  ojson index;
  index["modes"] = modes_of(cfg);
  index["layers"] = layers_of(cfg);
  index["p"] = ps_of(cfg);
  index["images"] = ojson::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    const fs::path dir = images.size() == 1 ? out : out / ("image_" + std::to_string(i));
    ojson entry{{"bundle", img.source}, {"heatmaps", ojson::array()}, {"baselines", ojson::array()}};
    for (const auto& g : heatmaps_of(cfg, img)) {
      const std::string name = g.name();
      ojson side = map_sidecar(name, g.scores, img);
      side["mode"] = to_string(g.mode);
      side["layer"] = to_string(g.layer);
      side["p"] = g.p;
      write_map(g.scores, side, dir, name, cfg.pgm);
      entry["heatmaps"].push_back((dir / (name + ".npy")).string());
    }
    const BaselineMaps b = baseline_maps(img.trace);
    for (const auto& [name, map] : {std::pair<std::string, const Tensor*>{"max_softmax", &b.max_softmax},
                                    std::pair<std::string, const Tensor*>{"entropy", &b.entropy}}) {
      write_map(*map, map_sidecar(name, *map, img), dir, name, cfg.pgm);
      entry["baselines"].push_back((dir / (name + ".npy")).string());
    }
    index["images"].push_back(entry);
  }
  const fs::path index_path = out / "heatmaps.json";
  write_json(index, index_path);
  report_path(index_path);
  return kExitOk;
}

int cmd_oracle_check(const RunConfig& cfg) {
  Bundle b;
  std::optional<Tensor> labels;
  if (!cfg.in.empty()) {
    if (cfg.in.size() != 1) throw ValidationError("oracle-check takes a single bundle");
    b = read_bundle(cfg.in.front());
    if (!cfg.labels.empty()) labels = read_npy(cfg.labels.front());
  } else {
    cfg.dims.validate();
    SyntheticInstance s = gen_synthetic(cfg.seed, cfg.dims, cfg.bn_eps);
    b.params = std::move(s.params);
    b.psi_prev = std::move(s.psi_prev);
  }
  CheckOptions opt;
  opt.modes.clear();
  for (const auto& m : modes_of(cfg)) {
    switch (parse_label_kind(m)) {
      case LabelKind::OneHot: opt.modes.push_back(LabelMode::one_hot()); break;
      case LabelKind::Uniform: opt.modes.push_back(LabelMode::uniform()); break;
      case LabelKind::Explicit:
        if (!labels) throw ValidationError("mode explicit needs --labels");
        opt.modes.push_back(LabelMode::explicit_labels(*labels));
        break;
    }
  }
  opt.layers.clear();
  for (const auto& l : or_default(cfg.layers, {"last", "penult"})) opt.layers.push_back(parse_layer(l));
  opt.ps = or_default(cfg.ps, {0.3, 1.0, 2.0});
  if (!cfg.routes.empty()) {
    opt.routes.clear();
    for (const auto& r : cfg.routes) {
      if (r == "pgn:linearized") opt.routes.push_back({LabelFactor::Pgn, FdTarget::LinearizedLoss});
      else if (r == "exact:loss") opt.routes.push_back({LabelFactor::Exact, FdTarget::PixelLoss});
      else if (r == "pgn:loss") opt.routes.push_back({LabelFactor::Pgn, FdTarget::PixelLoss});
      else if (r == "exact:linearized") opt.routes.push_back({LabelFactor::Exact, FdTarget::LinearizedLoss});
      else throw ValidationError("unknown route " + r);
    }
  }
  opt.tolerance = cfg.tolerance;
  opt.epsilon = cfg.epsilon;
  opt.size_guard = cfg.size_guard;
  const OracleReport report = check_closed_form(b.params, b.psi_prev, opt);
  const ojson j = report.to_json();
  if (cfg.has("out")) write_json(j, fs::path(cfg.out) / "oracle_report.json");
  std::cout << j.dump(2) << '\n';
  if (!report.passed) {
    std::cerr << "oracle check failed: max relative error " << report.max_rel_err << " > tolerance "
              << report.tolerance << '\n';
    return kExitFailed;
  }
  return kExitOk;
}

int cmd_eval_pixel(const RunConfig& cfg) {
  const auto images = load_images(cfg);
  const auto sources = score_sources(cfg);
  // Pooled per-pixel values over the dataset, per score source.
  std::vector<std::vector<double>> scores(sources.size());
  std::vector<int> correct;
  std::vector<double> brier;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    const LabelMap gt = gt_labels_of(cfg, img, i);
    const auto maps = score_maps(cfg, img);
    for (std::size_t a = 0; a < img.trace.height(); ++a) {
      for (std::size_t b = 0; b < img.trace.width(); ++b) {
        const std::int32_t g = gt(a, b);
        if (g == kIgnoreLabel) continue;
        if (g < 0 || static_cast<std::size_t>(g) >= img.trace.num_classes()) {
          throw ValidationError("ground-truth class " + std::to_string(g) + " out of range");
        }
        correct.push_back(img.trace.pred(a, b) == g ? 1 : 0);
        brier.push_back(brier_error(img.trace.probs, a, b, g));
        for (std::size_t s = 0; s < sources.size(); ++s) scores[s].push_back(maps[s](a, b));
      }
    }
  }
  std::vector<MetricsReport> reports;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    MetricsReport r;
    r.name = sources[s].name;
    const double norm = sources[s].gradient
                            ? (scores[s].empty() ? 0.0 : *std::max_element(scores[s].begin(), scores[s].end()))
                            : 1.0;
    r.config = {{"bins", cfg.bins}, {"points", cfg.points}, {"normalization", norm}};
    r.provenance = sources[s].provenance;
    r.provenance["sources"] = sources_json(images);
    r.set("pixels", static_cast<double>(correct.size()));
    try_metric(r, "ece", [&] { return ece(scores_to_confidence(scores[s], norm), correct, cfg.bins); });
    try_metric(r, "ause", [&] { return ause(scores[s], brier, cfg.points); });
    reports.push_back(std::move(r));
  }
  report_path(write_reports(reports, cfg.out, "pixel_metrics"));
  return kExitOk;
}

int cmd_eval_segment(const RunConfig& cfg) {
  const auto images = load_images(cfg);
  SegmentTable table;
  std::size_t num_classes = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    const LabelMap gt = gt_labels_of(cfg, img, i);
    if (i == 0) num_classes = img.trace.num_classes();
    else if (num_classes != img.trace.num_classes()) throw DimensionError("bundles differ in class count");
    const SegmentMap seg = connected_components(img.trace.pred);
    SegmentTable t = build_feature_table(img.trace, seg, heatmaps_of(cfg, img), gt, i);
    if (i == 0) table = std::move(t);
    else table.append(t);
  }
  const fs::path out(cfg.out);
  write_table_csv(table, out / "segments.csv");

  // Feature sets: dispersion + size/probability features, gradient features
  // with the size features, and everything.
  const std::size_t base = 5 + num_classes + 10;
  std::vector<std::string> metaseg(table.feature_names.begin(),
                                   table.feature_names.begin() + static_cast<std::ptrdiff_t>(base));
  std::vector<std::string> gradient(table.feature_names.begin(), table.feature_names.begin() + 5);
  gradient.insert(gradient.end(), table.feature_names.begin() + static_cast<std::ptrdiff_t>(base),
                  table.feature_names.end());
  std::vector<std::pair<std::string, std::vector<std::string>>> sets{{"metaseg", metaseg}};
  if (table.feature_names.size() > base) {
    sets.emplace_back("pgn", gradient);
    sets.emplace_back("metaseg+pgn", table.feature_names);
  }

  // Split rows; segments lying entirely on ignored pixels have no target.
  SegmentTable train, val;
  train.feature_names = val.feature_names = table.feature_names;
  std::size_t no_target = 0;
  for (const auto& row : table.rows) {
    if (std::isnan(row.iou)) {
      ++no_target;
      continue;
    }
    (in_training_split(row.image_id, row.segment_id) ? train : val).rows.push_back(row);
  }

  std::vector<MetricsReport> reports;
  for (const auto& [set_name, columns] : sets) {
    MetricsReport r;
    r.name = "meta_" + set_name;
    r.config = {{"features", columns.size()}, {"split", "hash 70/30"}, {"logistic_l2", LogisticConfig{}.l2},
                {"ridge", 1e-6}};
    r.provenance = {{"sources", sources_json(images)}};
    r.set("segments", static_cast<double>(table.rows.size()));
    r.set("segments_without_target", static_cast<double>(no_target));
    r.set("train_rows", static_cast<double>(train.rows.size()));
    r.set("val_rows", static_cast<double>(val.rows.size()));

    const FeatureMatrix xtr = table_features(train, columns);
    const FeatureMatrix xva = table_features(val, columns);
    std::vector<int> ctr, cva;
    std::vector<double> ytr, yva;
    for (const auto& row : train.rows) {
      ctr.push_back(row.iou > 0.0 ? 1 : 0);
      ytr.push_back(row.iou);
    }
    for (const auto& row : val.rows) {
      cva.push_back(row.iou > 0.0 ? 1 : 0);
      yva.push_back(row.iou);
    }
    try_metric(r, "auroc", [&] {
      const LinearModel m = fit_logistic(xtr, ctr, {}, columns);
      write_json(m.to_json(), out / "models" / (set_name + "_logistic.json"));
      return auroc(m.predict(xva), cva);
    });
    try_metric(r, "r2", [&]() -> double {
      if (xtr.empty()) throw UndefinedMetricError("no training rows");
      if (yva.empty()) throw UndefinedMetricError("no validation rows");
      const LinearModel m = fit_least_squares(xtr, ytr, 1e-6, columns);
      write_json(m.to_json(), out / "models" / (set_name + "_least_squares.json"));
      return r_squared(m.predict(xva), yva);
    });
    reports.push_back(std::move(r));
  }
  report_path(write_reports(reports, out, "segment_metrics"));
  return kExitOk;
}

int cmd_eval_ood(const RunConfig& cfg) {
  const auto images = load_images(cfg);
  const auto sources = score_sources(cfg);
  const auto thresholds = thresholds_of(cfg);
  std::vector<LabelMap> masks;
  std::vector<std::vector<Tensor>> maps;
  for (std::size_t i = 0; i < images.size(); ++i) {
    masks.push_back(ood_mask_of(cfg, images[i], i));
    maps.push_back(score_maps(cfg, images[i]));
  }
  std::vector<MetricsReport> reports;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    std::vector<double> pooled;
    std::vector<int> labels;
    double mx = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Tensor& m = maps[i][s];
      mx = std::max(mx, max_value(m));
      for (std::size_t k = 0; k < m.size(); ++k) {
        if (masks[i].labels[k] == kIgnoreLabel) continue;
        pooled.push_back(m[k]);
        labels.push_back(masks[i].labels[k] == 1 ? 1 : 0);
      }
    }
    // Scores divided by the dataset maximum for the component metrics.
    std::vector<Tensor> normalised;
    for (std::size_t i = 0; i < images.size(); ++i) {
      Tensor n = maps[i][s];
      if (mx > 0.0) n *= 1.0 / mx;
      normalised.push_back(std::move(n));
    }
    std::vector<OodImage> ood;
    for (std::size_t i = 0; i < images.size(); ++i) ood.push_back({&normalised[i], &masks[i]});

    MetricsReport r;
    r.name = sources[s].name;
    r.config = {{"thresholds", thresholds}, {"normalization", mx}};
    r.provenance = sources[s].provenance;
    r.provenance["sources"] = sources_json(images);
    try_metric(r, "auprc", [&] { return auprc(pooled, labels); });
    try_metric(r, "fpr95", [&] { return fpr_at_95_tpr(pooled, labels); });
    std::optional<OodSegmentMetrics> seg;
    try {
      seg = ood_segment_metrics(ood, thresholds);
    } catch (const UndefinedMetricError& e) {
      r.errors.push_back(std::string("segment metrics: ") + e.what());
    }
    r.set("siou", seg ? std::optional<double>(seg->siou) : std::nullopt);
    r.set("ppv", seg ? std::optional<double>(seg->ppv) : std::nullopt);
    r.set("f1", seg ? std::optional<double>(seg->f1) : std::nullopt);
    reports.push_back(std::move(r));
  }
  report_path(write_reports(reports, cfg.out, "ood_metrics"));
  return kExitOk;
}

int cmd_bench(const RunConfig& cfg) {
  Bundle b;
  std::string source;
  if (!cfg.in.empty()) {
    b = read_bundle(cfg.in.front());
    source = cfg.in.front();
  } else {
    HeadDims dims = cfg.dims;
    if (!cfg.has("height")) dims.height = 128;
    if (!cfg.has("width")) dims.width = 128;
    dims.validate();
    SyntheticInstance s = gen_synthetic(cfg.seed, dims, cfg.bn_eps);
    b.dims = dims;
    b.params = std::move(s.params);
    b.psi_prev = std::move(s.psi_prev);
    source = "synthetic";
  }
  const std::string mode_name = modes_of(cfg).front();
  const Layer layer = parse_layer(layers_of(cfg).front());
  const double p = or_default(cfg.ps, {2.0}).front();
  if (parse_label_kind(mode_name) == LabelKind::Explicit) throw ValidationError("bench supports modes oh and uni");
  const LabelMode mode = mode_name == "oh" ? LabelMode::one_hot() : LabelMode::uniform();

  const OverheadReport overhead = measure_pgn_overhead(b.params, b.psi_prev, mode, layer, p, cfg.warmup, cfg.reps);

  // Factored norms against materialising every per-pixel gradient.
  const ForwardTrace trace = forward(b.params, b.psi_prev);
  const GradFactors f = layer == Layer::Last ? last_layer_grad_factors(trace, mode)
                                             : penult_layer_grad_factors(trace, b.params, mode);
  volatile double sink = 0.0;
  const TimingStats factored =
      time_repeated([&] { sink = sink + pnorm_factored(f.S, f.Psi, p)[0]; }, cfg.warmup, cfg.reps);
  const TimingStats materialized =
      time_repeated([&] { sink = sink + materialized_pnorm(f, p)[0]; }, cfg.warmup, cfg.reps);

  ojson j;
  j["config"] = {{"source", source},
                 {"in_channels", b.params.in_channels()},
                 {"hidden_channels", b.params.hidden_channels()},
                 {"num_classes", b.params.num_classes()},
                 {"height", b.psi_prev.dim(1)},
                 {"width", b.psi_prev.dim(2)},
                 {"mode", mode_name},
                 {"layer", to_string(layer)},
                 {"p", p},
                 {"warmup", cfg.warmup},
                 {"repetitions", cfg.reps}};
  j["overhead"] = overhead.to_json();
  j["factored"] = factored.to_json();
  j["materialized"] = materialized.to_json();
  j["materialized_over_factored"] = factored.median > 0.0 ? materialized.median / factored.median : 0.0;
  const fs::path path = fs::path(cfg.out) / "bench.json";
  write_json(j, path);
  std::cerr << "forward " << overhead.forward.median << " s, forward+pgn " << overhead.forward_plus_scores.median
            << " s, overhead ratio " << overhead.overhead_ratio << '\n';
  report_path(path);
  return kExitOk;
}

}  // namespace pgn::cli
