#include "pgn/bundle.hpp"

#include <fstream>
#include <utility>
#include <vector>

#include "pgn/errors.hpp"
#include "pgn/npy.hpp"

namespace pgn {

namespace {

using TensorField = std::pair<const char*, Tensor SegHeadParams::*>;

const std::vector<TensorField>& param_fields() {
  static const std::vector<TensorField> fields = {
      {"k_penult", &SegHeadParams::k_penult}, {"b_penult", &SegHeadParams::b_penult},
      {"bn_gamma", &SegHeadParams::bn_gamma}, {"bn_beta", &SegHeadParams::bn_beta},
      {"bn_mean", &SegHeadParams::bn_mean},   {"bn_var", &SegHeadParams::bn_var},
      {"k_last", &SegHeadParams::k_last},     {"b_last", &SegHeadParams::b_last},
  };
  return fields;
}

nlohmann::ordered_json tensor_entry(const std::string& name, const Shape& shape, const char* dtype) {
  nlohmann::ordered_json e;
  e["name"] = name;
  e["file"] = name + ".npy";
  e["shape"] = shape;
  e["dtype"] = dtype;
  return e;
}

}  // namespace

nlohmann::ordered_json bundle_manifest(const Bundle& bundle) {
  nlohmann::ordered_json m;
  m["format"] = "pgn-bundle";
  m["version"] = 1;
  m["seed"] = bundle.seed;
  m["bn_eps"] = bundle.params.bn_eps;
  m["dims"] = {{"in_channels", bundle.dims.in_channels},
               {"hidden_channels", bundle.dims.hidden_channels},
               {"num_classes", bundle.dims.num_classes},
               {"height", bundle.dims.height},
               {"width", bundle.dims.width}};
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& [name, field] : param_fields()) {
    tensors.push_back(tensor_entry(name, (bundle.params.*field).shape(), "<f4"));
  }
  tensors.push_back(tensor_entry("psi_prev", bundle.psi_prev.shape(), "<f4"));
  m["tensors"] = tensors;
  auto annotations = nlohmann::ordered_json::array();
  if (bundle.gt) annotations.push_back(tensor_entry("gt_labels", {bundle.gt->height, bundle.gt->width}, "<i4"));
  if (bundle.ood_mask) {
    annotations.push_back(tensor_entry("ood_mask", {bundle.ood_mask->height, bundle.ood_mask->width}, "<i4"));
  }
  m["annotations"] = annotations;
  return m;
}

void write_json(const nlohmann::ordered_json& doc, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_bundle(const Bundle& bundle, const std::filesystem::path& dir) {
  bundle.params.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  auto as_f32 = [](Tensor t) {
    t.set_dtype(DType::F32);
    return t;
  };
  for (const auto& [name, field] : param_fields()) {
    write_npy(as_f32(bundle.params.*field), dir / (std::string(name) + ".npy"));
  }
  write_npy(as_f32(bundle.psi_prev), dir / "psi_prev.npy");
  if (bundle.gt) write_npy_labels(*bundle.gt, dir / "gt_labels.npy");
  if (bundle.ood_mask) write_npy_labels(*bundle.ood_mask, dir / "ood_mask.npy");
  write_json(bundle_manifest(bundle), dir / kManifestName);
}

Bundle read_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestName;
  if (!std::filesystem::exists(manifest_path)) {
    throw IoError("missing " + manifest_path.string());
  }
  const nlohmann::json m = read_json(manifest_path);
  Bundle b;
  try {
    const auto& d = m.at("dims");
    b.dims.in_channels = d.at("in_channels").get<std::size_t>();
    b.dims.hidden_channels = d.at("hidden_channels").get<std::size_t>();
    b.dims.num_classes = d.at("num_classes").get<std::size_t>();
    b.dims.height = d.at("height").get<std::size_t>();
    b.dims.width = d.at("width").get<std::size_t>();
    b.seed = m.value("seed", std::uint64_t{0});
    b.params.bn_eps = m.at("bn_eps").get<double>();

    auto load_tensor = [&](const nlohmann::json& entry) {
      const auto file = dir / entry.at("file").get<std::string>();
      if (!std::filesystem::exists(file)) throw IoError("manifest lists missing tensor " + file.string());
      Tensor t = read_npy(file);
      const auto shape = entry.at("shape").get<Shape>();
      if (t.shape() != shape) {
        throw DimensionError(file.string() + ": shape " + to_string(t.shape()) +
                             " does not match manifest " + to_string(shape));
      }
      return t;
    };

    bool have_psi = false;
    std::vector<bool> have(param_fields().size(), false);
    for (const auto& entry : m.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      if (name == "psi_prev") {
        b.psi_prev = load_tensor(entry);
        have_psi = true;
        continue;
      }
      bool known = false;
      for (std::size_t i = 0; i < param_fields().size(); ++i) {
        if (name == param_fields()[i].first) {
          b.params.*(param_fields()[i].second) = load_tensor(entry);
          have[i] = true;
          known = true;
        }
      }
      if (!known) throw ValidationError("manifest lists unknown tensor '" + name + "'");
    }
    for (std::size_t i = 0; i < have.size(); ++i) {
      if (!have[i]) throw ValidationError(std::string("manifest is missing tensor '") + param_fields()[i].first + "'");
    }
    if (!have_psi) throw ValidationError("manifest is missing tensor 'psi_prev'");

    if (m.contains("annotations")) {
      for (const auto& entry : m.at("annotations")) {
        const auto name = entry.at("name").get<std::string>();
        const auto file = dir / entry.at("file").get<std::string>();
        LabelMap labels = read_npy_labels(file);
        if (labels.height != b.dims.height || labels.width != b.dims.width) {
          throw DimensionError(file.string() + ": annotation does not match the bundle's H x W");
        }
        if (name == "gt_labels") b.gt = std::move(labels);
        else if (name == "ood_mask") b.ood_mask = std::move(labels);
        else throw ValidationError("manifest lists unknown annotation '" + name + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": malformed manifest: " + e.what());
  }

  b.params.validate();
  const Shape expect_psi{b.dims.in_channels, b.dims.height, b.dims.width};
  if (b.psi_prev.shape() != expect_psi || b.params.hidden_channels() != b.dims.hidden_channels ||
      b.params.num_classes() != b.dims.num_classes || b.params.in_channels() != b.dims.in_channels) {
    throw DimensionError("bundle tensors disagree with manifest dims");
  }
  return b;
}

}  // namespace pgn
