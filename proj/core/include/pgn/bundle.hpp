#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "pgn/toynet.hpp"

namespace pgn {

/// A head + input stored as a directory of NPY files plus `manifest.json`.
/// The manifest is authoritative: every listed tensor is loaded and its shape
/// checked against the recorded one.
///
///   manifest.json
///   k_penult.npy b_penult.npy bn_gamma.npy bn_beta.npy bn_mean.npy
///   bn_var.npy k_last.npy b_last.npy psi_prev.npy
///   [gt_labels.npy] [ood_mask.npy]        (optional annotations)
struct Bundle {
  HeadDims dims;
  std::uint64_t seed = 0;
  SegHeadParams params;
  Tensor psi_prev;
  std::optional<LabelMap> gt;
  std::optional<LabelMap> ood_mask;
};

inline constexpr const char* kManifestName = "manifest.json";

/// Writes every tensor as f32. Creates `dir` if needed.
void write_bundle(const Bundle& bundle, const std::filesystem::path& dir);
Bundle read_bundle(const std::filesystem::path& dir);

nlohmann::ordered_json bundle_manifest(const Bundle& bundle);

/// Serialises to `path` with a trailing newline, creating parent directories.
void write_json(const nlohmann::ordered_json& doc, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace pgn
