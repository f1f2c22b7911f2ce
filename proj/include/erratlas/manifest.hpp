#pragma once

#include <algorithm>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "erratlas/cascade.hpp"
#include "erratlas/csv.hpp"
#include "erratlas/error.hpp"
#include "erratlas/hash.hpp"

namespace erratlas {

// Keys accepted under "paths". Everything except "labels" is optional; which
// files a command needs is checked by the command.
inline constexpr std::array<std::string_view, 19> kManifestPathKeys = {
    "labels",          "overlap",     "superclasses",    "hypernyms",  "synset_names", "ground_truth",
    "multilabel",      "problematic", "non_prototypical", "real_labels", "pair_exclusions", "pairs",
    "ref_embeddings",  "ref_ids",     "ref_labels",      "eval_embeddings", "eval_ids", "text_embeddings",
    "text_ids",
};

struct AssetManifest {
  std::filesystem::path source;
  std::filesystem::path root;
  DatasetMode mode = DatasetMode::ImageNet;
  bool strict_imagenet = false;
  std::map<std::string, std::string> paths;  // key -> path as written (relative to root)
  std::string embedding_provenance;
  std::map<std::string, std::string> checksums;  // path as written -> sha256 hex
  std::string sha256;                           // of the manifest file itself

  bool has(std::string_view key) const { return paths.contains(std::string(key)); }

  std::filesystem::path resolve(std::string_view key) const {
    auto it = paths.find(std::string(key));
    if (it == paths.end()) return {};
    return root / it->second;
  }

  std::filesystem::path require(std::string_view key) const {
    if (!has(key)) fail(ErrorKind::Validation, "manifest " + source.string() + " has no '" + std::string(key) + "' path");
    return resolve(key);
  }
};

inline AssetManifest load_manifest(const std::filesystem::path& path) {
  AssetManifest m;
  m.source = path;
  m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const auto bytes = io::read_file(path);
  m.sha256 = sha256_hex(bytes);
  try {
    const auto j = nlohmann::json::parse(bytes);
    m.mode = parse_mode(j.value("dataset_mode", std::string("imagenet")));
    m.strict_imagenet = j.value("strict", false);
    m.embedding_provenance = j.value("embedding_provenance", std::string());
    for (const auto& [key, value] : j.at("paths").items()) {
      if (std::find(kManifestPathKeys.begin(), kManifestPathKeys.end(), key) == kManifestPathKeys.end()) {
        fail(ErrorKind::Validation, path.string() + ": unknown path key '" + key + "'");
      }
      m.paths[key] = value.get<std::string>();
    }
    if (j.contains("checksums")) {
      for (const auto& [file, digest] : j.at("checksums").items()) m.checksums[file] = digest.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  if (!m.has("labels")) fail(ErrorKind::Validation, path.string() + ": 'labels' path is required");
  for (const auto& [key, rel] : m.paths) {
    if (!std::filesystem::exists(m.root / rel)) {
      fail(ErrorKind::Io, path.string() + ": '" + key + "' file " + (m.root / rel).string() + " does not exist");
    }
  }
  return m;
}

inline void verify_checksums(const AssetManifest& m) {
  for (const auto& [rel, expected] : m.checksums) {
    const auto actual = sha256_file(m.root / rel);
    if (actual != expected) {
      fail(ErrorKind::ChecksumMismatch, rel + ": expected " + expected + ", found " + actual);
    }
  }
}

// --manifest wins; otherwise $ERRATLAS_ASSETS/manifest.json.
inline std::filesystem::path default_manifest_path(const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  if (const char* root = std::getenv("ERRATLAS_ASSETS")) return std::filesystem::path(root) / "manifest.json";
  fail(ErrorKind::InvalidArgument, "no --manifest given and ERRATLAS_ASSETS is not set");
}

}  // namespace erratlas
