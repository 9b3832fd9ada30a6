#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cx/hierarchy.hpp"
#include "cx/ingest.hpp"
#include "cx/layout.hpp"
#include "json.hpp"

namespace cx {

inline constexpr int kArtifactVersionMajor = 1;
inline constexpr int kArtifactVersionMinor = 0;

enum class ScopeKind { Feature, Region, Lasso };

/// What an annotation labels: one feature, one landmark's region on a level,
/// or a lasso of node ids on a level.
struct AnnotationScope {
  ScopeKind kind = ScopeKind::Feature;
  std::uint64_t feature_id = 0;
  std::size_t level = 0;
  std::uint32_t landmark = 0;
  std::vector<std::uint32_t> nodes;

  bool operator==(const AnnotationScope&) const = default;
};

struct Annotation {
  std::string id;
  AnnotationScope scope;
  std::string label;
  std::optional<std::string> color;
  std::string created_at;

  bool operator==(const Annotation&) const = default;
};

nlohmann::json to_json(const Annotation& a);
/// Throws BadRequest on a malformed object.
Annotation annotation_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BuildConfig& config);
BuildConfig build_config_from_json(const nlohmann::json& j);

struct ExplorerArtifact {
  FeatureCatalog catalog;
  EmbeddingMatrix embeddings;
  Hierarchy hierarchy;
  std::vector<LevelEmbedding> layouts;
  /// Latest annotation per id.
  std::map<std::string, Annotation> annotations;
  std::string created_at;

  /// Directory the artifact was loaded from or saved to; annotation upserts
  /// are appended to its log. Not part of equality.
  std::filesystem::path directory;

  bool operator==(const ExplorerArtifact& o) const {
    return catalog == o.catalog && embeddings == o.embeddings && hierarchy == o.hierarchy &&
           layouts == o.layouts && annotations == o.annotations && created_at == o.created_at;
  }
};

struct LevelSummary {
  std::size_t index = 0;
  std::size_t size = 0;
  bool operator==(const LevelSummary&) const = default;
};

struct Manifest {
  int version_major = kArtifactVersionMajor;
  int version_minor = kArtifactVersionMinor;
  std::string created_at;
  std::uint64_t seed = 0;
  BuildConfig config;
  std::vector<LevelSummary> levels;
  /// Payload path (relative to the artifact directory) -> FNV-1a 64 hex digest.
  std::map<std::string, std::string> checksums;
};

struct LoadStats {
  double seconds = 0.0;
  std::uintmax_t bytes = 0;
  std::size_t files = 0;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);

/// Writes every payload through a temporary file and rename, manifest last.
/// Annotations are compacted to one line per id.
Manifest save_artifact(const ExplorerArtifact& artifact, const std::filesystem::path& directory);

/// Loads and checksum-verifies an artifact, replaying the annotation log.
ExplorerArtifact load_artifact(const std::filesystem::path& directory, LoadStats* stats = nullptr);

Manifest read_manifest(const std::filesystem::path& directory);

/// Throws UnknownScope when the scope references a missing feature, level or node.
void validate_scope(const ExplorerArtifact& artifact, const AnnotationScope& scope);

/// Inserts or replaces by id (last write wins) and appends to the artifact's
/// log when it is bound to a directory. Returns the id.
std::string upsert_annotation(ExplorerArtifact& artifact, Annotation annotation);

struct AnnotationFilter {
  std::optional<std::size_t> level;
  std::optional<std::uint64_t> feature_id;
};

/// A level filter matches region and lasso scopes on that level and feature
/// scopes whose feature is a node of that level.
std::vector<Annotation> list_annotations(const ExplorerArtifact& artifact, const AnnotationFilter& filter = {});

/// Full build: hierarchy over the embeddings, then a layout per level.
/// Stage timings go to `log` when given.
ExplorerArtifact build_artifact(FeatureCatalog catalog, EmbeddingMatrix embeddings, const BuildConfig& config,
                                std::ostream* log = nullptr);

std::string utc_timestamp();

}  // namespace cx
