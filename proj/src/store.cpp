#include "cx/store.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>
#include <system_error>

#include "cx/error.hpp"

namespace cx {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormatName = "concept-explorer-artifact";
constexpr const char* kManifest = "manifest.json";
constexpr const char* kCatalog = "catalog.jsonl";
constexpr const char* kEmbeddings = "embeddings.cxem";
constexpr const char* kAnnotations = "annotations.log";

std::string level_file(std::size_t level, const char* suffix) {
  return "levels/" + std::to_string(level) + "." + suffix;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingPayload, "missing payload " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes through `<path>.tmp` and renames into place.
void write_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "rename failed for " + path.string() + ": " + ec.message());
}

std::vector<std::uint8_t> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

json graph_to_json(const SymmetricGraph& g) {
  const auto& w = g.weights;
  return {{"rows", w.rows}, {"row_ptr", w.row_ptr}, {"col_idx", w.col_idx}, {"values", w.values}};
}

SymmetricGraph graph_from_json(const json& j) {
  SymmetricGraph g;
  auto& w = g.weights;
  w.rows = w.cols = j.at("rows").get<std::size_t>();
  w.row_ptr = j.at("row_ptr").get<std::vector<std::size_t>>();
  w.col_idx = j.at("col_idx").get<std::vector<std::uint32_t>>();
  w.values = j.at("values").get<std::vector<double>>();
  if (w.row_ptr.size() != w.rows + 1 || w.col_idx.size() != w.values.size() || w.row_ptr.back() != w.values.size())
    throw Error(ErrorCode::SerializationError, "inconsistent graph payload");
  return g;
}

EmbeddingMatrix positions_matrix(const Positions& p) {
  EmbeddingMatrix m(p.size(), 2);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m.data[2 * i] = p[i][0];
    m.data[2 * i + 1] = p[i][1];
  }
  return m;
}

Positions positions_from_matrix(const EmbeddingMatrix& m) {
  if (m.dims != 2) throw Error(ErrorCode::SerializationError, "positions must have 2 columns");
  Positions p(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) p[i] = {m.data[2 * i], m.data[2 * i + 1]};
  return p;
}

std::string scope_kind_name(ScopeKind k) {
  switch (k) {
    case ScopeKind::Feature: return "feature";
    case ScopeKind::Region: return "region";
    case ScopeKind::Lasso: return "lasso";
  }
  return "feature";
}

[[noreturn]] void bad_annotation(const std::string& why) { throw Error(ErrorCode::BadRequest, "annotation: " + why); }

std::string annotations_text(const std::map<std::string, Annotation>& annotations) {
  std::string out;
  for (const auto& [id, a] : annotations) out += to_json(a).dump() + "\n";
  return out;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json to_json(const Annotation& a) {
  json scope = {{"kind", scope_kind_name(a.scope.kind)}};
  switch (a.scope.kind) {
    case ScopeKind::Feature: scope["feature_id"] = a.scope.feature_id; break;
    case ScopeKind::Region:
      scope["level"] = a.scope.level;
      scope["landmark"] = a.scope.landmark;
      break;
    case ScopeKind::Lasso:
      scope["level"] = a.scope.level;
      scope["nodes"] = a.scope.nodes;
      break;
  }
  json j = {{"id", a.id}, {"scope", scope}, {"label", a.label}, {"created_at", a.created_at}};
  if (a.color) j["color"] = *a.color;
  return j;
}

Annotation annotation_from_json(const json& j) {
  if (!j.is_object()) bad_annotation("expected an object");
  Annotation a;
  try {
    a.id = j.at("id").get<std::string>();
    a.label = j.at("label").get<std::string>();
    if (j.contains("created_at")) a.created_at = j.at("created_at").get<std::string>();
    if (j.contains("color") && !j.at("color").is_null()) a.color = j.at("color").get<std::string>();
    const auto& s = j.at("scope");
    const auto kind = s.at("kind").get<std::string>();
    if (kind == "feature") {
      a.scope.kind = ScopeKind::Feature;
      a.scope.feature_id = s.at("feature_id").get<std::uint64_t>();
    } else if (kind == "region") {
      a.scope.kind = ScopeKind::Region;
      a.scope.level = s.at("level").get<std::size_t>();
      a.scope.landmark = s.at("landmark").get<std::uint32_t>();
    } else if (kind == "lasso") {
      a.scope.kind = ScopeKind::Lasso;
      a.scope.level = s.at("level").get<std::size_t>();
      a.scope.nodes = s.at("nodes").get<std::vector<std::uint32_t>>();
    } else {
      bad_annotation("unknown scope kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    bad_annotation(e.what());
  }
  if (a.id.empty()) bad_annotation("id must be non-empty");
  if (a.color) {
    static const std::regex hex("#([0-9a-fA-F]{3}|[0-9a-fA-F]{6})");
    if (!std::regex_match(*a.color, hex)) bad_annotation("color must be a hex string like #a1b2c3");
  }
  return a;
}

json to_json(const BuildConfig& c) {
  return {
      {"k", c.k},
      {"level_fractions", c.level_fractions},
      {"level_counts", c.level_counts},
      {"walks_per_node", c.walks_per_node},
      {"walk_length", c.walk_length},
      {"metric", std::string(to_string(c.metric))},
      {"seed", c.seed},
      {"exact_threshold", c.exact_threshold},
      {"threads", c.threads},
      {"smooth",
       {{"tol", c.smooth.tol},
        {"max_iter", c.smooth.max_iter},
        {"min_sigma", c.smooth.min_sigma},
        {"max_sigma", c.smooth.max_sigma}}},
      {"layout",
       {{"min_dist", c.layout.min_dist},
        {"spread", c.layout.spread},
        {"epochs", c.layout.epochs},
        {"initial_lr", c.layout.initial_lr},
        {"neg_samples", c.layout.neg_samples},
        {"init", std::string(to_string(c.layout.init))},
        {"deterministic", c.layout.deterministic},
        {"threads", c.layout.threads}}},
  };
}

BuildConfig build_config_from_json(const json& j) {
  BuildConfig c;
  try {
    c.k = j.at("k").get<std::size_t>();
    c.level_fractions = j.at("level_fractions").get<std::vector<double>>();
    c.level_counts = j.at("level_counts").get<std::vector<std::size_t>>();
    c.walks_per_node = j.at("walks_per_node").get<std::size_t>();
    c.walk_length = j.at("walk_length").get<std::size_t>();
    c.metric = parse_metric(j.at("metric").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.exact_threshold = j.at("exact_threshold").get<std::size_t>();
    c.threads = j.at("threads").get<std::size_t>();
    const auto& s = j.at("smooth");
    c.smooth.tol = s.at("tol").get<double>();
    c.smooth.max_iter = s.at("max_iter").get<std::size_t>();
    c.smooth.min_sigma = s.at("min_sigma").get<double>();
    c.smooth.max_sigma = s.at("max_sigma").get<double>();
    const auto& l = j.at("layout");
    c.layout.min_dist = l.at("min_dist").get<double>();
    c.layout.spread = l.at("spread").get<double>();
    c.layout.epochs = l.at("epochs").get<std::size_t>();
    c.layout.initial_lr = l.at("initial_lr").get<double>();
    c.layout.neg_samples = l.at("neg_samples").get<std::size_t>();
    c.layout.init = parse_init_method(l.at("init").get<std::string>());
    c.layout.deterministic = l.at("deterministic").get<bool>();
    c.layout.threads = l.at("threads").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SerializationError, std::string("build config: ") + e.what());
  }
  return c;
}

Manifest save_artifact(const ExplorerArtifact& artifact, const fs::path& directory) {
  std::error_code ec;
  fs::create_directories(directory / "levels", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + directory.string() + ": " + ec.message());

  Manifest manifest;
  manifest.created_at = artifact.created_at;
  manifest.seed = artifact.hierarchy.config.seed;
  manifest.config = artifact.hierarchy.config;
  const auto put = [&](const std::string& rel, const std::vector<std::uint8_t>& bytes) {
    write_atomic(directory / rel, bytes);
    manifest.checksums[rel] = hex64(fnv1a64(bytes));
  };

  std::string catalog;
  for (const auto& r : artifact.catalog.records()) catalog += format_feature_record(r) + "\n";
  put(kCatalog, to_bytes(catalog));
  put(kEmbeddings, encode_cxem(artifact.embeddings));

  const auto& levels = artifact.hierarchy.levels;
  if (artifact.layouts.size() != levels.size())
    throw Error(ErrorCode::SerializationError, "artifact needs one layout per level");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& lv = levels[l];
    const auto& emb = artifact.layouts[l];
    manifest.levels.push_back({l, lv.size()});
    const json relations = {{"level", l},
                            {"nodes", lv.nodes},
                            {"landmarks", lv.landmarks},
                            {"influence", lv.influence},
                            {"epoch_count", emb.epoch_count},
                            {"objective_trace", emb.objective_trace}};
    put(level_file(l, "relations.json"), to_bytes(relations.dump()));
    put(level_file(l, "graph.json"), to_bytes(graph_to_json(lv.graph).dump()));
    put(level_file(l, "positions.cxem"), encode_cxem(positions_matrix(emb.positions)));
    if (l > 0) {
      const auto& s = lv.similarity;
      put(level_file(l, "similarity.cxem"), encode_cxem(EmbeddingMatrix(s.n, s.n, s.values)));
    }
  }
  // The annotation log is append-only after save, so it carries no checksum.
  write_atomic(directory / kAnnotations, to_bytes(annotations_text(artifact.annotations)));

  json levels_json = json::array();
  for (const auto& s : manifest.levels) levels_json.push_back({{"index", s.index}, {"size", s.size}});
  const json mj = {{"format", kFormatName},
                   {"version", std::to_string(manifest.version_major) + "." + std::to_string(manifest.version_minor)},
                   {"created_at", manifest.created_at},
                   {"seed", manifest.seed},
                   {"config", to_json(manifest.config)},
                   {"levels", levels_json},
                   {"files", manifest.checksums}};
  write_atomic(directory / kManifest, to_bytes(mj.dump(2) + "\n"));
  return manifest;
}

Manifest read_manifest(const fs::path& directory) {
  const auto bytes = read_bytes(directory / kManifest);
  json mj;
  try {
    mj = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SerializationError, std::string("manifest: ") + e.what());
  }
  Manifest m;
  try {
    if (mj.at("format").get<std::string>() != kFormatName)
      throw Error(ErrorCode::SerializationError, "not an explorer artifact");
    const auto version = mj.at("version").get<std::string>();
    const auto dot = version.find('.');
    m.version_major = std::stoi(version.substr(0, dot));
    m.version_minor = dot == std::string::npos ? 0 : std::stoi(version.substr(dot + 1));
    if (m.version_major > kArtifactVersionMajor)
      throw Error(ErrorCode::VersionUnsupported, "artifact version " + version + " is newer than supported " +
                                                     std::to_string(kArtifactVersionMajor) + ".x");
    m.created_at = mj.at("created_at").get<std::string>();
    m.seed = mj.at("seed").get<std::uint64_t>();
    m.config = build_config_from_json(mj.at("config"));
    for (const auto& l : mj.at("levels")) m.levels.push_back({l.at("index").get<std::size_t>(), l.at("size").get<std::size_t>()});
    m.checksums = mj.at("files").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SerializationError, std::string("manifest: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::SerializationError, "manifest: unreadable version");
  }
  return m;
}

ExplorerArtifact load_artifact(const fs::path& directory, LoadStats* stats) {
  const auto start = std::chrono::steady_clock::now();
  const Manifest manifest = read_manifest(directory);
  LoadStats local;

  const auto payload = [&](const std::string& rel) {
    const auto it = manifest.checksums.find(rel);
    if (it == manifest.checksums.end()) throw Error(ErrorCode::MissingPayload, "manifest does not list " + rel);
    auto bytes = read_bytes(directory / rel);
    if (hex64(fnv1a64(bytes)) != it->second)
      throw Error(ErrorCode::ChecksumMismatch, "checksum mismatch in " + rel);
    local.bytes += bytes.size();
    ++local.files;
    return bytes;
  };
  const auto payload_json = [&](const std::string& rel) {
    const auto bytes = payload(rel);
    try {
      return json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::SerializationError, rel + ": " + e.what());
    }
  };

  ExplorerArtifact a;
  a.created_at = manifest.created_at;
  a.directory = directory;
  {
    const auto bytes = payload(kCatalog);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::vector<FeatureRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty()) records.push_back(parse_feature_record(line, line_no));
    }
    a.catalog = FeatureCatalog(std::move(records));
  }
  a.embeddings = parse_cxem(payload(kEmbeddings));
  if (a.embeddings.rows != a.catalog.size())
    throw Error(ErrorCode::ShapeMismatch, "embedding rows do not match catalog",
                {static_cast<std::int64_t>(a.embeddings.rows), static_cast<std::int64_t>(a.catalog.size())});

  a.hierarchy.config = manifest.config;
  for (const auto& summary : manifest.levels) {
    const std::size_t l = summary.index;
    Level lv;
    LevelEmbedding emb;
    emb.level = l;
    try {
      const json rel = payload_json(level_file(l, "relations.json"));
      lv.nodes = rel.at("nodes").get<std::vector<std::uint32_t>>();
      lv.landmarks = rel.at("landmarks").get<std::vector<std::uint32_t>>();
      lv.influence = rel.at("influence").get<std::vector<std::uint32_t>>();
      emb.epoch_count = rel.at("epoch_count").get<std::size_t>();
      emb.objective_trace = rel.at("objective_trace").get<std::vector<double>>();
      lv.graph = graph_from_json(payload_json(level_file(l, "graph.json")));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SerializationError, "level " + std::to_string(l) + ": " + e.what());
    }
    if (lv.nodes.size() != summary.size)
      throw Error(ErrorCode::SerializationError, "level " + std::to_string(l) + " size disagrees with manifest");
    emb.positions = positions_from_matrix(parse_cxem(payload(level_file(l, "positions.cxem"))));
    if (l > 0) {
      auto s = parse_cxem(payload(level_file(l, "similarity.cxem")));
      lv.similarity = LandmarkSimilarity{s.rows, std::move(s.data)};
    }
    a.hierarchy.levels.push_back(std::move(lv));
    a.layouts.push_back(std::move(emb));
  }

  if (fs::exists(directory / kAnnotations)) {
    std::ifstream in(directory / kAnnotations);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        Annotation ann = annotation_from_json(json::parse(line));
        a.annotations[ann.id] = std::move(ann);
      } catch (const std::exception& e) {
        throw Error(ErrorCode::SerializationError, std::string("annotations.log: ") + e.what());
      }
    }
  }
  local.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (stats) *stats = local;
  return a;
}

void validate_scope(const ExplorerArtifact& artifact, const AnnotationScope& scope) {
  const auto& levels = artifact.hierarchy.levels;
  switch (scope.kind) {
    case ScopeKind::Feature:
      if (!artifact.catalog.position(scope.feature_id))
        throw Error(ErrorCode::UnknownScope, "no feature " + std::to_string(scope.feature_id),
                    {static_cast<std::int64_t>(scope.feature_id)});
      return;
    case ScopeKind::Region: {
      if (scope.level < 1 || scope.level >= levels.size())
        throw Error(ErrorCode::UnknownScope, "regions exist on levels 1.." + std::to_string(levels.size() - 1));
      const auto& nodes = levels[scope.level].nodes;
      if (std::find(nodes.begin(), nodes.end(), scope.landmark) == nodes.end())
        throw Error(ErrorCode::UnknownScope, "node " + std::to_string(scope.landmark) + " is not on level " +
                                                 std::to_string(scope.level));
      return;
    }
    case ScopeKind::Lasso: {
      if (scope.level >= levels.size()) throw Error(ErrorCode::UnknownScope, "no level " + std::to_string(scope.level));
      if (scope.nodes.empty()) throw Error(ErrorCode::UnknownScope, "lasso selects no nodes");
      const auto pos = local_positions(levels[scope.level]);
      for (auto n : scope.nodes)
        if (!pos.contains(n))
          throw Error(ErrorCode::UnknownScope, "node " + std::to_string(n) + " is not on level " +
                                                   std::to_string(scope.level));
      return;
    }
  }
}

std::string upsert_annotation(ExplorerArtifact& artifact, Annotation annotation) {
  validate_scope(artifact, annotation.scope);
  if (annotation.id.empty()) throw Error(ErrorCode::BadRequest, "annotation id must be non-empty");
  if (annotation.created_at.empty()) annotation.created_at = utc_timestamp();
  if (!artifact.directory.empty()) {
    std::ofstream log(artifact.directory / kAnnotations, std::ios::app);
    if (!log) throw Error(ErrorCode::IoError, "cannot append to annotation log");
    log << to_json(annotation).dump() << '\n';
  }
  std::string id = annotation.id;
  artifact.annotations[id] = std::move(annotation);
  return id;
}

std::vector<Annotation> list_annotations(const ExplorerArtifact& artifact, const AnnotationFilter& filter) {
  std::vector<Annotation> out;
  std::optional<std::unordered_map<std::uint32_t, std::uint32_t>> level_nodes;
  if (filter.level && *filter.level < artifact.hierarchy.depth())
    level_nodes = local_positions(artifact.hierarchy.levels[*filter.level]);
  for (const auto& [id, a] : artifact.annotations) {
    if (filter.feature_id) {
      if (a.scope.kind != ScopeKind::Feature || a.scope.feature_id != *filter.feature_id) continue;
    }
    if (filter.level) {
      if (a.scope.kind == ScopeKind::Feature) {
        const auto row = artifact.catalog.position(a.scope.feature_id);
        if (!level_nodes || !row || !level_nodes->contains(static_cast<std::uint32_t>(*row))) continue;
      } else if (a.scope.level != *filter.level) {
        continue;
      }
    }
    out.push_back(a);
  }
  return out;
}

ExplorerArtifact build_artifact(FeatureCatalog catalog, EmbeddingMatrix embeddings, const BuildConfig& config,
                                std::ostream* log) {
  if (catalog.size() != embeddings.rows)
    throw Error(ErrorCode::ShapeMismatch, "catalog and embeddings disagree on row count",
                {static_cast<std::int64_t>(embeddings.rows), static_cast<std::int64_t>(catalog.size())});
  using clock = std::chrono::steady_clock;
  const auto stage = [&](const char* name, clock::time_point since) {
    if (log)
      *log << "  " << name << ": " << std::chrono::duration<double>(clock::now() - since).count() << " s\n";
  };
  ExplorerArtifact a;
  auto t0 = clock::now();
  a.hierarchy = build_hierarchy(embeddings, config);
  stage("graphs + hierarchy", t0);
  t0 = clock::now();
  a.layouts = embed_all_levels(a.hierarchy, config.layout, config.seed);
  stage("layouts", t0);
  a.catalog = std::move(catalog);
  a.embeddings = std::move(embeddings);
  a.created_at = utc_timestamp();
  return a;
}

}  // namespace cx
