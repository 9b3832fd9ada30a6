#include "cx/service.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>

#include "cx/analytics.hpp"
#include "cx/error.hpp"
#include "httplib.h"

namespace cx {
using nlohmann::json;

namespace {

constexpr std::string_view kPrefix = "/api";

// Shortest decimal that round-trips the float, so responses carry 32-bit geometry.
json float_json(float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::stod(std::string(buf, res.ptr));
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string_view::npos ? path.size() : j;
    if (end > i) parts.emplace_back(path.substr(i, end - i));
    i = end + 1;
  }
  return parts;
}

std::uint64_t parse_uint(const std::string& text, const char* what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw Error(ErrorCode::BadRequest, std::string(what) + " must be a non-negative integer");
  return v;
}

double parse_double(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(what);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::BadRequest, std::string(what) + " must be a number");
  }
}

template <typename T>
T query_or(const std::map<std::string, std::string>& q, const std::string& key, T fallback) {
  const auto it = q.find(key);
  if (it == q.end()) return fallback;
  if constexpr (std::is_floating_point_v<T>) {
    return static_cast<T>(parse_double(it->second, key.c_str()));
  } else {
    return static_cast<T>(parse_uint(it->second, key.c_str()));
  }
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadRequest, std::string("request body is not valid JSON: ") + e.what());
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

json error_json(ErrorCode code, const std::string& message) {
  return {{"error", {{"code", std::string(to_string(code))}, {"message", message}}}};
}

ServiceResponse json_response(const json& j, int status = 200) { return {status, "application/json", j.dump()}; }

std::set<std::uint32_t> contained(const std::vector<std::uint32_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownFeature:
    case ErrorCode::UnknownLandmark:
    case ErrorCode::BadLevel:
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::NotLoaded:
      return 503;
    case ErrorCode::BudgetExceeded:
      return 413;
    case ErrorCode::BadRequest:
    case ErrorCode::EmptySelection:
    case ErrorCode::BadVectorDim:
    case ErrorCode::MTooLarge:
    case ErrorCode::UnknownScope:
    case ErrorCode::InvalidArgument:
      return 400;
    default:
      return 500;
  }
}

ExplorerService::ExplorerService(std::shared_ptr<ExplorerArtifact> artifact, ServiceOptions options)
    : artifact_(std::move(artifact)), options_(options) {}

const ExplorerArtifact& ExplorerService::artifact() const {
  if (!artifact_) throw Error(ErrorCode::NotLoaded, "no artifact loaded");
  return *artifact_;
}

std::size_t ExplorerService::parse_level(const std::string& text) const {
  const auto level = parse_uint(text, "level");
  if (level >= artifact().hierarchy.depth())
    throw Error(ErrorCode::BadLevel, "level " + text + " does not exist (depth " +
                                         std::to_string(artifact().hierarchy.depth()) + ")",
                {static_cast<std::int64_t>(level)});
  return level;
}

ServiceResponse ExplorerService::handle(const ServiceRequest& request) {
  try {
    std::string_view path = request.path;
    if (path.substr(0, kPrefix.size()) != kPrefix) throw Error(ErrorCode::NotFound, "unknown route");
    const auto parts = split_path(path.substr(kPrefix.size()));
    const bool get = request.method == "GET";
    const bool post = request.method == "POST";
    const auto route_is = [&](std::initializer_list<std::string_view> want) {
      if (parts.size() != want.size()) return false;
      std::size_t i = 0;
      for (auto w : want) {
        if (w != "*" && parts[i] != w) return false;
        ++i;
      }
      return true;
    };
    const auto method_guard = [&](bool ok) {
      if (!ok) return std::optional<ServiceResponse>(json_response(error_json(ErrorCode::BadRequest, "method not allowed"), 405));
      return std::optional<ServiceResponse>();
    };

    if (route_is({"hierarchy"})) {
      if (auto r = method_guard(get)) return *r;
      return json_response(hierarchy_meta());
    }
    if (route_is({"levels", "*", "points"})) {
      if (auto r = method_guard(get)) return *r;
      return json_response(level_points(parse_level(parts[1])));
    }
    if (route_is({"levels", "*", "points.bin"})) {
      if (auto r = method_guard(get)) return *r;
      return {200, "application/octet-stream", level_points_binary(parse_level(parts[1]))};
    }
    if (route_is({"features", "*"})) {
      if (auto r = method_guard(get)) return *r;
      return json_response(feature_detail(parse_uint(parts[1], "feature id")));
    }
    if (route_is({"drilldown"})) {
      if (auto r = method_guard(post)) return *r;
      return json_response(drilldown(parse_body(request.body)));
    }
    if (route_is({"search"})) {
      if (auto r = method_guard(post)) return *r;
      return json_response(search(parse_body(request.body)));
    }
    if (route_is({"analytics", "outliers"})) {
      if (auto r = method_guard(get)) return *r;
      return json_response(outliers(request.query));
    }
    if (route_is({"analytics", "region-sizes"})) {
      if (auto r = method_guard(get)) return *r;
      return json_response(region_size_table(request.query));
    }
    if (route_is({"analytics", "duplicates"})) {
      if (auto r = method_guard(get)) return *r;
      return json_response(duplicates(request.query));
    }
    if (route_is({"annotations"})) {
      if (get) return json_response(annotations(request.query));
      if (post) return json_response(post_annotation(parse_body(request.body)));
      return *method_guard(false);
    }
    throw Error(ErrorCode::NotFound, "unknown route " + request.path);
  } catch (const Error& e) {
    std::string message = e.what();
    const std::string prefix = std::string(to_string(e.code())) + ": ";
    if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
    return json_response(error_json(e.code(), message), http_status(e.code()));
  } catch (const std::exception& e) {
    return json_response(error_json(ErrorCode::Internal, e.what()), 500);
  }
}

json ExplorerService::hierarchy_meta() const {
  const auto& a = artifact();
  json levels = json::array();
  for (std::size_t l = 0; l < a.hierarchy.depth(); ++l)
    levels.push_back({{"index", l}, {"size", a.hierarchy.levels[l].size()}});
  return {{"levels", levels},
          {"config", to_json(a.hierarchy.config)},
          {"seed", a.hierarchy.config.seed},
          {"feature_count", a.catalog.size()},
          {"dims", a.embeddings.dims}};
}

json ExplorerService::level_points(std::size_t level) const {
  const auto& a = artifact();
  const auto& lv = a.hierarchy.levels[level];
  const auto& pos = a.layouts[level].positions;
  std::map<std::uint32_t, std::size_t> sizes;
  if (level > 0) sizes = region_sizes(a.hierarchy, level);

  std::map<std::uint32_t, std::vector<std::string>> labels;
  {
    std::shared_lock lock(annotations_mutex_);
    const auto on_level = local_positions(lv);
    for (const auto& [id, ann] : a.annotations) {
      const auto& s = ann.scope;
      if (s.kind == ScopeKind::Feature) {
        const auto row = a.catalog.position(s.feature_id);
        if (row && on_level.contains(static_cast<std::uint32_t>(*row)))
          labels[static_cast<std::uint32_t>(*row)].push_back(ann.label);
      } else if (s.level == level) {
        if (s.kind == ScopeKind::Region) labels[s.landmark].push_back(ann.label);
        else
          for (auto n : contained(s.nodes)) labels[n].push_back(ann.label);
      }
    }
  }

  json points = json::array();
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const auto node = lv.nodes[i];
    const auto& rec = a.catalog.records()[node];
    json p = {{"node_id", node},
              {"feature_id", rec.feature_id},
              {"x", float_json(pos[i][0])},
              {"y", float_json(pos[i][1])},
              {"category", rec.category ? json(*rec.category) : json(nullptr)},
              {"annotation_labels", labels.contains(node) ? json(labels[node]) : json::array()}};
    if (level > 0) p["region_size"] = sizes.at(node);
    points.push_back(std::move(p));
  }
  return {{"level", level}, {"points", std::move(points)}};
}

std::string ExplorerService::level_points_binary(std::size_t level) const {
  const auto& pos = artifact().layouts[level].positions;
  EmbeddingMatrix m(pos.size(), 2);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    m.data[2 * i] = pos[i][0];
    m.data[2 * i + 1] = pos[i][1];
  }
  const auto bytes = encode_cxem(m);
  return {bytes.begin(), bytes.end()};
}

json ExplorerService::feature_detail(std::uint64_t feature_id) const {
  const auto& a = artifact();
  const auto row = a.catalog.position(feature_id);
  if (!row)
    throw Error(ErrorCode::UnknownFeature, "no feature " + std::to_string(feature_id),
                {static_cast<std::int64_t>(feature_id)});
  const auto& rec = a.catalog.records()[*row];
  json contexts = json::array();
  for (const auto& c : rec.contexts)
    contexts.push_back({{"tokens", c.tokens}, {"target_index", c.target_index}, {"activation", c.activation}});

  std::vector<std::pair<double, std::size_t>> sims;
  sims.reserve(a.catalog.size());
  for (std::size_t j = 0; j < a.catalog.size(); ++j)
    if (j != *row) sims.emplace_back(cosine(a.embeddings.row(*row), a.embeddings.row(j)), j);
  const std::size_t keep = std::min(options_.neighbor_count, sims.size());
  std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(keep), sims.end(),
                    [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
  json neighbors = json::array();
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = sims[i].second;
    neighbors.push_back({{"feature_id", a.catalog.records()[j].feature_id},
                         {"node_id", j},
                         {"explanation", a.catalog.records()[j].explanation},
                         {"cosine", sims[i].first}});
  }
  json anns = json::array();
  {
    std::shared_lock lock(annotations_mutex_);
    AnnotationFilter f;
    f.feature_id = feature_id;
    for (const auto& ann : list_annotations(a, f)) anns.push_back(to_json(ann));
  }
  return {{"feature_id", rec.feature_id},
          {"node_id", *row},
          {"explanation", rec.explanation},
          {"category", rec.category ? json(*rec.category) : json(nullptr)},
          {"contexts", std::move(contexts)},
          {"annotations", std::move(anns)},
          {"neighbors", std::move(neighbors)}};
}

json ExplorerService::drilldown(const json& body) const {
  const auto& a = artifact();
  std::size_t level = 0;
  std::vector<std::uint32_t> ids;
  std::string mode = "reoptimize";
  std::uint64_t seed = a.hierarchy.config.seed;
  try {
    level = body.at("level").get<std::size_t>();
    ids = body.at("landmark_ids").get<std::vector<std::uint32_t>>();
    if (body.contains("mode")) mode = body.at("mode").get<std::string>();
    if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadRequest, std::string("drilldown request: ") + e.what());
  }
  if (mode != "reoptimize" && mode != "stored")
    throw Error(ErrorCode::BadRequest, "mode must be 'reoptimize' or 'stored'");
  if (level >= a.hierarchy.depth() || level < 1)
    throw Error(ErrorCode::BadLevel, "drill-down needs a level in [1, " + std::to_string(a.hierarchy.depth() - 1) + "]",
                {static_cast<std::int64_t>(level)});

  SubEmbedding sub;
  if (mode == "stored") {
    sub = reveal_stored(a.hierarchy, a.layouts, level, ids);
  } else {
    const auto members = drill_down_members(a.hierarchy, level, ids);
    if (members.member_nodes.size() > options_.drilldown_budget)
      throw Error(ErrorCode::BudgetExceeded,
                  std::to_string(members.member_nodes.size()) + " members exceed the drill-down budget of " +
                      std::to_string(options_.drilldown_budget),
                  {static_cast<std::int64_t>(members.member_nodes.size())});
    sub = drill_down(a.hierarchy, a.layouts, level, ids, a.hierarchy.config.layout, seed);
  }
  json members = json::array();
  for (std::size_t m = 0; m < sub.member_nodes.size(); ++m) {
    const auto node = sub.member_nodes[m];
    members.push_back({{"node_id", node},
                       {"feature_id", a.catalog.records()[node].feature_id},
                       {"landmark", sub.member_landmarks[m]},
                       {"x", float_json(sub.positions[m][0])},
                       {"y", float_json(sub.positions[m][1])}});
  }
  return {{"level", level},
          {"member_level", level - 1},
          {"mode", mode},
          {"selected_landmarks", sub.selected_landmarks},
          {"members", std::move(members)}};
}

json ExplorerService::search(const json& body) const {
  const auto& a = artifact();
  if (!body.is_object()) throw Error(ErrorCode::BadRequest, "search body must be an object");
  std::size_t limit = 20;
  if (body.contains("limit")) {
    if (!body["limit"].is_number_unsigned()) throw Error(ErrorCode::BadRequest, "limit must be a non-negative integer");
    limit = body["limit"].get<std::size_t>();
  }
  json results = json::array();
  if (body.contains("vector")) {
    if (!body["vector"].is_array()) throw Error(ErrorCode::BadRequest, "vector must be an array of numbers");
    std::vector<float> q;
    for (const auto& v : body["vector"]) {
      if (!v.is_number()) throw Error(ErrorCode::BadRequest, "vector must be an array of numbers");
      q.push_back(v.get<float>());
    }
    if (q.size() != a.embeddings.dims)
      throw Error(ErrorCode::BadVectorDim,
                  "query has " + std::to_string(q.size()) + " dims, embeddings have " + std::to_string(a.embeddings.dims),
                  {static_cast<std::int64_t>(q.size()), static_cast<std::int64_t>(a.embeddings.dims)});
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t j = 0; j < a.catalog.size(); ++j) scored.emplace_back(cosine(q, a.embeddings.row(j)), j);
    const std::size_t keep = std::min(limit, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
    for (std::size_t i = 0; i < keep; ++i) {
      const auto j = scored[i].second;
      results.push_back({{"feature_id", a.catalog.records()[j].feature_id},
                         {"node_id", j},
                         {"explanation", a.catalog.records()[j].explanation},
                         {"score", scored[i].first}});
    }
    return {{"mode", "vector"}, {"results", std::move(results)}};
  }
  if (!body.contains("text") || !body["text"].is_string())
    throw Error(ErrorCode::BadRequest, "search needs 'text' or 'vector'");
  const auto query_tokens = tokenize(body["text"].get<std::string>());
  if (query_tokens.empty()) throw Error(ErrorCode::BadRequest, "search text has no tokens");
  const std::set<std::string> wanted(query_tokens.begin(), query_tokens.end());
  struct Hit {
    std::size_t score;
    std::uint64_t feature_id;
    std::size_t row;
  };
  std::vector<Hit> hits;
  for (std::size_t j = 0; j < a.catalog.size(); ++j) {
    const auto& rec = a.catalog.records()[j];
    const auto tokens = tokenize(rec.explanation);
    const std::set<std::string> have(tokens.begin(), tokens.end());
    std::size_t score = 0;
    for (const auto& t : wanted) score += have.contains(t);
    if (score > 0) hits.push_back({score, rec.feature_id, j});
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& x, const Hit& y) {
    return x.score > y.score || (x.score == y.score && x.feature_id < y.feature_id);
  });
  if (hits.size() > limit) hits.resize(limit);
  for (const auto& h : hits)
    results.push_back({{"feature_id", h.feature_id},
                       {"node_id", h.row},
                       {"explanation", a.catalog.records()[h.row].explanation},
                       {"score", h.score}});
  return {{"mode", "text"}, {"results", std::move(results)}};
}

json ExplorerService::outliers(const std::map<std::string, std::string>& query) const {
  const auto& a = artifact();
  const std::size_t level = query.contains("level") ? parse_level(query.at("level")) : 0;
  const auto m = query_or<std::size_t>(query, "m", 10);
  const auto limit = query_or<std::size_t>(query, "limit", 50);
  const auto& lv = a.hierarchy.levels[level];
  const auto scores = outlier_scores(a.layouts[level].positions, m);
  const auto order = triage_order(scores);
  json results = json::array();
  for (std::size_t r = 0; r < std::min(limit, order.size()); ++r) {
    const auto i = order[r];
    results.push_back({{"node_id", lv.nodes[i]},
                       {"feature_id", a.catalog.records()[lv.nodes[i]].feature_id},
                       {"score", scores[i]}});
  }
  return {{"level", level}, {"m", m}, {"results", std::move(results)}};
}

json ExplorerService::region_size_table(const std::map<std::string, std::string>& query) const {
  const auto& a = artifact();
  if (!query.contains("level")) throw Error(ErrorCode::BadRequest, "level is required");
  const std::size_t level = parse_level(query.at("level"));
  if (level < 1) throw Error(ErrorCode::BadLevel, "region sizes exist on levels >= 1", {0});
  const auto sizes = region_sizes(a.hierarchy, level);
  std::vector<std::pair<std::size_t, std::uint32_t>> rows;
  for (const auto& [node, size] : sizes) rows.emplace_back(size, node);
  std::sort(rows.begin(), rows.end());
  json results = json::array();
  for (const auto& [size, node] : rows)
    results.push_back({{"node_id", node}, {"feature_id", a.catalog.records()[node].feature_id}, {"size", size}});
  return {{"level", level}, {"results", std::move(results)}};
}

json ExplorerService::duplicates(const std::map<std::string, std::string>& query) const {
  const auto& a = artifact();
  const double threshold = query_or<double>(query, "threshold", 0.95);
  if (!(threshold > 0.0)) throw Error(ErrorCode::BadRequest, "threshold must be > 0");
  auto groups = duplicate_groups(a.embeddings, threshold);
  std::stable_sort(groups.begin(), groups.end(), [](const auto& x, const auto& y) { return x.size() > y.size(); });
  json out = json::array();
  for (const auto& g : groups) {
    json fids = json::array();
    for (auto row : g) fids.push_back(a.catalog.records()[row].feature_id);
    out.push_back({{"size", g.size()}, {"node_ids", g}, {"feature_ids", std::move(fids)}});
  }
  return {{"threshold", threshold}, {"groups", std::move(out)}};
}

json ExplorerService::annotations(const std::map<std::string, std::string>& query) const {
  const auto& a = artifact();
  AnnotationFilter f;
  if (query.contains("level")) f.level = parse_level(query.at("level"));
  if (query.contains("feature")) f.feature_id = parse_uint(query.at("feature"), "feature");
  std::shared_lock lock(annotations_mutex_);
  json out = json::array();
  for (const auto& ann : list_annotations(a, f)) out.push_back(to_json(ann));
  return {{"annotations", std::move(out)}};
}

json ExplorerService::post_annotation(const json& body) {
  artifact();
  Annotation ann = annotation_from_json(body);
  std::unique_lock lock(annotations_mutex_);
  const auto id = upsert_annotation(*artifact_, std::move(ann));
  return {{"id", id}, {"annotation", to_json(artifact_->annotations.at(id))}};
}

struct ApiServer::Impl {
  httplib::Server server;
};

ApiServer::ApiServer(ExplorerService& service) : impl_(std::make_unique<Impl>()) {
  const auto bridge = [&service](const httplib::Request& req, httplib::Response& res) {
    ServiceRequest r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    r.body = req.body;
    const auto out = service.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  impl_->server.Get(R"(/api/.*)", bridge);
  impl_->server.Post(R"(/api/.*)", bridge);
}

ApiServer::~ApiServer() = default;

int ApiServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void ApiServer::run() { impl_->server.listen_after_bind(); }

void ApiServer::stop() { impl_->server.stop(); }

}  // namespace cx
