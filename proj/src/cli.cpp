#include "cx/cli.hpp"

#include <chrono>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "cx/analytics.hpp"
#include "cx/error.hpp"
#include "cx/service.hpp"
#include "cx/store.hpp"

namespace cx {
namespace {

struct BuildFlags {
  std::string metadata;
  std::string embeddings;
  std::string out;
  std::vector<double> fractions;
  std::vector<std::size_t> counts;
  std::size_t k = 15;
  std::string metric = "cosine";
  std::size_t walks = 10;
  std::size_t walk_length = 10;
  std::size_t epochs = 0;
  std::uint64_t seed = 42;
  bool deterministic = false;
};

int cmd_build(const BuildFlags& f, std::ostream& out, std::ostream& err) {
  using clock = std::chrono::steady_clock;
  BuildConfig config;
  config.k = f.k;
  config.level_fractions = f.fractions;
  config.level_counts = f.counts;
  config.walks_per_node = f.walks;
  config.walk_length = f.walk_length;
  config.metric = parse_metric(f.metric);
  config.seed = f.seed;
  config.layout.epochs = f.epochs;
  config.layout.deterministic = f.deterministic;

  auto t0 = clock::now();
  FeatureCatalog catalog = load_feature_metadata(f.metadata);
  EmbeddingMatrix embeddings = load_embedding_matrix(f.embeddings, catalog.size());
  err << "  ingest: " << std::chrono::duration<double>(clock::now() - t0).count() << " s\n";
  level_sizes(embeddings.rows, config);

  ExplorerArtifact artifact = build_artifact(std::move(catalog), std::move(embeddings), config, &err);
  t0 = clock::now();
  save_artifact(artifact, f.out);
  err << "  save: " << std::chrono::duration<double>(clock::now() - t0).count() << " s\n";

  out << "artifact " << f.out << "\n";
  for (std::size_t l = 0; l < artifact.hierarchy.depth(); ++l)
    out << "level " << l << ": " << artifact.hierarchy.levels[l].size() << " nodes\n";
  return 0;
}

ApiServer* g_server = nullptr;
extern "C" void stop_server(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const std::string& artifact_dir, const std::string& listen, std::ostream& out, std::ostream& err) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--listen", "expected host:port");
  const std::string host = listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("--listen", "port is not a number");
  }
  LoadStats stats;
  auto artifact = std::make_shared<ExplorerArtifact>(load_artifact(artifact_dir, &stats));
  err << "loaded " << stats.files << " files (" << stats.bytes << " bytes) in " << stats.seconds << " s\n";
  ExplorerService service(artifact);
  ApiServer server(service);
  const int bound = server.bind(host, port);
  out << "listening on http://" << host << ":" << bound << "/api\n" << std::flush;
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  server.run();
  g_server = nullptr;
  return 0;
}

int cmd_stats(const std::string& artifact_dir, std::size_t m, std::size_t sample, std::ostream& out) {
  const ExplorerArtifact a = load_artifact(artifact_dir);
  const auto& cfg = a.hierarchy.config;
  out << "features " << a.catalog.size() << ", dims " << a.embeddings.dims << ", seed " << cfg.seed << "\n";
  out << "level\tsize\ttrustworthiness\n";
  for (std::size_t l = 0; l < a.hierarchy.depth(); ++l) {
    const std::size_t size = a.hierarchy.levels[l].size();
    out << l << "\t" << size << "\t";
    if (2 * size >= 3 * m + 2) {
      const double t = level_trustworthiness(a.embeddings, cfg.metric, a.hierarchy, a.layouts[l], m,
                                             size > sample ? sample : 0, cfg.seed);
      out << std::fixed << std::setprecision(4) << t << std::defaultfloat;
    } else {
      out << "n/a";
    }
    out << "\n";
  }
  return 0;
}

int cmd_outliers(const std::string& artifact_dir, std::size_t level, std::size_t m, std::size_t limit,
                 std::ostream& out) {
  const ExplorerArtifact a = load_artifact(artifact_dir);
  if (level >= a.hierarchy.depth())
    throw Error(ErrorCode::BadLevel, "level " + std::to_string(level) + " does not exist");
  const auto& lv = a.hierarchy.levels[level];
  const auto scores = outlier_scores(a.layouts[level].positions, m);
  const auto order = triage_order(scores);
  out << "rank\tnode_id\tfeature_id\tscore\texplanation\n";
  for (std::size_t r = 0; r < std::min(limit, order.size()); ++r) {
    const auto i = order[r];
    const auto& rec = a.catalog.records()[lv.nodes[i]];
    out << r + 1 << "\t" << lv.nodes[i] << "\t" << rec.feature_id << "\t" << scores[i] << "\t" << rec.explanation
        << "\n";
  }
  return 0;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

int cmd_export(const std::string& artifact_dir, const std::string& out_dir, std::ostream& out) {
  const ExplorerArtifact a = load_artifact(artifact_dir);
  std::filesystem::create_directories(out_dir);
  for (std::size_t l = 0; l < a.hierarchy.depth(); ++l) {
    const auto& lv = a.hierarchy.levels[l];
    const auto path = std::filesystem::path(out_dir) / ("level_" + std::to_string(l) + ".csv");
    std::ofstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    f << "node_id,feature_id,x,y,region_size,category\n";
    std::map<std::uint32_t, std::size_t> sizes;
    if (l > 0) sizes = region_sizes(a.hierarchy, l);
    f << std::setprecision(9);
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const auto& rec = a.catalog.records()[lv.nodes[i]];
      f << lv.nodes[i] << "," << rec.feature_id << "," << a.layouts[l].positions[i][0] << ","
        << a.layouts[l].positions[i][1] << ",";
      if (l > 0) f << sizes.at(lv.nodes[i]);
      f << "," << csv_field(rec.category.value_or("")) << "\n";
    }
    out << path.string() << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical concept explorer for sparse-autoencoder feature explanations", "cx"};
  app.require_subcommand(1);

  BuildFlags build;
  auto* b = app.add_subcommand("build", "Build an explorer artifact from metadata and embeddings");
  b->add_option("--metadata", build.metadata, "Line-delimited feature metadata")->required()->check(CLI::ExistingFile);
  b->add_option("--embeddings", build.embeddings, "CXEM embedding matrix")->required()->check(CLI::ExistingFile);
  b->add_option("--out", build.out, "Artifact directory")->required();
  auto* fractions = b->add_option("--fractions", build.fractions, "Landmark fraction per level, e.g. 0.2,0.2")
                        ->delimiter(',');
  auto* counts = b->add_option("--counts", build.counts, "Landmark count per level, e.g. 600,120")->delimiter(',');
  fractions->excludes(counts);
  b->add_option("--k", build.k, "Neighbors per node")->check(CLI::Range(2, 1000));
  b->add_option("--metric", build.metric, "cosine or euclidean")->check(CLI::IsMember({"cosine", "euclidean"}));
  b->add_option("--walks", build.walks, "Random walks per node")->check(CLI::PositiveNumber);
  b->add_option("--walk-length", build.walk_length, "Steps per walk")->check(CLI::PositiveNumber);
  b->add_option("--epochs", build.epochs, "Layout epochs (0 = automatic)");
  b->add_option("--seed", build.seed, "Random seed");
  b->add_flag("--deterministic", build.deterministic, "Single-stream layout optimization");

  std::string artifact_dir;
  std::string listen = "127.0.0.1:8080";
  auto* s = app.add_subcommand("serve", "Serve an artifact over HTTP");
  s->add_option("--artifact", artifact_dir, "Artifact directory")->required()->check(CLI::ExistingDirectory);
  s->add_option("--listen", listen, "host:port");

  std::size_t stats_m = 15, stats_sample = 2000;
  auto* st = app.add_subcommand("stats", "Print level sizes and layout trustworthiness");
  st->add_option("--artifact", artifact_dir, "Artifact directory")->required()->check(CLI::ExistingDirectory);
  st->add_option("--m", stats_m, "Neighborhood size for trustworthiness");
  st->add_option("--sample", stats_sample, "Points sampled per level above this size");

  std::size_t out_level = 0, out_m = 10, out_limit = 20;
  auto* o = app.add_subcommand("outliers", "Print the projection-proximity triage table");
  o->add_option("--artifact", artifact_dir, "Artifact directory")->required()->check(CLI::ExistingDirectory);
  o->add_option("--level", out_level, "Hierarchy level");
  o->add_option("--m", out_m, "Neighbor rank for the outlier distance");
  o->add_option("--limit", out_limit, "Rows to print");

  std::string export_dir;
  auto* e = app.add_subcommand("export", "Write per-level positions as CSV");
  e->add_option("--artifact", artifact_dir, "Artifact directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", export_dir, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    err << "run with --help for usage\n";
    return 2;
  }

  try {
    if (b->parsed()) return cmd_build(build, out, err);
    if (s->parsed()) return cmd_serve(artifact_dir, listen, out, err);
    if (st->parsed()) return cmd_stats(artifact_dir, stats_m, stats_sample, out);
    if (o->parsed()) return cmd_outliers(artifact_dir, out_level, out_m, out_limit, out);
    if (e->parsed()) return cmd_export(artifact_dir, export_dir, out);
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return ex.code() == ErrorCode::InvalidConfig || ex.code() == ErrorCode::LevelTooSmall ? 2 : 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cx
