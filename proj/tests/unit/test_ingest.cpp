#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "cx/error.hpp"
#include "cx/ingest.hpp"
#include "doctest.h"
#include "support/expect.hpp"
#include "support/fixtures.hpp"

using namespace cx;
using cx::testing::error_code_of;
using cx::testing::error_details_of;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string sentence_end_line() {
  std::string ctxs;
  for (int i = 0; i < 16; ++i) {
    if (i) ctxs += ",";
    ctxs += R"({"tokens":["The","end","."],"target_index":2,"activation":)" + std::to_string(1.0 + i) + "}";
  }
  return R"x({"feature_id":12378,"explanation":"This neuron captures sentence-end patterns (periods, ellipses)","contexts":[)x" +
         ctxs + "]}";
}

std::vector<std::uint8_t> header(std::uint32_t n, std::uint32_t d) {
  std::vector<std::uint8_t> b{'C', 'X', 'E', 'M'};
  for (std::uint32_t v : {n, d})
    for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  return b;
}

void push_float(std::vector<std::uint8_t>& b, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(u >> s));
}

}  // namespace

TEST_CASE("metadata line with sixteen contexts") {
  const auto dir = cx::testing::scratch_dir("ingest_meta");
  write_text(dir / "f.jsonl", sentence_end_line() + "\n");
  const auto catalog = load_feature_metadata(dir / "f.jsonl");
  REQUIRE(catalog.size() == 1);
  CHECK(catalog.records()[0].feature_id == 12378);
  CHECK(catalog.records()[0].contexts.size() == 16);
  CHECK(catalog.records()[0].contexts[3].activation == doctest::Approx(4.0));
  CHECK_FALSE(catalog.records()[0].category.has_value());
  CHECK(catalog.position(12378) == std::optional<std::size_t>(0));
}

TEST_CASE("empty metadata file") {
  const auto dir = cx::testing::scratch_dir("ingest_empty");
  write_text(dir / "f.jsonl", "");
  const auto path = dir / "f.jsonl";
  CHECK_CX_ERROR(load_feature_metadata(path), MalformedLine);
  CHECK(error_details_of([&] { load_feature_metadata(path); }) == std::vector<std::int64_t>{0});
  try {
    load_feature_metadata(path);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("no records") != std::string::npos);
  }
}

TEST_CASE("duplicate feature id") {
  const auto dir = cx::testing::scratch_dir("ingest_dup");
  write_text(dir / "f.jsonl",
             "{\"feature_id\":7,\"explanation\":\"a\"}\n{\"feature_id\":7,\"explanation\":\"b\"}\n");
  const auto path = dir / "f.jsonl";
  CHECK_CX_ERROR(load_feature_metadata(path), DuplicateFeatureId);
  CHECK(error_details_of([&] { load_feature_metadata(path); }) == std::vector<std::int64_t>{7});
}

TEST_CASE("metadata record validation") {
  CHECK_CX_ERROR(parse_feature_record("{\"feature_id\":1,\"explanation\":\"\"}", 3), EmptyExplanation);
  CHECK_CX_ERROR(parse_feature_record("not json", 4), MalformedLine);
  CHECK(error_details_of([] { parse_feature_record("[1]", 9); }) == std::vector<std::int64_t>{9});
  CHECK_CX_ERROR(parse_feature_record(R"({"feature_id":1,"explanation":"x","contexts":[{"tokens":[],"target_index":0}]})", 1),
                 MalformedLine);
  CHECK_CX_ERROR(parse_feature_record(R"({"feature_id":1,"explanation":"x","contexts":[{"tokens":["a"],"target_index":1}]})", 1),
                 MalformedLine);
  const auto rec = parse_feature_record(R"({"feature_id":5,"explanation":"dash","category":"punct"})", 1);
  CHECK(rec.contexts.empty());
  CHECK(rec.category == std::optional<std::string>("punct"));
}

TEST_CASE("metadata round trip preserves order") {
  std::vector<FeatureRecord> recs;
  for (std::uint64_t id : {9u, 3u, 5u}) {
    FeatureRecord r;
    r.feature_id = id;
    r.explanation = "feature " + std::to_string(id);
    r.contexts.push_back({{"a", "b"}, 1, 0.5 * static_cast<double>(id)});
    if (id == 3) r.category = "x";
    recs.push_back(r);
  }
  const FeatureCatalog catalog(recs);
  const auto dir = cx::testing::scratch_dir("ingest_roundtrip");
  write_feature_metadata(catalog, dir / "c.jsonl");
  const auto back = load_feature_metadata(dir / "c.jsonl");
  CHECK(back == catalog);
  CHECK(back.records()[0].feature_id == 9);
}

TEST_CASE("cxem identity payload") {
  auto bytes = header(3, 2);
  for (float f : {1.f, 0.f, 0.f, 1.f, 1.f, 1.f}) push_float(bytes, f);
  const auto m = parse_cxem(bytes);
  CHECK(m.rows == 3);
  CHECK(m.dims == 2);
  CHECK(m.row(2)[0] == 1.0f);
  CHECK(m.row(2)[1] == 1.0f);
}

TEST_CASE("cxem truncated and malformed payloads") {
  auto bytes = header(10, 2);
  for (int i = 0; i < 18; ++i) push_float(bytes, 1.0f);
  CHECK_CX_ERROR(parse_cxem(bytes), TruncatedFile);

  auto bad = header(1, 1);
  bad[0] = 'X';
  push_float(bad, 1.0f);
  CHECK_CX_ERROR(parse_cxem(bad), BadMagic);

  auto nan = header(2, 2);
  for (float f : {1.f, 1.f, 1.f, std::numeric_limits<float>::quiet_NaN()}) push_float(nan, f);
  CHECK_CX_ERROR(parse_cxem(nan), NonFiniteValue);
  CHECK(error_details_of([&] { parse_cxem(nan); }) == std::vector<std::int64_t>{1, 1});

  CHECK_CX_ERROR(parse_cxem(std::vector<std::uint8_t>{'C', 'X'}), TruncatedFile);
}

TEST_CASE("embedding matrix row count and zero rows") {
  const auto dir = cx::testing::scratch_dir("ingest_cxem");
  EmbeddingMatrix m(3, 2, {1, 0, 0, 1, 1, 1});
  write_cxem(m, dir / "e.cxem");
  CHECK(load_embedding_matrix(dir / "e.cxem", 3) == m);
  CHECK_CX_ERROR(load_embedding_matrix(dir / "e.cxem", 4), ShapeMismatch);
  CHECK(error_details_of([&] { load_embedding_matrix(dir / "e.cxem", 4); }) == std::vector<std::int64_t>{3, 4});

  EmbeddingMatrix z(2, 2, {1, 1, 0, 0});
  write_cxem(z, dir / "z.cxem");
  CHECK_CX_ERROR(load_embedding_matrix(dir / "z.cxem", 2), ZeroEmbeddingRow);
  CHECK_CX_ERROR(load_embedding_matrix(dir / "missing.cxem", 2), IoError);
}

TEST_CASE("cxem round trip property") {
  cx::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(40), d = 1 + rng.below(12);
    EmbeddingMatrix m(n, d);
    for (auto& v : m.data) v = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform(-20, 20)));
    CHECK(parse_cxem(encode_cxem(m)) == m);
    CHECK(encode_cxem(m).size() == 12 + 4 * n * d);
  }
}
