#include "cx/ingest.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cx/error.hpp"
#include "json.hpp"

namespace cx {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'C', 'X', 'E', 'M'};
constexpr std::size_t kHeaderBytes = 12;

std::uint32_t read_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

[[noreturn]] void malformed(std::size_t line_no, const std::string& why) {
  throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no) + ": " + why,
              {static_cast<std::int64_t>(line_no)});
}

ActivationContext parse_context(const json& j, std::size_t line_no) {
  if (!j.is_object()) malformed(line_no, "context is not an object");
  ActivationContext ctx;
  const auto tokens = j.find("tokens");
  if (tokens == j.end() || !tokens->is_array()) malformed(line_no, "context.tokens missing");
  for (const auto& t : *tokens) {
    if (!t.is_string()) malformed(line_no, "context token is not a string");
    ctx.tokens.push_back(t.get<std::string>());
  }
  if (ctx.tokens.empty()) malformed(line_no, "context has no tokens");
  const auto target = j.find("target_index");
  if (target == j.end() || !target->is_number_integer())
    malformed(line_no, "context.target_index missing");
  const auto ti = target->get<std::int64_t>();
  if (ti < 0 || static_cast<std::size_t>(ti) >= ctx.tokens.size())
    malformed(line_no, "context.target_index out of range");
  ctx.target_index = static_cast<std::size_t>(ti);
  if (const auto act = j.find("activation"); act != j.end()) {
    if (!act->is_number()) malformed(line_no, "context.activation is not a number");
    ctx.activation = act->get<double>();
    if (!std::isfinite(ctx.activation) || ctx.activation < 0.0)
      malformed(line_no, "context.activation must be finite and >= 0");
  }
  return ctx;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t n, std::size_t d, std::vector<float> values)
    : rows(n), dims(d), data(std::move(values)) {
  if (data.size() != rows * dims)
    throw Error(ErrorCode::ShapeMismatch, "value count does not match rows*dims",
                {static_cast<std::int64_t>(data.size()), static_cast<std::int64_t>(rows * dims)});
}

FeatureCatalog::FeatureCatalog(std::vector<FeatureRecord> records) : records_(std::move(records)) {
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.explanation.empty())
      throw Error(ErrorCode::EmptyExplanation, "feature " + std::to_string(r.feature_id),
                  {static_cast<std::int64_t>(i + 1)});
    if (!index_.emplace(r.feature_id, i).second)
      throw Error(ErrorCode::DuplicateFeatureId, "feature id " + std::to_string(r.feature_id),
                  {static_cast<std::int64_t>(r.feature_id)});
  }
}

std::optional<std::size_t> FeatureCatalog::position(std::uint64_t feature_id) const {
  const auto it = index_.find(feature_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

FeatureRecord parse_feature_record(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    malformed(line_no, e.what());
  }
  if (!j.is_object()) malformed(line_no, "not an object");

  FeatureRecord rec;
  const auto id = j.find("feature_id");
  if (id == j.end() || !id->is_number_integer() || id->get<std::int64_t>() < 0)
    malformed(line_no, "feature_id must be a non-negative integer");
  rec.feature_id = id->get<std::uint64_t>();

  const auto expl = j.find("explanation");
  if (expl == j.end() || !expl->is_string()) malformed(line_no, "explanation must be a string");
  rec.explanation = expl->get<std::string>();
  if (rec.explanation.empty())
    throw Error(ErrorCode::EmptyExplanation, "line " + std::to_string(line_no),
                {static_cast<std::int64_t>(line_no)});

  if (const auto ctxs = j.find("contexts"); ctxs != j.end() && !ctxs->is_null()) {
    if (!ctxs->is_array()) malformed(line_no, "contexts must be an array");
    rec.contexts.reserve(ctxs->size());
    for (const auto& c : *ctxs) rec.contexts.push_back(parse_context(c, line_no));
  }
  if (const auto cat = j.find("category"); cat != j.end() && !cat->is_null()) {
    if (!cat->is_string()) malformed(line_no, "category must be a string");
    rec.category = cat->get<std::string>();
  }
  return rec;
}

std::string format_feature_record(const FeatureRecord& record) {
  json ctxs = json::array();
  for (const auto& c : record.contexts) {
    ctxs.push_back({{"tokens", c.tokens},
                    {"target_index", c.target_index},
                    {"activation", c.activation}});
  }
  json j = {{"feature_id", record.feature_id},
            {"explanation", record.explanation},
            {"contexts", std::move(ctxs)}};
  if (record.category) j["category"] = *record.category;
  return j.dump();
}

FeatureCatalog load_feature_metadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<FeatureRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    records.push_back(parse_feature_record(line, line_no));
  }
  if (records.empty()) throw Error(ErrorCode::MalformedLine, "no records", {0});
  return FeatureCatalog(std::move(records));
}

void write_feature_metadata(const FeatureCatalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& r : catalog.records()) out << format_feature_record(r) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

EmbeddingMatrix parse_cxem(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw Error(ErrorCode::TruncatedFile, "missing CXEM header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "expected CXEM magic bytes");
  const std::size_t n = read_u32_le(bytes.data() + 4);
  const std::size_t d = read_u32_le(bytes.data() + 8);
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (payload < n * d * 4)
    throw Error(ErrorCode::TruncatedFile,
                "payload holds " + std::to_string(payload / 4) + " values, header claims " +
                    std::to_string(n * d));
  if (payload > n * d * 4)
    throw Error(ErrorCode::ShapeMismatch, "trailing bytes after CXEM payload",
                {static_cast<std::int64_t>(payload / 4), static_cast<std::int64_t>(n * d)});
  EmbeddingMatrix m(n, d);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < n * d; ++i, p += 4) {
    const float v = std::bit_cast<float>(read_u32_le(p));
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteValue,
                  "row " + std::to_string(i / std::max<std::size_t>(d, 1)) + " col " +
                      std::to_string(i % std::max<std::size_t>(d, 1)),
                  {static_cast<std::int64_t>(i / d), static_cast<std::int64_t>(i % d)});
    m.data[i] = v;
  }
  return m;
}

EmbeddingMatrix read_cxem(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return parse_cxem(bytes);
}

std::vector<std::uint8_t> encode_cxem(const EmbeddingMatrix& matrix) {
  std::vector<std::uint8_t> bytes(kHeaderBytes + matrix.data.size() * 4);
  std::memcpy(bytes.data(), kMagic, 4);
  write_u32_le(bytes.data() + 4, static_cast<std::uint32_t>(matrix.rows));
  write_u32_le(bytes.data() + 8, static_cast<std::uint32_t>(matrix.dims));
  std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (float v : matrix.data) {
    write_u32_le(p, std::bit_cast<std::uint32_t>(v));
    p += 4;
  }
  return bytes;
}

void write_cxem(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  const auto bytes = encode_cxem(matrix);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

void require_nonzero_rows(const EmbeddingMatrix& matrix) {
  for (std::size_t i = 0; i < matrix.rows; ++i) {
    bool zero = true;
    for (float v : matrix.row(i)) {
      if (v != 0.0f) {
        zero = false;
        break;
      }
    }
    if (zero)
      throw Error(ErrorCode::ZeroEmbeddingRow, "row " + std::to_string(i) + " is all zeros",
                  {static_cast<std::int64_t>(i)});
  }
}

EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path, std::size_t expected_rows) {
  if (expected_rows == 0) throw Error(ErrorCode::InvalidArgument, "expected_rows must be > 0");
  EmbeddingMatrix m = read_cxem(path);
  if (m.rows != expected_rows)
    throw Error(ErrorCode::ShapeMismatch,
                "found " + std::to_string(m.rows) + " rows, expected " +
                    std::to_string(expected_rows),
                {static_cast<std::int64_t>(m.rows), static_cast<std::int64_t>(expected_rows)});
  if (m.dims == 0) throw Error(ErrorCode::ShapeMismatch, "zero-dimensional embeddings", {0, 1});
  require_nonzero_rows(m);
  return m;
}

}  // namespace cx
