#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cx {

/// One top-activating context for a feature. `target_index` points at the
/// token that fired; `activation` is display-only.
struct ActivationContext {
  std::vector<std::string> tokens;
  std::size_t target_index = 0;
  double activation = 0.0;

  bool operator==(const ActivationContext&) const = default;
};

struct FeatureRecord {
  std::uint64_t feature_id = 0;
  std::string explanation;
  std::vector<ActivationContext> contexts;
  std::optional<std::string> category;

  bool operator==(const FeatureRecord&) const = default;
};

/// Dense row-major n x d float matrix. Row i is the embedding of catalog record i.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dims = 0;
  std::vector<float> data;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t n, std::size_t d) : rows(n), dims(d), data(n * d, 0.0f) {}
  EmbeddingMatrix(std::size_t n, std::size_t d, std::vector<float> values);

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dims, dims}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * dims, dims}; }

  bool operator==(const EmbeddingMatrix&) const = default;
};

class FeatureCatalog {
 public:
  FeatureCatalog() = default;
  /// Builds the id index; throws DuplicateFeatureId or EmptyExplanation.
  explicit FeatureCatalog(std::vector<FeatureRecord> records);

  const std::vector<FeatureRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  /// Row position of `feature_id`, if present.
  std::optional<std::size_t> position(std::uint64_t feature_id) const;

  bool operator==(const FeatureCatalog& other) const { return records_ == other.records_; }

 private:
  std::vector<FeatureRecord> records_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// Parses one metadata line. Throws MalformedLine / EmptyExplanation tagged
/// with `line_no`.
FeatureRecord parse_feature_record(const std::string& line, std::size_t line_no);
std::string format_feature_record(const FeatureRecord& record);

/// Reads line-delimited feature metadata, preserving file order.
FeatureCatalog load_feature_metadata(const std::filesystem::path& path);
void write_feature_metadata(const FeatureCatalog& catalog, const std::filesystem::path& path);

// "CXEM" binary matrices: magic, u32 rows, u32 cols, rows*cols f32, all little-endian.

/// Reads any CXEM matrix, checking only framing and finiteness.
EmbeddingMatrix read_cxem(const std::filesystem::path& path);
EmbeddingMatrix parse_cxem(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cxem(const EmbeddingMatrix& matrix);
void write_cxem(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

/// Reads an embedding matrix and validates it against the catalog size.
/// All-zero rows are rejected.
EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path, std::size_t expected_rows);

/// Throws ZeroEmbeddingRow on the first all-zero row.
void require_nonzero_rows(const EmbeddingMatrix& matrix);

}  // namespace cx
