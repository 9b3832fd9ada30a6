#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cx {

/// Compressed sparse row matrix with double values.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }
  std::size_t row_size(std::size_t i) const { return row_ptr[i + 1] - row_ptr[i]; }
  std::span<const std::uint32_t> row_cols(std::size_t i) const {
    return {col_idx.data() + row_ptr[i], row_size(i)};
  }
  std::span<const double> row_values(std::size_t i) const {
    return {values.data() + row_ptr[i], row_size(i)};
  }

  /// Value at (i, j), or 0 when (i, j) is outside the support.
  double at(std::size_t i, std::size_t j) const;

  CsrMatrix transpose() const;
  /// Copy with each row's entries ordered by ascending column.
  CsrMatrix sorted_by_column() const;

  bool operator==(const CsrMatrix&) const = default;
};

}  // namespace cx
