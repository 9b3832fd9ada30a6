#include "cx/sparse.hpp"

#include <algorithm>
#include <numeric>

namespace cx {

double CsrMatrix::at(std::size_t i, std::size_t j) const {
  const auto c = row_cols(i);
  for (std::size_t e = 0; e < c.size(); ++e)
    if (c[e] == j) return values[row_ptr[i] + e];
  return 0.0;
}

CsrMatrix CsrMatrix::transpose() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (auto c : col_idx) ++t.row_ptr[c + 1];
  std::partial_sum(t.row_ptr.begin(), t.row_ptr.end(), t.row_ptr.begin());
  t.col_idx.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> fill(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
      const std::size_t slot = fill[col_idx[e]]++;
      t.col_idx[slot] = static_cast<std::uint32_t>(i);
      t.values[slot] = values[e];
    }
  }
  return t;
}

CsrMatrix CsrMatrix::sorted_by_column() const {
  CsrMatrix s = *this;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t b = row_ptr[i];
    const std::size_t len = row_size(i);
    order.resize(len);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return col_idx[b + x] < col_idx[b + y]; });
    for (std::size_t e = 0; e < len; ++e) {
      s.col_idx[b + e] = col_idx[b + order[e]];
      s.values[b + e] = values[b + order[e]];
    }
  }
  return s;
}

}  // namespace cx
