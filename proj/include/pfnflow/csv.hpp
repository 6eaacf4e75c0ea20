#pragma once

#include <string>
#include <vector>

#include "pfnflow/missingness.hpp"
#include "pfnflow/tensor.hpp"

namespace pfnflow {

// Numeric CSV with a header row; empty cells mark missing entries.
struct CsvTable {
  std::vector<std::string> columns;
  Matrixd values;   // missing entries hold NaN
  Mask::Grid miss;  // 1 where the cell was empty

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  bool has_missing() const { return miss.cast<int>().sum() > 0; }
};

CsvTable read_csv(const std::string& path);

// Writes values with empty cells where mask (or NaN) says missing.
void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Matrixd& values, const Mask::Grid* missing = nullptr,
               int precision = 12);

void write_mask_csv(const std::string& path,
                    const std::vector<std::string>& columns,
                    const Mask::Grid& mask);

}  // namespace pfnflow
