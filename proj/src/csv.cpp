#include "pfnflow/csv.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pfnflow {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file " + path);
  CsvTable table;
  table.columns = split_line(line);
  const int d = static_cast<int>(table.columns.size());

  std::vector<std::vector<double>> rows;
  std::vector<std::vector<std::uint8_t>> miss;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    if (static_cast<int>(fields.size()) != d) {
      throw std::runtime_error("read_csv: row " + std::to_string(line_no) +
                               " has " + std::to_string(fields.size()) +
                               " fields, expected " + std::to_string(d));
    }
    std::vector<double> vals(d);
    std::vector<std::uint8_t> mis(d, 0);
    for (int j = 0; j < d; ++j) {
      const std::string f = trim(fields[j]);
      if (f.empty() || f == "NA" || f == "nan" || f == "NaN") {
        vals[j] = std::numeric_limits<double>::quiet_NaN();
        mis[j] = 1;
      } else {
        std::size_t pos = 0;
        vals[j] = std::stod(f, &pos);
        if (pos != f.size()) {
          throw std::runtime_error("read_csv: non-numeric cell '" + f +
                                   "' at row " + std::to_string(line_no));
        }
      }
    }
    rows.push_back(std::move(vals));
    miss.push_back(std::move(mis));
  }
  const int n = static_cast<int>(rows.size());
  table.values.resize(n, d);
  table.miss = Mask::Grid::Zero(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      table.values(i, j) = rows[i][j];
      table.miss(i, j) = miss[i][j];
    }
  }
  return table;
}

void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Matrixd& values, const Mask::Grid* missing, int precision) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out << (j ? "," : "") << columns[j];
  }
  out << "\n";
  out << std::setprecision(precision);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (j) out << ",";
      const bool miss =
          (missing && (*missing)(i, j)) || std::isnan(values(i, j));
      if (!miss) out << values(i, j);
    }
    out << "\n";
  }
}

void write_mask_csv(const std::string& path,
                    const std::vector<std::string>& columns,
                    const Mask::Grid& mask) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_mask_csv: cannot open " + path);
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out << (j ? "," : "") << columns[j];
  }
  out << "\n";
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      if (j) out << ",";
      out << static_cast<int>(mask(i, j));
    }
    out << "\n";
  }
}

}  // namespace pfnflow
