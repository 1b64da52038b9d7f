#include "seqmi/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "seqmi/errors.hpp"

namespace seqmi {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_double(const std::string& tok, int row, const std::string& col) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    throw DataError("load: row " + std::to_string(row) + ", column '" + col +
                    "': cannot parse '" + tok + "'");
  }
  if (pos != tok.size() || !std::isfinite(v))
    throw DataError("load: row " + std::to_string(row) + ", column '" + col +
                    "': cannot parse '" + tok + "'");
  return v;
}

void check_response_domain(double v, const VisitTypeSpec& vt, int row, const std::string& col) {
  auto domain_error = [&](const std::string& what) {
    throw DataError("load: row " + std::to_string(row) + ", column '" + col + "': " + what);
  };
  switch (vt.type) {
    case VisitType::Continuous:
      break;
    case VisitType::Binary:
    case VisitType::Ordinal:
    case VisitType::Nominal: {
      const int k = vt.type == VisitType::Binary ? 2 : vt.levels;
      if (v != std::floor(v) || v < 1.0 || v > static_cast<double>(k))
        domain_error("categorical value " + std::to_string(v) + " outside {1.." +
                     std::to_string(k) + "}");
      break;
    }
    case VisitType::Count:
      if (v != std::floor(v) || v < 0.0)
        domain_error("count value " + std::to_string(v) + " is not a nonnegative integer");
      break;
  }
}

std::string format_cell(double v, const VisitTypeSpec& vt) {
  if (vt.discrete() || (v == std::floor(v) && std::fabs(v) < 1e15)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    // Preserve fractional continuous values exactly below.
    if (!vt.discrete() && std::stod(buf) != v) {
      char full[40];
      std::snprintf(full, sizeof full, "%.17g", v);
      return full;
    }
    return buf;
  }
  char full[40];
  std::snprintf(full, sizeof full, "%.17g", v);
  return full;
}

}  // namespace

MissingnessPartition classify_missingness(const Dataset& data) {
  MissingnessPartition part;
  const int n = data.n();
  part.B_d.resize(n);
  part.B_c.resize(n);
  part.W.resize(n);
  part.n_j.assign(data.p, 0);
  for (int i = 0; i < n; ++i) {
    const SubjectRecord& r = data.subjects[i];
    for (int j = 1; j <= data.p; ++j) {
      if (j <= r.s) {
        if (!r.observed[j - 1]) {
          if (data.visit_types[j - 1].discrete())
            part.B_d[i].push_back(j);
          else
            part.B_c[i].push_back(j);
        }
      } else {
        part.W[i].push_back(j);
      }
      if (r.s >= j) ++part.n_j[j - 1];
    }
  }
  return part;
}

std::pair<Dataset, std::vector<int>> sort_monotone(const Dataset& data) {
  Dataset out = data;
  std::stable_sort(out.subjects.begin(), out.subjects.end(),
                   [](const SubjectRecord& a, const SubjectRecord& b) { return a.s > b.s; });
  std::vector<int> n_j(data.p, 0);
  for (const SubjectRecord& r : out.subjects)
    for (int j = 1; j <= r.s; ++j) ++n_j[j - 1];
  return {std::move(out), std::move(n_j)};
}

Dataset load_dataset(const std::string& path, const ColumnSchema& schema) {
  if (schema.response_columns.size() != schema.visit_types.size())
    throw ConfigError("schema: response_columns and visit_types differ in length");
  std::ifstream in(path);
  if (!in) throw DataError("load: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("load: '" + path + "' is empty");
  const std::vector<std::string> header = split_csv_line(line);
  std::unordered_map<std::string, int> col_of;
  for (std::size_t c = 0; c < header.size(); ++c) col_of.emplace(header[c], static_cast<int>(c));

  auto require = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end())
      throw DataError("load: column '" + name + "' declared in schema but absent from header");
    return it->second;
  };

  const int id_col = require(schema.id_column);
  std::vector<int> cov_cols, resp_cols;
  for (const auto& c : schema.covariate_columns) cov_cols.push_back(require(c));
  for (const auto& c : schema.response_columns) resp_cols.push_back(require(c));

  Dataset data;
  data.p = static_cast<int>(resp_cols.size());
  data.q = static_cast<int>(cov_cols.size()) + (schema.add_intercept ? 1 : 0);
  data.visit_types = schema.visit_types;
  data.id_name = schema.id_column;
  data.covariate_names = schema.covariate_columns;
  data.response_names = schema.response_columns;
  if (data.q == 0) throw ConfigError("schema: no covariates and no intercept requested");

  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("load: row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    SubjectRecord r;
    r.id = cells[id_col];
    r.orig_index = static_cast<int>(data.subjects.size());
    r.x.resize(data.q);
    int xi = 0;
    if (schema.add_intercept) r.x[xi++] = 1.0;
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      const std::string& tok = cells[cov_cols[k]];
      if (tok == schema.missing_token || tok.empty())
        throw DataError("load: row " + std::to_string(row) + ", column '" +
                        schema.covariate_columns[k] + "': covariates must be fully observed");
      r.x[xi++] = parse_double(tok, row, schema.covariate_columns[k]);
    }
    r.y.setZero(data.p);
    r.observed.assign(data.p, 0);
    for (int j = 0; j < data.p; ++j) {
      const std::string& tok = cells[resp_cols[j]];
      if (tok == schema.missing_token || tok.empty()) continue;
      const double v = parse_double(tok, row, schema.response_columns[j]);
      check_response_domain(v, schema.visit_types[j], row, schema.response_columns[j]);
      r.y[j] = v;
      r.observed[j] = 1;
      r.s = j + 1;
    }
    r.arm = data.q > 0 && r.x[data.q - 1] != 0.0 ? 1 : 0;
    data.subjects.push_back(std::move(r));
  }
  return data;
}

void write_dataset(const std::string& path, const Dataset& data, const std::string& missing_token) {
  std::ofstream out(path);
  if (!out) throw DataError("write: cannot open '" + path + "'");
  out << data.id_name;
  for (const auto& c : data.covariate_names) out << ',' << c;
  for (const auto& c : data.response_names) out << ',' << c;
  out << '\n';

  std::vector<const SubjectRecord*> order;
  order.reserve(data.subjects.size());
  for (const auto& r : data.subjects) order.push_back(&r);
  std::sort(order.begin(), order.end(),
            [](const SubjectRecord* a, const SubjectRecord* b) { return a->orig_index < b->orig_index; });

  const int cov_offset = data.q - static_cast<int>(data.covariate_names.size());
  const VisitTypeSpec cont{VisitType::Continuous, 0};
  for (const SubjectRecord* r : order) {
    out << r->id;
    for (std::size_t k = 0; k < data.covariate_names.size(); ++k)
      out << ',' << format_cell(r->x[cov_offset + static_cast<int>(k)], cont);
    for (int j = 0; j < data.p; ++j) {
      out << ',';
      if (r->observed[j])
        out << format_cell(r->y[j], data.visit_types[j]);
      else
        out << missing_token;
    }
    out << '\n';
  }
  if (!out) throw DataError("write: failed writing '" + path + "'");
}

}  // namespace seqmi
