#include "dmdfm/panel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

#include "dmdfm/errors.hpp"

namespace dmdfm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\t')) --last;
  if (first == last) return false;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

/// Sorted unique labels, numeric order when every label is numeric.
std::vector<std::string> sorted_labels(const std::vector<std::string>& raw) {
  std::vector<std::string> labels = raw;
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  bool all_numeric = true;
  std::vector<double> values(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!parse_double(labels[i], values[i])) {
      all_numeric = false;
      break;
    }
  }
  if (all_numeric) {
    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (values[a] != values[b]) return values[a] < values[b];
      return labels[a] < labels[b];
    });
    std::vector<std::string> out(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) out[i] = labels[order[i]];
    return out;
  }
  return labels;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

PanelDataset load_panel(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("FileNotFound", "cannot open panel file: " + path);
  return load_panel(in, schema);
}

PanelDataset load_panel(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("EmptyFile", "panel file has no header row");
  const std::vector<std::string> header = split_csv_line(line);

  auto find_col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw DataError("MissingColumn", "column '" + name + "' not found in header");
  };

  const int col_ind = find_col(schema.individual);
  const int col_per = find_col(schema.period);
  const int col_y = find_col(schema.y);

  std::vector<int> col_x;
  std::vector<std::string> x_names;
  if (schema.regressors.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      const int ci = static_cast<int>(i);
      if (ci != col_ind && ci != col_per && ci != col_y) {
        col_x.push_back(ci);
        x_names.push_back(header[i]);
      }
    }
  } else {
    for (const auto& name : schema.regressors) {
      col_x.push_back(find_col(name));
      x_names.push_back(name);
    }
  }
  const int p = static_cast<int>(col_x.size());

  struct RawRow {
    std::string ind, per;
    double y;
    std::vector<double> x;
  };
  std::vector<RawRow> rows;
  std::vector<std::string> ind_raw, per_raw;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) < static_cast<int>(header.size()))
      throw DataError("ShortRow", "line " + std::to_string(line_no) + " has too few fields");
    RawRow row;
    row.ind = fields[col_ind];
    row.per = fields[col_per];
    if (!parse_double(fields[col_y], row.y))
      throw non_numeric_value("line " + std::to_string(line_no) + ", column '" + schema.y +
                              "': '" + fields[col_y] + "'");
    row.x.resize(p);
    for (int j = 0; j < p; ++j) {
      if (!parse_double(fields[col_x[j]], row.x[j]))
        throw non_numeric_value("line " + std::to_string(line_no) + ", column '" + x_names[j] +
                                "': '" + fields[col_x[j]] + "'");
    }
    ind_raw.push_back(row.ind);
    per_raw.push_back(row.per);
    rows.push_back(std::move(row));
  }

  const std::vector<std::string> individuals = sorted_labels(ind_raw);
  const std::vector<std::string> periods = sorted_labels(per_raw);
  const int n = static_cast<int>(individuals.size());
  const int t = static_cast<int>(periods.size());
  if (n < 2) throw too_few_individuals("panel has " + std::to_string(n) + " individual(s), need >= 2");
  if (t < 3) throw too_few_periods("panel has " + std::to_string(t) + " period(s), need >= 3");

  std::map<std::string, int> ind_index, per_index;
  for (int i = 0; i < n; ++i) ind_index[individuals[i]] = i;
  for (int s = 0; s < t; ++s) per_index[periods[s]] = s;

  PanelDataset data;
  data.n_individuals = n;
  data.n_periods = t;
  data.n_regressors = p;
  data.y = Matrix::Zero(n, t);
  data.x = PanelTensor(n, t, p);
  data.individual_ids = individuals;
  data.period_ids = periods;

  std::vector<char> seen(static_cast<std::size_t>(n) * t, 0);
  for (const RawRow& row : rows) {
    const int i = ind_index[row.ind];
    const int s = per_index[row.per];
    char& mark = seen[static_cast<std::size_t>(i) * t + s];
    if (mark)
      throw duplicate_cell("(individual '" + row.ind + "', period '" + row.per +
                           "') appears more than once");
    mark = 1;
    data.y(i, s) = row.y;
    for (int j = 0; j < p; ++j) data.x.at(i, s, j) = row.x[j];
  }
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < t; ++s)
      if (!seen[static_cast<std::size_t>(i) * t + s])
        throw missing_cell("(individual '" + individuals[i] + "', period '" + periods[s] +
                           "') is absent; panel must be balanced");
  return data;
}

void save_panel(const PanelDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("FileNotWritable", "cannot write panel file: " + path);
  save_panel(data, out);
}

void save_panel(const PanelDataset& data, std::ostream& out) {
  out << "individual,period,y";
  for (int j = 0; j < data.n_regressors; ++j) out << ",x" << (j + 1);
  out << "\n";
  for (int i = 0; i < data.n_individuals; ++i) {
    for (int s = 0; s < data.n_periods; ++s) {
      out << data.individual_ids[i] << ',' << data.period_ids[s] << ','
          << format_double(data.y(i, s));
      for (int j = 0; j < data.n_regressors; ++j) out << ',' << format_double(data.x.at(i, s, j));
      out << "\n";
    }
  }
}

LaggedView lag_view(const PanelDataset& data, int h) {
  const int t = data.n_periods;
  if (h < 1 || h > t - 2)
    throw lag_too_large("lag order " + std::to_string(h) + " outside [1, " + std::to_string(t - 2) +
                        "] for T = " + std::to_string(t));
  LaggedView view;
  view.lag_order = h;
  view.y_current = data.y.rightCols(t - h);
  view.y_lagged = PanelTensor(data.n_individuals, t - h, h);
  for (int i = 0; i < data.n_individuals; ++i)
    for (int s = 0; s < t - h; ++s)
      for (int j = 0; j < h; ++j) view.y_lagged.at(i, s, j) = data.y(i, s + h - 1 - j);
  return view;
}

Matrix first_difference(const Matrix& series) {
  if (series.cols() < 2) throw too_few_periods("first_difference needs at least 2 columns");
  return series.rightCols(series.cols() - 1) - series.leftCols(series.cols() - 1);
}

}  // namespace dmdfm
