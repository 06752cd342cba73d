#include "flowfill/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace flowfill {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

bool is_missing_token(std::string_view cell) { return cell.empty() || cell == "NaN"; }

std::optional<double> parse_real(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::string unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

void write_header(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// DataTable

DataTable::DataTable(Matrix values, Mask mask, std::vector<std::string> column_names,
                     std::optional<GridShape> grid)
    : values_(std::move(values)),
      mask_(std::move(mask)),
      column_names_(std::move(column_names)),
      grid_(grid) {
  if (values_.rows() != mask_.rows() || values_.cols() != mask_.cols()) {
    throw DataError("values and mask shapes differ");
  }
  if (!column_names_.empty() && static_cast<Index>(column_names_.size()) != values_.cols()) {
    throw DataError("column name count does not match column count");
  }
  if (grid_ && grid_->size() != values_.cols()) {
    throw DataError("grid shape does not multiply out to the column count");
  }
  for (Index i = 0; i < values_.rows(); ++i) {
    for (Index j = 0; j < values_.cols(); ++j) {
      if (mask_(i, j) > 1) throw DataError("mask entries must be 0 or 1");
      if (mask_(i, j)) {
        values_(i, j) = kNaN;
      } else if (!std::isfinite(values_(i, j))) {
        throw DataError("observed entry (" + std::to_string(i + 1) + ", " +
                        std::to_string(j + 1) + ") is not finite");
      }
    }
  }
}

DataTable DataTable::complete(Matrix values, std::vector<std::string> column_names,
                              std::optional<GridShape> grid) {
  Mask mask = Mask::Zero(values.rows(), values.cols());
  return DataTable(std::move(values), std::move(mask), std::move(column_names), grid);
}

Index DataTable::missing_count() const { return mask_.cast<Index>().sum(); }

DataTable DataTable::select_rows(const std::vector<Index>& rows) const {
  Matrix v(static_cast<Index>(rows.size()), cols());
  Mask m(static_cast<Index>(rows.size()), cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v.row(static_cast<Index>(i)) = values_.row(rows[i]);
    m.row(static_cast<Index>(i)) = mask_.row(rows[i]);
  }
  return DataTable(std::move(v), std::move(m), column_names_, grid_);
}

DataTable DataTable::with_mask(const Mask& mask) const {
  if (mask.rows() != rows() || mask.cols() != cols()) throw DataError("mask shape mismatch");
  Mask combined = mask_.cwiseMax(mask);
  return DataTable(values_, std::move(combined), column_names_, grid_);
}

// ---------------------------------------------------------------------------
// CSV

DataTable load_csv(const std::filesystem::path& path, bool has_header) {
  std::ifstream in = open_input(path);
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  Index width = -1;
  Index row = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    if (has_header && names.empty() && row == 0 && width < 0) {
      for (auto c : cells) names.push_back(unquote(c));
      width = static_cast<Index>(cells.size());
      continue;
    }
    if (width < 0) width = static_cast<Index>(cells.size());
    if (static_cast<Index>(cells.size()) != width) {
      throw DataError(path.string() + ": row " + std::to_string(row + 1) + " (line " +
                      std::to_string(line_no) + ") has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(width));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (is_missing_token(cells[j])) {
        values.push_back(kNaN);
        mask.push_back(1);
        continue;
      }
      auto v = parse_real(cells[j]);
      if (!v) {
        throw DataError(path.string() + ": cannot parse '" + std::string(cells[j]) + "' at row " +
                        std::to_string(row + 1) + ", column " + std::to_string(j + 1));
      }
      values.push_back(*v);
      mask.push_back(0);
    }
    ++row;
  }
  if (width < 0) width = 0;
  Matrix v = Eigen::Map<Matrix>(values.data(), row, width);
  Mask m = Eigen::Map<Mask>(mask.data(), row, width);
  return DataTable(std::move(v), std::move(m), std::move(names));
}

bool csv_has_header(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    for (auto cell : split_line(line)) {
      if (!is_missing_token(cell) && !parse_real(cell)) return true;
    }
    return false;
  }
  return false;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("format_real: conversion failed");
  return std::string(buf, ptr);
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& values,
                      const std::vector<std::string>& column_names) {
  std::ofstream out = open_output(path);
  if (!column_names.empty()) write_header(out, column_names);
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      if (j) out << ',';
      out << format_real(values(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_table_csv(const std::filesystem::path& path, const DataTable& table) {
  std::ofstream out = open_output(path);
  if (!table.column_names().empty()) write_header(out, table.column_names());
  for (Index i = 0; i < table.rows(); ++i) {
    for (Index j = 0; j < table.cols(); ++j) {
      if (j) out << ',';
      if (!table.is_missing(i, j)) out << format_real(table.values()(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Mask load_mask_csv(const std::filesystem::path& path) {
  DataTable t = load_csv(path, csv_has_header(path));
  if (t.has_missing()) throw DataError(path.string() + ": mask file has empty cells");
  Mask m(t.rows(), t.cols());
  for (Index i = 0; i < t.rows(); ++i) {
    for (Index j = 0; j < t.cols(); ++j) {
      const double v = t.values()(i, j);
      if (v != 0.0 && v != 1.0) {
        throw DataError(path.string() + ": mask entry at row " + std::to_string(i + 1) +
                        ", column " + std::to_string(j + 1) + " is not 0 or 1");
      }
      m(i, j) = static_cast<std::uint8_t>(v);
    }
  }
  return m;
}

void write_mask_csv(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out = open_output(path);
  for (Index i = 0; i < mask.rows(); ++i) {
    for (Index j = 0; j < mask.cols(); ++j) out << (j ? "," : "") << int(mask(i, j));
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Masks

Mask generate_mcar_mask(Index rows, Index cols, double rate, RngStream& rng, bool guard) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw UsageError("missing rate must lie in [0, 1]");
  if (rows < 0 || cols < 0) throw UsageError("mask shape must be non-negative");
  Mask m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    bool all_missing = cols > 0;
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = rng.bernoulli(rate) ? 1 : 0;
      all_missing = all_missing && m(i, j);
    }
    if (guard && all_missing) {
      m(i, static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(cols)))) = 0;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Scaling

Matrix ScaleParams::apply(const Matrix& values) const {
  if (values.cols() != min.size()) throw DataError("scale: column count mismatch");
  Matrix out(values.rows(), values.cols());
  for (Index j = 0; j < values.cols(); ++j) {
    const double span = max(j) - min(j);
    if (span > 0.0) {
      out.col(j) = (values.col(j).array() - min(j)) / span;
    } else {
      out.col(j) = values.col(j).unaryExpr([](double v) { return std::isnan(v) ? v : 0.5; });
    }
  }
  return out;
}

Matrix ScaleParams::invert(const Matrix& scaled) const {
  if (scaled.cols() != min.size()) throw DataError("unscale: column count mismatch");
  Matrix out(scaled.rows(), scaled.cols());
  for (Index j = 0; j < scaled.cols(); ++j) {
    const double span = max(j) - min(j);
    if (span > 0.0) {
      out.col(j) = scaled.col(j).array() * span + min(j);
    } else {
      const double lo = min(j);
      out.col(j) = scaled.col(j).unaryExpr([lo](double v) { return std::isnan(v) ? v : lo; });
    }
  }
  return out;
}

ScaleParams fit_scale(const DataTable& table, ScaleMode mode) {
  ScaleParams p;
  p.mode = mode;
  if (mode == ScaleMode::kImage) {
    p.min = RowVector::Zero(table.cols());
    p.max = RowVector::Constant(table.cols(), 255.0);
    return p;
  }
  p.min.resize(table.cols());
  p.max.resize(table.cols());
  for (Index j = 0; j < table.cols(); ++j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Index i = 0; i < table.rows(); ++i) {
      if (table.is_missing(i, j)) continue;
      lo = std::min(lo, table.values()(i, j));
      hi = std::max(hi, table.values()(i, j));
    }
    if (lo > hi) {
      std::string label = table.column_names().empty()
                              ? std::to_string(j + 1)
                              : "'" + table.column_names()[static_cast<std::size_t>(j)] + "'";
      throw DataError("column " + label + " has no observed entries; drop it before scaling");
    }
    p.min(j) = lo;
    p.max(j) = hi;
  }
  return p;
}

ScaledTable minmax_scale(const DataTable& table) {
  ScaleParams p = fit_scale(table, table.grid() ? ScaleMode::kImage : ScaleMode::kTabular);
  DataTable scaled = apply_scale(table, p);
  return {std::move(scaled), std::move(p)};
}

DataTable apply_scale(const DataTable& table, const ScaleParams& params) {
  return DataTable(params.apply(table.values()), table.mask(), table.column_names(), table.grid());
}

DataTable unscale(const DataTable& scaled, const ScaleParams& params) {
  return DataTable(params.invert(scaled.values()), scaled.mask(), scaled.column_names(),
                   scaled.grid());
}

// ---------------------------------------------------------------------------
// Naive imputation

Matrix init_impute_marginal(const DataTable& table, RngStream& rng) {
  Matrix out = table.values();
  std::vector<double> support;
  for (Index j = 0; j < table.cols(); ++j) {
    support.clear();
    bool any_missing = false;
    for (Index i = 0; i < table.rows(); ++i) {
      if (table.is_missing(i, j)) {
        any_missing = true;
      } else {
        support.push_back(table.values()(i, j));
      }
    }
    if (!any_missing) continue;
    if (support.empty()) {
      throw DataError("column " + std::to_string(j + 1) +
                      " has no observed entries to sample from");
    }
    for (Index i = 0; i < table.rows(); ++i) {
      if (table.is_missing(i, j)) out(i, j) = support[rng.uniform_index(support.size())];
    }
  }
  return out;
}

Matrix init_impute_nearest(const DataTable& table, RngStream& rng) {
  if (!table.grid()) throw UsageError("nearest-neighbor initialization needs a grid shape");
  const GridShape g = *table.grid();
  Matrix out = table.values();
  std::vector<double> candidates;
  auto at = [&](Index r, Index c, Index ch) { return (r * g.cols + c) * g.channels + ch; };
  const Index max_radius = std::max(g.rows, g.cols);

  for (Index i = 0; i < table.rows(); ++i) {
    for (Index ch = 0; ch < g.channels; ++ch) {
      bool any_observed = false;
      for (Index r = 0; r < g.rows && !any_observed; ++r) {
        for (Index c = 0; c < g.cols; ++c) {
          if (!table.is_missing(i, at(r, c, ch))) {
            any_observed = true;
            break;
          }
        }
      }
      for (Index r = 0; r < g.rows; ++r) {
        for (Index c = 0; c < g.cols; ++c) {
          if (!table.is_missing(i, at(r, c, ch))) continue;
          if (!any_observed) {
            throw DataError("image " + std::to_string(i + 1) + " channel " +
                            std::to_string(ch) + " has no observed pixels");
          }
          for (Index radius = 1; radius <= max_radius; ++radius) {
            candidates.clear();
            for (Index dr = -radius; dr <= radius; ++dr) {
              const Index rr = r + dr;
              if (rr < 0 || rr >= g.rows) continue;
              const bool edge_row = (dr == -radius || dr == radius);
              const Index step = edge_row ? 1 : 2 * radius;
              for (Index dc = -radius; dc <= radius; dc += step) {
                const Index cc = c + dc;
                if (cc < 0 || cc >= g.cols) continue;
                const Index col = at(rr, cc, ch);
                if (!table.is_missing(i, col)) candidates.push_back(table.values()(i, col));
              }
            }
            if (!candidates.empty()) {
              out(i, at(r, c, ch)) = candidates[rng.uniform_index(candidates.size())];
              break;
            }
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Folds

std::vector<std::vector<Index>> kfold_split(Index n, Index k, RngStream& rng) {
  if (k < 2) throw UsageError("k-fold split needs at least 2 folds");
  if (k > n) throw UsageError("more folds (" + std::to_string(k) + ") than rows (" +
                              std::to_string(n) + ")");
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
  const Index base = n / k;
  const Index extra = n % k;
  std::size_t pos = 0;
  for (Index f = 0; f < k; ++f) {
    const Index size = base + (f < extra ? 1 : 0);
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(size)));
    std::sort(fold.begin(), fold.end());
    pos += static_cast<std::size_t>(size);
  }
  return folds;
}

}  // namespace flowfill
