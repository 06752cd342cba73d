#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowfill/rng.hpp"
#include "flowfill/types.hpp"

namespace flowfill {

// Image layout of a row: entry (r, c, ch) sits at column (r * cols + c) * channels + ch.
struct GridShape {
  Index rows = 0;
  Index cols = 0;
  Index channels = 1;

  Index size() const { return rows * cols * channels; }
  bool operator==(const GridShape&) const = default;
};

// N x n values with a missingness mask. Missing entries always hold NaN so
// nothing downstream can read a value it was not supposed to observe.
class DataTable {
 public:
  DataTable() = default;
  DataTable(Matrix values, Mask mask, std::vector<std::string> column_names = {},
            std::optional<GridShape> grid = std::nullopt);

  static DataTable complete(Matrix values, std::vector<std::string> column_names = {},
                            std::optional<GridShape> grid = std::nullopt);

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  const Mask& mask() const { return mask_; }
  bool is_missing(Index r, Index c) const { return mask_(r, c) != 0; }
  Index missing_count() const;
  bool has_missing() const { return missing_count() > 0; }
  const std::vector<std::string>& column_names() const { return column_names_; }
  const std::optional<GridShape>& grid() const { return grid_; }

  DataTable select_rows(const std::vector<Index>& rows) const;
  // Same values with `mask` applied on top (entries become missing where mask is 1).
  DataTable with_mask(const Mask& mask) const;

 private:
  Matrix values_;
  Mask mask_;
  std::vector<std::string> column_names_;
  std::optional<GridShape> grid_;
};

// Empty cells and the literal token NaN are missing.
DataTable load_csv(const std::filesystem::path& path, bool has_header);
// True if the first line contains a cell that is neither empty, NaN, nor a number.
bool csv_has_header(const std::filesystem::path& path);

// Shortest round-trip decimal form.
std::string format_real(double v);

void write_matrix_csv(const std::filesystem::path& path, const Matrix& values,
                      const std::vector<std::string>& column_names = {});
// Missing entries are written as empty cells.
void write_table_csv(const std::filesystem::path& path, const DataTable& table);

Mask load_mask_csv(const std::filesystem::path& path);
void write_mask_csv(const std::filesystem::path& path, const Mask& mask);

// Each entry independently missing with probability `rate`. With guard set,
// a row that came out fully missing gets one uniformly chosen entry observed.
Mask generate_mcar_mask(Index rows, Index cols, double rate, RngStream& rng, bool guard = false);

enum class ScaleMode { kTabular, kImage };

struct ScaleParams {
  ScaleMode mode = ScaleMode::kTabular;
  RowVector min;
  RowVector max;

  Matrix apply(const Matrix& values) const;
  Matrix invert(const Matrix& scaled) const;
  RowVector range() const { return max - min; }
};

// Tabular: per-column bounds from observed entries only. Image: fixed [0, 255].
ScaleParams fit_scale(const DataTable& table, ScaleMode mode);

struct ScaledTable {
  DataTable table;
  ScaleParams params;
};

// Mode follows the table: image bounds when a grid shape is present.
ScaledTable minmax_scale(const DataTable& table);
DataTable apply_scale(const DataTable& table, const ScaleParams& params);
DataTable unscale(const DataTable& scaled, const ScaleParams& params);

// Missing entries drawn uniformly from the observed values of their column.
Matrix init_impute_marginal(const DataTable& table, RngStream& rng);

// Missing pixels drawn uniformly from the observed same-channel pixels on the
// smallest Chebyshev ring around them that has any.
Matrix init_impute_nearest(const DataTable& table, RngStream& rng);

// k shuffled, disjoint folds covering 0..n-1; the first n % k folds get one extra.
std::vector<std::vector<Index>> kfold_split(Index n, Index k, RngStream& rng);

}  // namespace flowfill
