#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "flowfill/dataset.hpp"
#include "support.hpp"

using namespace flowfill;
using flowfill::testing::read_text;
using flowfill::testing::TempDir;
using flowfill::testing::write_text;

namespace {

Mask mask_from(std::initializer_list<std::initializer_list<int>> rows) {
  Mask m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (int v : r) m(i, j++) = static_cast<std::uint8_t>(v);
    ++i;
  }
  return m;
}

Matrix matrix_from(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

void expect_observed_preserved(const DataTable& t, const Matrix& filled) {
  for (Index i = 0; i < t.rows(); ++i) {
    for (Index j = 0; j < t.cols(); ++j) {
      if (!t.is_missing(i, j)) EXPECT_EQ(filled(i, j), t.values()(i, j));
      EXPECT_TRUE(std::isfinite(filled(i, j)));
    }
  }
}

}  // namespace

// --- CSV -------------------------------------------------------------------

TEST(Csv, EmptyCellIsMissing) {
  TempDir dir;
  write_text(dir / "a.csv", "1.0,,3.0\n");
  const DataTable t = load_csv(dir / "a.csv", false);
  ASSERT_EQ(t.rows(), 1);
  ASSERT_EQ(t.cols(), 3);
  EXPECT_EQ(t.values()(0, 0), 1.0);
  EXPECT_EQ(t.values()(0, 2), 3.0);
  EXPECT_TRUE(std::isnan(t.values()(0, 1)));
  EXPECT_EQ(t.mask()(0, 0), 0);
  EXPECT_EQ(t.mask()(0, 1), 1);
  EXPECT_EQ(t.mask()(0, 2), 0);
}

TEST(Csv, NaNTokenIsMissing) {
  TempDir dir;
  write_text(dir / "a.csv", "x,y\n1,NaN\n2,5\n");
  EXPECT_TRUE(csv_has_header(dir / "a.csv"));
  const DataTable t = load_csv(dir / "a.csv", true);
  EXPECT_EQ(t.column_names(), (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(t.missing_count(), 1);
  EXPECT_TRUE(t.is_missing(0, 1));
}

TEST(Csv, FullyPopulatedHasZeroMask) {
  TempDir dir;
  write_text(dir / "a.csv", "1,2\n3,4\n");
  EXPECT_FALSE(csv_has_header(dir / "a.csv"));
  const DataTable t = load_csv(dir / "a.csv", false);
  EXPECT_FALSE(t.has_missing());
  EXPECT_EQ(t.mask().cast<int>().sum(), 0);
}

TEST(Csv, ParseErrorNamesColumn) {
  TempDir dir;
  write_text(dir / "a.csv", "1.0,abc\n");
  try {
    load_csv(dir / "a.csv", false);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("column 2"), std::string::npos) << e.what();
  }
}

TEST(Csv, RaggedRowNamesRow) {
  TempDir dir;
  write_text(dir / "a.csv", "1,2\n3,4,5\n");
  try {
    load_csv(dir / "a.csv", false);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(Csv, WriteTableRoundTrips) {
  TempDir dir;
  const DataTable t(matrix_from({{0.1, 2.5}, {1e-17, -3.0}}), mask_from({{0, 1}, {0, 0}}),
                    {"a", "b"});
  write_table_csv(dir / "t.csv", t);
  EXPECT_EQ(read_text(dir / "t.csv"), "a,b\n0.1,\n1e-17,-3\n");
  const DataTable back = load_csv(dir / "t.csv", true);
  EXPECT_EQ(back.mask(), t.mask());
  EXPECT_EQ(back.values()(1, 0), 1e-17);
}

TEST(Csv, MaskFileRoundTrip) {
  TempDir dir;
  const Mask m = mask_from({{0, 1, 1}, {1, 0, 0}});
  write_mask_csv(dir / "m.csv", m);
  EXPECT_EQ(load_mask_csv(dir / "m.csv"), m);
  write_text(dir / "bad.csv", "0,2\n");
  EXPECT_THROW(load_mask_csv(dir / "bad.csv"), DataError);
}

// --- MCAR masks ------------------------------------------------------------

TEST(Mcar, DegenerateRates) {
  RngStream rng(1);
  EXPECT_EQ(generate_mcar_mask(20, 5, 0.0, rng).cast<int>().sum(), 0);
  EXPECT_EQ(generate_mcar_mask(20, 5, 1.0, rng).cast<int>().sum(), 100);
  EXPECT_THROW(generate_mcar_mask(2, 2, 1.5, rng), UsageError);
  EXPECT_THROW(generate_mcar_mask(2, 2, -0.1, rng), UsageError);
}

TEST(Mcar, RateOnLargeMask) {
  RngStream rng(2);
  const Mask m = generate_mcar_mask(1000, 1000, 0.2, rng);
  const double frac = static_cast<double>(m.cast<Index>().sum()) / 1e6;
  EXPECT_GE(frac, 0.195);
  EXPECT_LE(frac, 0.205);
}

TEST(Mcar, GuardKeepsOneObservedPerRow) {
  RngStream rng(3);
  const Mask m = generate_mcar_mask(50, 4, 1.0, rng, true);
  for (Index i = 0; i < m.rows(); ++i) EXPECT_EQ(m.row(i).cast<int>().sum(), 3);
}

TEST(Mcar, MaskIndependentOfValues) {
  // The generator never sees values; two tables of the same shape share masks.
  RngStream a(77), b(77);
  const Mask ma = generate_mcar_mask(30, 6, 0.3, a);
  const Mask mb = generate_mcar_mask(30, 6, 0.3, b);
  EXPECT_EQ(ma, mb);
  RngStream vr(5);
  const DataTable t1 = DataTable::complete(flowfill::testing::random_matrix(30, 6, vr)).with_mask(ma);
  const DataTable t2 = DataTable::complete(flowfill::testing::random_matrix(30, 6, vr)).with_mask(mb);
  EXPECT_EQ(t1.mask(), t2.mask());
}

// --- scaling ---------------------------------------------------------------

TEST(Scale, ObservedColumnMapsToUnitInterval) {
  const DataTable t(matrix_from({{2}, {4}, {10}, {0}}), mask_from({{0}, {0}, {0}, {1}}));
  const ScaledTable s = minmax_scale(t);
  EXPECT_EQ(s.params.mode, ScaleMode::kTabular);
  EXPECT_DOUBLE_EQ(s.table.values()(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.table.values()(1, 0), 0.25);
  EXPECT_DOUBLE_EQ(s.table.values()(2, 0), 1.0);
  EXPECT_TRUE(s.table.is_missing(3, 0));
}

TEST(Scale, ImageModeUsesFixedBounds) {
  const DataTable t = DataTable::complete(matrix_from({{0, 255, 51, 102}}), {},
                                          GridShape{2, 2, 1});
  const ScaledTable s = minmax_scale(t);
  EXPECT_EQ(s.params.mode, ScaleMode::kImage);
  EXPECT_EQ(s.table.values()(0, 0), 0.0);
  EXPECT_EQ(s.table.values()(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(s.table.values()(0, 2), 0.2);
}

TEST(Scale, ConstantColumnMapsToHalf) {
  const DataTable t = DataTable::complete(matrix_from({{7}, {7}, {7}}));
  const ScaledTable s = minmax_scale(t);
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(s.table.values()(i, 0), 0.5);
  const DataTable back = unscale(s.table, s.params);
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(back.values()(i, 0), 7.0);
}

TEST(Scale, FullyMissingColumnIsRejected) {
  const DataTable t(matrix_from({{1, 0}, {2, 0}}), mask_from({{0, 1}, {0, 1}}));
  EXPECT_THROW(minmax_scale(t), DataError);
}

TEST(Scale, RoundTripProperty) {
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng(100 + trial);
    const Index rows = 5 + static_cast<Index>(rng.uniform_index(40));
    const Index cols = 1 + static_cast<Index>(rng.uniform_index(6));
    Matrix v = flowfill::testing::random_matrix(rows, cols, rng, 1.0 + 1000.0 * rng.uniform());
    Mask m = generate_mcar_mask(rows, cols, 0.3, rng);
    m.row(0).setZero();
    const DataTable t(v, m);
    const ScaledTable s = minmax_scale(t);
    const DataTable back = unscale(s.table, s.params);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        if (m(i, j)) continue;
        EXPECT_GE(s.table.values()(i, j), 0.0);
        EXPECT_LE(s.table.values()(i, j), 1.0);
        EXPECT_NEAR(back.values()(i, j), v(i, j), 1e-12 * std::max(1.0, std::abs(v(i, j))));
      }
    }
  }
}

// --- naive imputation --------------------------------------------------------

TEST(Marginal, DrawsFromObservedSupport) {
  const DataTable t(matrix_from({{1, 7}, {2, 0}, {3, 0}, {0, 0}}),
                    mask_from({{0, 0}, {0, 1}, {0, 1}, {1, 1}}));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(seed);
    const Matrix f = init_impute_marginal(t, rng);
    EXPECT_TRUE(f(3, 0) == 1 || f(3, 0) == 2 || f(3, 0) == 3);
    EXPECT_EQ(f(1, 1), 7);
    EXPECT_EQ(f(2, 1), 7);
    EXPECT_EQ(f(3, 1), 7);
    expect_observed_preserved(t, f);
  }
}

TEST(Marginal, EmptySupportIsAnError) {
  const DataTable t(matrix_from({{1, 0}, {2, 0}}), mask_from({{0, 1}, {0, 1}}));
  RngStream rng(1);
  EXPECT_THROW(init_impute_marginal(t, rng), DataError);
}

TEST(Marginal, GoldenFillForSeed42) {
  const DataTable t(matrix_from({{0.5, 10}, {0, 20}, {1.5, 0}, {2.5, 0}}),
                    mask_from({{0, 0}, {1, 0}, {0, 1}, {0, 1}}));
  RngStream rng(42);
  const Matrix f = init_impute_marginal(t, rng);
  const std::filesystem::path golden = std::filesystem::path(FLOWFILL_GOLDEN_DIR) /
                                       "marginal_seed42.csv";
  if (std::getenv("FLOWFILL_UPDATE_GOLDEN")) write_matrix_csv(golden, f);
  const DataTable expected = load_csv(golden, false);
  ASSERT_EQ(expected.rows(), 4);
  ASSERT_EQ(expected.cols(), 2);
  EXPECT_EQ(expected.values(), f);
}

TEST(Nearest, DrawsFromRingOne) {
  // 3x3 image, centre missing, ring {10,20,30,40} plus four missing corners.
  Matrix v(1, 9);
  v << 0, 10, 0, 20, 0, 30, 0, 40, 0;
  Mask m(1, 9);
  m << 1, 0, 1, 0, 1, 0, 1, 0, 1;
  const DataTable t(v, m, {}, GridShape{3, 3, 1});
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RngStream rng(seed);
    const Matrix f = init_impute_nearest(t, rng);
    const std::set<double> ring{10, 20, 30, 40};
    EXPECT_TRUE(ring.contains(f(0, 4)));
    // Corner (0,0): ring-1 observed neighbours are 10 and 20.
    EXPECT_TRUE(f(0, 0) == 10 || f(0, 0) == 20);
    expect_observed_preserved(t, f);
  }
}

TEST(Nearest, SingleObservedPixelFillsAll) {
  Matrix v = Matrix::Zero(1, 25);
  Mask m = Mask::Ones(1, 25);
  v(0, 24) = 9;
  m(0, 24) = 0;
  const DataTable t(v, m, {}, GridShape{5, 5, 1});
  RngStream rng(4);
  const Matrix f = init_impute_nearest(t, rng);
  EXPECT_TRUE((f.array() == 9.0).all());
}

TEST(Nearest, ChannelsAreSeparate) {
  // 1x2 image with two channels: pixel 0 missing in channel 0 only.
  Matrix v(1, 4);
  v << 0, 5, 7, 9;
  Mask m(1, 4);
  m << 1, 0, 0, 0;
  const DataTable t(v, m, {}, GridShape{1, 2, 2});
  RngStream rng(1);
  const Matrix f = init_impute_nearest(t, rng);
  EXPECT_EQ(f(0, 0), 7);
}

TEST(Nearest, CompleteImageUnchangedAndEmptyImageRejected) {
  RngStream rng(1);
  const Matrix v = flowfill::testing::random_matrix(2, 4, rng);
  const DataTable full = DataTable::complete(v, {}, GridShape{2, 2, 1});
  EXPECT_EQ(init_impute_nearest(full, rng), v);
  const DataTable empty(v, Mask::Ones(2, 4), {}, GridShape{2, 2, 1});
  EXPECT_THROW(init_impute_nearest(empty, rng), DataError);
  EXPECT_THROW(init_impute_nearest(DataTable::complete(v), rng), UsageError);
}

TEST(Nearest, RandomImagesPreserveObservedAndFillEverything) {
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng(300 + trial);
    const GridShape g{1 + static_cast<Index>(rng.uniform_index(8)),
                      1 + static_cast<Index>(rng.uniform_index(8)),
                      1 + static_cast<Index>(rng.uniform_index(3))};
    const Matrix v = flowfill::testing::random_matrix(3, g.size(), rng);
    Mask m = generate_mcar_mask(3, g.size(), 0.9, rng);
    for (Index i = 0; i < 3; ++i) {
      for (Index ch = 0; ch < g.channels; ++ch) m(i, ch) = 0;
    }
    const DataTable t(v, m, {}, g);
    const Matrix f = init_impute_nearest(t, rng);
    expect_observed_preserved(t, f);
  }
}

// --- folds -----------------------------------------------------------------

TEST(Folds, EvenSplit) {
  RngStream rng(1);
  const auto folds = kfold_split(10, 5, rng);
  ASSERT_EQ(folds.size(), 5u);
  std::vector<Index> all;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 2u);
    all.insert(all.end(), f.begin(), f.end());
  }
  std::sort(all.begin(), all.end());
  for (Index i = 0; i < 10; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
}

TEST(Folds, RemainderGoesToFirstFolds) {
  RngStream rng(1);
  const auto folds = kfold_split(7, 5, rng);
  std::vector<std::size_t> sizes;
  for (const auto& f : folds) sizes.push_back(f.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 1, 1, 1}));
}

TEST(Folds, DeterministicAndValidated) {
  RngStream a(9), b(9);
  EXPECT_EQ(kfold_split(100, 5, a), kfold_split(100, 5, b));
  RngStream c(9);
  EXPECT_THROW(kfold_split(3, 5, c), UsageError);
  EXPECT_THROW(kfold_split(3, 1, c), UsageError);
}
