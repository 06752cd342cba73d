#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "flowfill/diff.hpp"
#include "flowfill/rng.hpp"
#include "flowfill/types.hpp"

namespace flowfill::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("flowfill_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Equicorrelated Gaussian with unit variances.
inline Matrix equicorrelation(Index n, double rho) {
  Matrix c = Matrix::Constant(n, n, rho);
  c.diagonal().setOnes();
  return c;
}

inline Matrix sample_gaussian(Index rows, const Matrix& covariance, RngStream& rng) {
  const Matrix l = Eigen::LLT<Matrix>(covariance).matrixL();
  Matrix out(rows, covariance.rows());
  Vector e(covariance.rows());
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < e.size(); ++j) e(j) = rng.normal();
    out.row(i) = (l * e).transpose();
  }
  return out;
}

inline Matrix random_matrix(Index rows, Index cols, RngStream& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct GradientCheck {
  double max_error = 0.0;  // over smooth coordinates
  Index worst = -1;
  Index checked = 0;
  Index skipped = 0;
};

// Analytic gradient against the central-difference reference. A coordinate
// whose reference changes by more than 1e-3 (relative) between two starting
// steps is not resolved (a leaky-ReLU kink inside the stencil) and is skipped.
inline GradientCheck check_gradients(const diff::LossFn& loss, const diff::ParamSet& params,
                                     double step = 1e-3) {
  const diff::Evaluation analytic = diff::evaluate_with_gradients(loss, params);
  const diff::GradientSet coarse = diff::finite_difference_gradient(loss, params, step);
  const diff::GradientSet fine = diff::finite_difference_gradient(loss, params, step / 4);
  GradientCheck out;
  for (Index i = 0; i < coarse.flat_size(); ++i) {
    if (relative_error(coarse.flat()(i), fine.flat()(i)) > 1e-3) {
      ++out.skipped;
      continue;
    }
    ++out.checked;
    const double e = relative_error(analytic.gradients.flat()(i), coarse.flat()(i));
    if (e > out.max_error) {
      out.max_error = e;
      out.worst = i;
    }
  }
  return out;
}

}  // namespace flowfill::testing
