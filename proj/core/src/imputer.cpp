#include "flowfill/imputer.hpp"

#include <cmath>
#include <limits>

namespace flowfill {

ImputationResult impute_chain(const DataTable& table, const CheckpointChain& chain) {
  if (chain.snapshots.empty()) throw UsageError("checkpoint chain is empty");
  if (table.cols() != chain.dim()) {
    throw DataError("table has " + std::to_string(table.cols()) + " columns, chain expects " +
                    std::to_string(chain.dim()));
  }
  if (chain.grid && !table.grid()) {
    // Nearest-neighbor initialization needs the layout the chain was trained on.
    return impute_chain(DataTable(table.values(), table.mask(), table.column_names(), chain.grid),
                        chain);
  }

  const DataTable scaled = apply_scale(table, chain.scale);
  Matrix x = naive_impute(scaled, chain.init);

  constexpr Index kChunk = 4096;
  for (std::size_t k = 0; k < chain.snapshots.size(); ++k) {
    const FlowModel flow = chain.flow_model(k);
    const LatentNet net = chain.latent_net(k);
    Matrix x_hat(x.rows(), x.cols());
    for (Index start = 0; start < x.rows(); start += kChunk) {
      const Index len = std::min(kChunk, x.rows() - start);
      x_hat.middleRows(start, len) = reconstruct(x.middleRows(start, len), flow, net);
    }
    x = combine(x, x_hat, table.mask());
  }

  ImputationResult out;
  out.completed_scaled = x;
  out.completed = combine(table.values(), chain.scale.invert(x), table.mask());
  out.imputed_count = table.missing_count();
  return out;
}

double rmse_missing(const Matrix& imputed, const Matrix& truth, const Mask& mask) {
  if (imputed.rows() != truth.rows() || imputed.cols() != truth.cols() ||
      mask.rows() != truth.rows() || mask.cols() != truth.cols()) {
    throw UsageError("rmse_missing: shape mismatch");
  }
  double sum = 0.0;
  Index count = 0;
  for (Index i = 0; i < truth.rows(); ++i) {
    for (Index j = 0; j < truth.cols(); ++j) {
      if (!mask(i, j)) continue;
      const double d = imputed(i, j) - truth(i, j);
      sum += d * d;
      ++count;
    }
  }
  if (count == 0) throw DataError("rmse_missing: no missing entries to score");
  return std::sqrt(sum / static_cast<double>(count));
}

void attach_metrics(ImputationResult& result, const Matrix& truth, const Mask& mask,
                    const ScaleParams& scale) {
  const Matrix truth_scaled = scale.apply(truth);
  result.rmse_scaled = rmse_missing(result.completed_scaled, truth_scaled, mask);
  result.rmse_raw = rmse_missing(result.completed, truth, mask);
  result.row_rmse_scaled.resize(truth.rows());
  for (Index i = 0; i < truth.rows(); ++i) {
    double sum = 0.0;
    Index count = 0;
    for (Index j = 0; j < truth.cols(); ++j) {
      if (!mask(i, j)) continue;
      const double d = result.completed_scaled(i, j) - truth_scaled(i, j);
      sum += d * d;
      ++count;
    }
    result.row_rmse_scaled(i) = count ? std::sqrt(sum / static_cast<double>(count))
                                      : std::numeric_limits<double>::quiet_NaN();
  }
}

Matrix baseline_impute(const DataTable& table, BaselineMethod method, RngStream& rng) {
  if (method == BaselineMethod::kMarginal) return init_impute_marginal(table, rng);
  Matrix out = table.values();
  for (Index j = 0; j < table.cols(); ++j) {
    double sum = 0.0;
    Index count = 0;
    for (Index i = 0; i < table.rows(); ++i) {
      if (table.is_missing(i, j)) continue;
      sum += table.values()(i, j);
      ++count;
    }
    if (count == 0) {
      if (table.rows() == 0) continue;
      throw DataError("column " + std::to_string(j + 1) + " has no observed entries");
    }
    const double mean = sum / static_cast<double>(count);
    for (Index i = 0; i < table.rows(); ++i) {
      if (table.is_missing(i, j)) out(i, j) = mean;
    }
  }
  return out;
}

Vector gaussian_conditional_oracle(const Vector& mean, const Matrix& covariance, const Vector& x,
                                   const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>& mask) {
  const Index n = mean.size();
  if (covariance.rows() != n || covariance.cols() != n || x.size() != n || mask.size() != n) {
    throw UsageError("gaussian_conditional_oracle: dimension mismatch");
  }
  std::vector<Index> obs, miss;
  for (Index i = 0; i < n; ++i) (mask(i) ? miss : obs).push_back(i);
  Vector out = x;
  if (miss.empty()) return out;
  if (obs.empty()) throw UsageError("gaussian_conditional_oracle: nothing observed");

  const auto no = static_cast<Index>(obs.size());
  const auto nm = static_cast<Index>(miss.size());
  Matrix s_oo(no, no);
  Matrix s_mo(nm, no);
  Vector d(no);
  for (Index a = 0; a < no; ++a) {
    d(a) = x(obs[a]) - mean(obs[a]);
    for (Index b = 0; b < no; ++b) s_oo(a, b) = covariance(obs[a], obs[b]);
  }
  for (Index a = 0; a < nm; ++a) {
    for (Index b = 0; b < no; ++b) s_mo(a, b) = covariance(miss[a], obs[b]);
  }
  Eigen::LLT<Matrix> llt(s_oo);
  if (llt.info() != Eigen::Success) {
    throw NumericError("gaussian_conditional_oracle: observed covariance block is singular");
  }
  const Vector shift = s_mo * llt.solve(d);
  for (Index a = 0; a < nm; ++a) out(miss[a]) = mean(miss[a]) + shift(a);
  return out;
}

Matrix gaussian_conditional_oracle(const Vector& mean, const Matrix& covariance,
                                   const DataTable& table) {
  Matrix out(table.rows(), table.cols());
  for (Index i = 0; i < table.rows(); ++i) {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> m = table.mask().row(i).transpose();
    Vector x = table.values().row(i).transpose();
    for (Index j = 0; j < x.size(); ++j) {
      if (m(j)) x(j) = 0.0;
    }
    bool any_observed = (m.array() == 0).any();
    const Vector filled = any_observed ? gaussian_conditional_oracle(mean, covariance, x, m) : mean;
    out.row(i) = filled.transpose();
  }
  return out;
}

}  // namespace flowfill
