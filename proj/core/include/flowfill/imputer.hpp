#pragma once

#include <optional>

#include "flowfill/dataset.hpp"
#include "flowfill/trainer.hpp"

namespace flowfill {

struct ImputationResult {
  Matrix completed;         // original units; observed entries copied bit-exactly
  Matrix completed_scaled;  // chain scale units
  Index imputed_count = 0;
  // Filled by attach_metrics. Scaled RMSE is the headline number.
  std::optional<double> rmse_scaled;
  std::optional<double> rmse_raw;
  Vector row_rmse_scaled;  // NaN for rows with nothing missing
};

// Scales with the chain's parameters, applies the chain's naive initializer,
// then for every snapshot in order replaces the missing entries with
// g^-1(h(g(x))).
ImputationResult impute_chain(const DataTable& table, const CheckpointChain& chain);

void attach_metrics(ImputationResult& result, const Matrix& truth, const Mask& mask,
                    const ScaleParams& scale);

// Root mean squared error over entries with mask = 1.
double rmse_missing(const Matrix& imputed, const Matrix& truth, const Mask& mask);

enum class BaselineMethod { kMean, kMarginal };

Matrix baseline_impute(const DataTable& table, BaselineMethod method, RngStream& rng);

// Missing entries of x replaced by E[x_miss | x_obs] under N(mean, covariance).
Vector gaussian_conditional_oracle(const Vector& mean, const Matrix& covariance, const Vector& x,
                                   const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>& mask);
Matrix gaussian_conditional_oracle(const Vector& mean, const Matrix& covariance,
                                   const DataTable& table);

}  // namespace flowfill
