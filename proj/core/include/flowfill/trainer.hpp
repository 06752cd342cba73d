#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowfill/dataset.hpp"
#include "flowfill/diff.hpp"
#include "flowfill/flow.hpp"
#include "flowfill/latent.hpp"

namespace flowfill {

enum class ScheduleMode {
  kPowerOfTwo,  // refresh the imputation, snapshot and reset the flow at epochs 1, 2, 4, ...
  kEveryEpoch,  // refresh every epoch; snapshot and reset still only at powers of two
};

enum class InitMethod { kMarginal, kNearest };

std::string to_string(ScheduleMode mode);
std::string to_string(InitMethod method);
std::string to_string(LatentInit init);
ScheduleMode parse_schedule_mode(std::string_view text);
InitMethod parse_init_method(std::string_view text);
LatentInit parse_latent_init(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-4;
  Index batch_size = 128;
  int epochs = 100;
  // Weight of the likelihood term in the latent network's loss. Data are in
  // [0, 1] units, where log-densities dwarf per-entry squared errors; values
  // near 1 pull every completion to the mode. Tune per dataset.
  double lambda = 0.003;
  std::uint64_t seed = 0;
  ScheduleMode schedule = ScheduleMode::kPowerOfTwo;
  // Train with 1e-3 instead when more than 60% of entries are missing.
  bool high_missing_lr_switch = true;
  int convergence_window = 10;
  double convergence_tolerance = 1e-3;
  InitMethod init = InitMethod::kMarginal;
  LatentInit latent_init = LatentInit::kUniform;
  FlowOptions flow;

  void validate() const;
  double effective_learning_rate(double missing_rate) const;
};

struct InitializerSpec {
  InitMethod method = InitMethod::kMarginal;
  std::uint64_t seed = 0;
};

struct Snapshot {
  int epoch = 0;
  diff::ParamSet flow_params;
  diff::ParamSet latent_params;
};

// Everything inference needs: preprocessing plus the (theta, phi) pairs saved
// at schedule epochs, applied in order.
struct CheckpointChain {
  FlowArchitecture flow;
  ScaleParams scale;
  InitializerSpec init;
  std::optional<GridShape> grid;
  TrainConfig config;
  std::vector<Snapshot> snapshots;

  Index dim() const { return flow.dim; }
  FlowModel flow_model(std::size_t i) const;
  LatentNet latent_net(std::size_t i) const;
};

struct EpochLog {
  int epoch = 0;
  double nll_loss = 0.0;
  double h_loss = 0.0;
  bool schedule_event = false;
};

struct TrainResult {
  CheckpointChain chain;
  std::vector<EpochLog> log;
  std::optional<int> converged_epoch;
  Matrix imputed;  // final training matrix, scaled units
};

// Observed entries from `observed`, missing entries from `imputed`.
Matrix combine(const Matrix& observed, const Matrix& imputed, const Mask& mask);

// 1-indexed epochs; true for 1, 2, 4, 8, ...
bool is_schedule_epoch(int epoch);
// floor(log2(epochs)) + 1.
int expected_snapshot_count(int epochs);

// Stream used for the naive imputation of a run seeded with `seed`.
RngStream naive_impute_stream(std::uint64_t seed);
Matrix naive_impute(const DataTable& scaled, const InitializerSpec& spec);

// Alternating training loop. Construction scales the table and performs the
// naive imputation; each run_epoch() makes one shuffled pass updating the flow
// on the NLL of the current imputation and the latent network on its own loss.
class Trainer {
 public:
  Trainer(const DataTable& table, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  double learning_rate() const { return learning_rate_; }
  int epochs_done() const { return epoch_; }

  EpochLog run_epoch();

  // Schedule pieces, public so callers can drive or inspect them.
  void refresh_imputation();
  void take_snapshot();
  void reset_flow();

  const DataTable& scaled_table() const { return scaled_; }
  const Matrix& imputed() const { return imputed_; }
  const FlowModel& flow() const { return flow_; }
  const LatentNet& latent() const { return latent_; }
  const CheckpointChain& chain() const { return chain_; }

  TrainResult finish() &&;

 private:
  TrainConfig config_;
  DataTable scaled_;
  Matrix imputed_;
  std::vector<char> has_observed_;
  double learning_rate_;

  FlowModel flow_;
  LatentNet latent_;
  diff::AdamState flow_opt_;
  diff::AdamState latent_opt_;
  RngStream flow_init_rng_;
  RngStream shuffle_rng_;

  CheckpointChain chain_;
  std::vector<EpochLog> log_;
  std::optional<int> converged_;
  int epoch_ = 0;

  void update_convergence();
};

TrainResult train(const DataTable& table, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// CSV: epoch,nll_loss,h_loss,schedule_event
void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace flowfill
