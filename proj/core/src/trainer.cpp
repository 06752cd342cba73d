#include "flowfill/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace flowfill {

std::string to_string(ScheduleMode mode) {
  return mode == ScheduleMode::kPowerOfTwo ? "power-of-2" : "every-epoch";
}

std::string to_string(InitMethod method) {
  return method == InitMethod::kMarginal ? "marginal" : "nearest";
}

std::string to_string(LatentInit init) {
  return init == LatentInit::kIdentity ? "identity" : "uniform";
}

ScheduleMode parse_schedule_mode(std::string_view text) {
  if (text == "power-of-2") return ScheduleMode::kPowerOfTwo;
  if (text == "every-epoch") return ScheduleMode::kEveryEpoch;
  throw UsageError("unknown schedule '" + std::string(text) + "'");
}

InitMethod parse_init_method(std::string_view text) {
  if (text == "marginal") return InitMethod::kMarginal;
  if (text == "nearest") return InitMethod::kNearest;
  throw UsageError("unknown initializer '" + std::string(text) + "'");
}

LatentInit parse_latent_init(std::string_view text) {
  if (text == "identity") return LatentInit::kIdentity;
  if (text == "uniform") return LatentInit::kUniform;
  throw UsageError("unknown latent initialization '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (!(lambda >= 0.0)) throw UsageError("lambda must be non-negative");
  if (convergence_window < 1) throw UsageError("convergence window must be at least 1");
  if (flow.layers < 1) throw UsageError("the flow needs at least one coupling layer");
}

double TrainConfig::effective_learning_rate(double missing_rate) const {
  return high_missing_lr_switch && missing_rate > 0.6 ? 1e-3 : learning_rate;
}

FlowModel CheckpointChain::flow_model(std::size_t i) const {
  return FlowModel(flow, snapshots.at(i).flow_params);
}

LatentNet CheckpointChain::latent_net(std::size_t i) const {
  return LatentNet(flow.dim, snapshots.at(i).latent_params);
}

Matrix combine(const Matrix& observed, const Matrix& imputed, const Mask& mask) {
  if (observed.rows() != imputed.rows() || observed.cols() != imputed.cols() ||
      observed.rows() != mask.rows() || observed.cols() != mask.cols()) {
    throw UsageError("combine: shape mismatch");
  }
  return (mask.array() != 0).select(imputed, observed);
}

bool is_schedule_epoch(int epoch) {
  if (epoch < 1) throw UsageError("epochs are 1-indexed");
  return (epoch & (epoch - 1)) == 0;
}

int expected_snapshot_count(int epochs) {
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  int count = 0;
  for (int e = 1; e <= epochs && e > 0; e *= 2) ++count;
  return count;
}

RngStream naive_impute_stream(std::uint64_t seed) {
  return RngStream(seed).derive("naive-impute");
}

Matrix naive_impute(const DataTable& scaled, const InitializerSpec& spec) {
  RngStream rng = naive_impute_stream(spec.seed);
  return spec.method == InitMethod::kMarginal ? init_impute_marginal(scaled, rng)
                                              : init_impute_nearest(scaled, rng);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const DataTable& table, TrainConfig config)
    : config_(std::move(config)),
      learning_rate_(config_.learning_rate),
      flow_init_rng_(RngStream(config_.seed).derive("flow-init")),
      shuffle_rng_(RngStream(config_.seed).derive("shuffle")) {
  config_.validate();
  if (table.rows() == 0 || table.cols() == 0) throw DataError("cannot train on an empty table");
  if (config_.init == InitMethod::kNearest && !table.grid()) {
    throw UsageError("nearest-neighbor initialization needs a grid shape");
  }

  ScaledTable s = minmax_scale(table);
  scaled_ = std::move(s.table);
  const InitializerSpec init{config_.init, config_.seed};
  imputed_ = naive_impute(scaled_, init);

  const double missing_rate =
      static_cast<double>(table.missing_count()) / static_cast<double>(table.values().size());
  learning_rate_ = config_.effective_learning_rate(missing_rate);

  has_observed_.resize(static_cast<std::size_t>(table.rows()));
  for (Index i = 0; i < table.rows(); ++i) {
    has_observed_[static_cast<std::size_t>(i)] =
        (table.mask().row(i).array() == 0).any() ? 1 : 0;
  }

  RngStream root(config_.seed);
  RngStream partition_rng = root.derive("partitions");
  FlowArchitecture arch;
  arch.dim = table.cols();
  arch.hidden_width = config_.flow.hidden_width > 0 ? config_.flow.hidden_width
                                                    : std::max(arch.dim, kMinHiddenWidth);
  arch.partitions = FlowModel::sample_partitions(arch.dim, config_.flow.layers, partition_rng);
  flow_ = FlowModel(arch);
  flow_.initialize(flow_init_rng_);

  RngStream latent_rng = root.derive("latent-init");
  latent_ = LatentNet::create(arch.dim, latent_rng, config_.latent_init);

  flow_opt_ = diff::AdamState(flow_.params(), learning_rate_);
  latent_opt_ = diff::AdamState(latent_.params(), learning_rate_);

  chain_.flow = arch;
  chain_.scale = std::move(s.params);
  chain_.init = init;
  chain_.grid = table.grid();
  chain_.config = config_;
}

EpochLog Trainer::run_epoch() {
  const int epoch = epoch_ + 1;
  const Index n = imputed_.rows();
  const Index dim = imputed_.cols();

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[shuffle_rng_.uniform_index(i)]);
  }

  double nll_total = 0.0;
  double h_total = 0.0;
  Index h_rows = 0;
  int batch_index = 0;
  for (Index start = 0; start < n; start += config_.batch_size, ++batch_index) {
    const Index end = std::min(n, start + config_.batch_size);
    const Index b = end - start;
    Matrix x(b, dim);
    std::vector<Index> h_idx;
    for (Index r = 0; r < b; ++r) {
      const Index src = order[static_cast<std::size_t>(start + r)];
      x.row(r) = imputed_.row(src);
      if (has_observed_[static_cast<std::size_t>(src)]) h_idx.push_back(src);
    }

    try {
      // Both gradients are taken at the same (theta, phi) before either moves.
      diff::Evaluation g_eval = diff::evaluate_with_gradients(
          [&](diff::Tape& tape, const diff::Binding& theta) {
            return nll_loss(tape, tape.constant(x), flow_, theta);
          },
          flow_.params());

      std::optional<diff::Evaluation> h_eval;
      if (!h_idx.empty()) {
        const auto hb = static_cast<Index>(h_idx.size());
        Matrix hx(hb, dim);
        Mask hm(hb, dim);
        for (Index r = 0; r < hb; ++r) {
          hx.row(r) = imputed_.row(h_idx[static_cast<std::size_t>(r)]);
          hm.row(r) = scaled_.mask().row(h_idx[static_cast<std::size_t>(r)]);
        }
        h_eval = diff::evaluate_with_gradients(
            [&](diff::Tape& tape, const diff::Binding& phi) {
              return h_loss(tape, hx, hm, flow_, latent_, phi, config_.lambda);
            },
            latent_.params());
        h_total += h_eval->loss * static_cast<double>(hb);
        h_rows += hb;
      }

      diff::adam_step(flow_.params(), g_eval.gradients, flow_opt_);
      if (h_eval) diff::adam_step(latent_.params(), h_eval->gradients, latent_opt_);
      nll_total += g_eval.loss * static_cast<double>(b);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch_index) + ": " + e.what());
    }
  }

  EpochLog entry;
  entry.epoch = epoch;
  entry.nll_loss = nll_total / static_cast<double>(n);
  entry.h_loss = h_rows > 0 ? h_total / static_cast<double>(h_rows) : 0.0;
  if (!std::isfinite(entry.nll_loss) || !std::isfinite(entry.h_loss)) {
    throw NumericError("epoch " + std::to_string(epoch) + ": non-finite training loss");
  }

  const bool power = is_schedule_epoch(epoch);
  if (config_.schedule == ScheduleMode::kEveryEpoch || power) refresh_imputation();
  epoch_ = epoch;
  if (power) {
    take_snapshot();
    reset_flow();
  }
  entry.schedule_event = power;
  log_.push_back(entry);
  update_convergence();
  return entry;
}

void Trainer::refresh_imputation() {
  constexpr Index kChunk = 4096;
  Matrix x_hat(imputed_.rows(), imputed_.cols());
  for (Index start = 0; start < imputed_.rows(); start += kChunk) {
    const Index len = std::min(kChunk, imputed_.rows() - start);
    x_hat.middleRows(start, len) = reconstruct(imputed_.middleRows(start, len), flow_, latent_);
  }
  imputed_ = combine(imputed_, x_hat, scaled_.mask());
}

void Trainer::take_snapshot() {
  chain_.snapshots.push_back(Snapshot{epoch_, flow_.params(), latent_.params()});
}

void Trainer::reset_flow() {
  flow_.initialize(flow_init_rng_);
  flow_opt_.reset();
}

void Trainer::update_convergence() {
  const auto w = static_cast<std::size_t>(config_.convergence_window);
  if (converged_ || log_.size() < w + 1) return;
  auto moving = [&](std::size_t end, auto field) {
    double s = 0.0;
    for (std::size_t i = end - w; i < end; ++i) s += log_[i].*field;
    return s / static_cast<double>(w);
  };
  auto settled = [&](auto field) {
    const double now = moving(log_.size(), field);
    const double before = moving(log_.size() - 1, field);
    return std::abs(now - before) <= config_.convergence_tolerance *
                                         std::max(std::abs(before), 1e-12);
  };
  if (settled(&EpochLog::nll_loss) && settled(&EpochLog::h_loss)) converged_ = epoch_;
}

TrainResult Trainer::finish() && {
  TrainResult out;
  out.chain = std::move(chain_);
  out.log = std::move(log_);
  out.converged_epoch = converged_;
  out.imputed = std::move(imputed_);
  return out;
}

TrainResult train(const DataTable& table, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  Trainer trainer(table, config);
  for (int e = 0; e < config.epochs; ++e) {
    EpochLog entry = trainer.run_epoch();
    if (on_epoch) on_epoch(entry);
  }
  return std::move(trainer).finish();
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "epoch,nll_loss,h_loss,schedule_event\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_real(e.nll_loss) << ',' << format_real(e.h_loss) << ','
        << (e.schedule_event ? 1 : 0) << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace flowfill
