#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <future>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "flowfill/checkpoint.hpp"
#include "flowfill/dataset.hpp"
#include "flowfill/digest.hpp"
#include "flowfill/imputer.hpp"
#include "flowfill/trainer.hpp"

namespace flowfill::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

bool resolve_header(const std::string& mode, const fs::path& path) {
  if (mode == "yes") return true;
  if (mode == "no") return false;
  if (mode == "auto") return csv_has_header(path);
  throw UsageError("--header must be auto, yes or no");
}

DataTable read_input(const fs::path& path, const std::string& header_mode) {
  if (!fs::exists(path)) throw DataError("input file '" + path.string() + "' does not exist");
  return load_csv(path, resolve_header(header_mode, path));
}

std::optional<GridShape> parse_grid(const std::string& text) {
  if (text.empty()) return std::nullopt;
  GridShape g;
  char x1 = 0, x2 = 0;
  std::istringstream is(text);
  is >> g.rows >> x1 >> g.cols;
  if (is >> x2) {
    is >> g.channels;
  } else {
    g.channels = 1;
  }
  if (!is.eof() || x1 != 'x' || (x2 != 0 && x2 != 'x') || g.rows < 1 || g.cols < 1 ||
      g.channels < 1) {
    throw UsageError("--grid expects ROWSxCOLS or ROWSxCOLSxCHANNELS, got '" + text + "'");
  }
  return g;
}

// Run manifest: written with status=running before work starts, rewritten at
// the end with the outcome.
class RunManifest {
 public:
  RunManifest(fs::path path, std::string command) : path_(std::move(path)) {
    kv_["artifact_version"] = kVersion;
    kv_["command"] = std::move(command);
    kv_["started_at"] = timestamp();
    kv_["status"] = "running";
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void input(const std::string& key, const fs::path& path) {
    kv_["input." + key] = path.string();
    kv_["input." + key + ".sha256"] = sha256_file(path);
  }
  void write() { write_key_values(path_, kv_); }
  void finish(const std::string& status) {
    kv_["status"] = status;
    kv_["finished_at"] = timestamp();
    write();
  }

 private:
  fs::path path_;
  KeyValues kv_;
};

struct TrainFlags {
  int epochs = 100;
  Index batch = 128;
  double lr = 1e-4;
  double lambda = 0.003;
  std::uint64_t seed = 0;
  std::string schedule = "power-of-2";
  std::string init = "marginal";
  std::string latent_init = "uniform";
  std::string grid;
  std::size_t layers = kDefaultCouplingLayers;
  Index hidden = 0;
  bool no_lr_switch = false;

  void add_to(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs M")->capture_default_str();
    app->add_option("--batch", batch, "Mini-batch size")->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--lambda", lambda, "Likelihood weight in the latent loss")
        ->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--schedule", schedule, "power-of-2 | every-epoch")->capture_default_str();
    app->add_option("--init", init, "Naive initializer: marginal | nearest")
        ->capture_default_str();
    app->add_option("--latent-init", latent_init, "identity | uniform")->capture_default_str();
    app->add_option("--grid", grid, "Image layout ROWSxCOLS[xCHANNELS]");
    app->add_option("--layers", layers, "Coupling layers")->capture_default_str();
    app->add_option("--hidden", hidden, "Hidden width of s/t networks (0 = max(n, 8))")
        ->capture_default_str();
    app->add_flag("--no-lr-switch", no_lr_switch,
                  "Keep --lr even when more than 60% of entries are missing");
  }

  TrainConfig config() const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch;
    c.learning_rate = lr;
    c.lambda = lambda;
    c.seed = seed;
    c.schedule = parse_schedule_mode(schedule);
    c.init = parse_init_method(init);
    c.latent_init = parse_latent_init(latent_init);
    c.flow.layers = layers;
    c.flow.hidden_width = hidden;
    c.high_missing_lr_switch = !no_lr_switch;
    c.validate();
    return c;
  }

  void echo(RunManifest& m, const TrainConfig& c) const {
    m.set("config.epochs", std::to_string(c.epochs));
    m.set("config.batch_size", std::to_string(c.batch_size));
    m.set("config.learning_rate", format_real(c.learning_rate));
    m.set("config.lambda", format_real(c.lambda));
    m.set("config.seed", std::to_string(c.seed));
    m.set("config.schedule", to_string(c.schedule));
    m.set("config.init", to_string(c.init));
    m.set("config.latent_init", to_string(c.latent_init));
    m.set("config.coupling_layers", std::to_string(c.flow.layers));
    m.set("config.hidden_width", std::to_string(c.flow.hidden_width));
    m.set("config.high_missing_lr_switch", c.high_missing_lr_switch ? "true" : "false");
    m.set("config.grid", grid.empty() ? "none" : grid);
    m.set("rng", std::string(RngStream::kAlgorithm));
  }
};

// ---------------------------------------------------------------------------

int cmd_genmask(const fs::path& input, const std::string& header, double rate,
                std::uint64_t seed, bool guard, const fs::path& output, std::ostream& out) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw UsageError("--rate must lie in [0, 1]");
  DataTable table = read_input(input, header);
  RngStream rng = RngStream(seed).derive("mask");
  Mask mask = generate_mcar_mask(table.rows(), table.cols(), rate, rng, guard);
  write_mask_csv(output, mask);
  const double fraction =
      mask.size() ? static_cast<double>(mask.cast<Index>().sum()) / static_cast<double>(mask.size())
                  : 0.0;
  out << "mask " << mask.rows() << "x" << mask.cols() << ", missing fraction "
      << format_real(fraction) << " -> " << output.string() << '\n';
  return kOk;
}

int cmd_train(const fs::path& input, const std::string& header, const fs::path& mask_path,
              std::optional<double> rate, bool guard, const TrainFlags& flags,
              const fs::path& outdir, std::ostream& out) {
  if (!mask_path.empty() && rate) throw UsageError("--mask and --rate are mutually exclusive");
  if (rate && !(*rate >= 0.0 && *rate <= 1.0)) throw UsageError("--rate must lie in [0, 1]");
  const TrainConfig config = flags.config();

  DataTable table = read_input(input, header);
  if (auto g = parse_grid(flags.grid)) {
    table = DataTable(table.values(), table.mask(), table.column_names(), g);
  }
  if (table.has_missing() && (!mask_path.empty() || rate)) {
    throw UsageError("input already has missing cells; --mask/--rate apply to complete inputs");
  }
  fs::create_directories(outdir);
  RunManifest manifest(outdir / "run.manifest", "train");
  manifest.input("data", input);
  if (!table.has_missing()) {
    if (!mask_path.empty()) {
      manifest.input("mask", mask_path);
      table = table.with_mask(load_mask_csv(mask_path));
    } else if (rate) {
      RngStream rng = RngStream(config.seed).derive("mask");
      const Mask mask = generate_mcar_mask(table.rows(), table.cols(), *rate, rng, guard);
      write_mask_csv(outdir / "mask.csv", mask);
      manifest.set("mask.rate", format_real(*rate));
      manifest.set("mask.guard", guard ? "true" : "false");
      manifest.set("output.mask", (outdir / "mask.csv").string());
      table = table.with_mask(mask);
    } else {
      throw UsageError("input is complete: pass --mask or --rate to choose missing entries");
    }
  }
  flags.echo(manifest, config);
  manifest.set("output.chain", outdir.string());
  manifest.set("output.log", (outdir / "train_log.csv").string());
  manifest.write();

  try {
    TrainResult result = train(table, config);
    save_chain(outdir, result.chain);
    write_training_log(outdir / "train_log.csv", result.log);
    manifest.set("snapshots", std::to_string(result.chain.snapshots.size()));
    manifest.set("converged_epoch",
                 result.converged_epoch ? std::to_string(*result.converged_epoch) : "none");
    manifest.finish("ok");
    out << "trained " << config.epochs << " epochs on " << table.rows() << "x" << table.cols()
        << ", " << result.chain.snapshots.size() << " snapshots -> " << outdir.string() << '\n';
    if (!result.log.empty()) {
      out << "final nll_loss " << format_real(result.log.back().nll_loss) << ", h_loss "
          << format_real(result.log.back().h_loss) << '\n';
    }
  } catch (const std::exception& e) {
    manifest.finish(std::string("failed: ") + e.what());
    throw;
  }
  return kOk;
}

int cmd_impute(const fs::path& input, const std::string& header, const fs::path& chain_dir,
               const fs::path& mask_path, const fs::path& truth_path, const fs::path& output,
               std::ostream& out) {
  if (!fs::exists(chain_dir / kChainManifestName)) {
    throw DataError("no chain manifest in '" + chain_dir.string() + "'");
  }
  const CheckpointChain chain = load_chain(chain_dir);
  DataTable table = read_input(input, header);
  if (!mask_path.empty()) table = table.with_mask(load_mask_csv(mask_path));

  fs::path manifest_path = output;
  manifest_path += ".manifest";
  RunManifest manifest(manifest_path, "impute");
  manifest.input("data", input);
  manifest.input("chain", chain_dir / kChainManifestName);
  manifest.set("output.data", output.string());
  manifest.write();
  try {
    ImputationResult result = impute_chain(table, chain);
    write_matrix_csv(output, result.completed, table.column_names());
    out << "imputed " << result.imputed_count << " entries -> " << output.string() << '\n';
    if (!truth_path.empty()) {
      const DataTable truth = read_input(truth_path, header);
      if (truth.has_missing()) throw DataError("--truth must be fully observed");
      attach_metrics(result, truth.values(), table.mask(), chain.scale);
      out << "rmse_scaled " << format_real(*result.rmse_scaled) << ", rmse_raw "
          << format_real(*result.rmse_raw) << '\n';
      manifest.set("rmse_scaled", format_real(*result.rmse_scaled));
      manifest.set("rmse_raw", format_real(*result.rmse_raw));
    }
    manifest.finish("ok");
  } catch (const std::exception& e) {
    manifest.finish(std::string("failed: ") + e.what());
    throw;
  }
  return kOk;
}

struct FoldMetrics {
  double rmse_scaled = 0.0;
  double rmse_raw = 0.0;
  Index imputed = 0;
};

int cmd_eval(const fs::path& input, const std::string& header, double rate, Index folds,
             bool guard, std::size_t jobs, std::string dataset, const TrainFlags& flags,
             const fs::path& output, std::ostream& out) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw UsageError("--rate must lie in [0, 1]");
  const TrainConfig base = flags.config();
  const DataTable truth = read_input(input, header);
  if (truth.has_missing()) throw DataError("eval needs a fully observed ground-truth input");
  if (dataset.empty()) dataset = input.stem().string();

  fs::path manifest_path = output;
  manifest_path += ".manifest";
  RunManifest manifest(manifest_path, "eval");
  manifest.input("data", input);
  manifest.set("eval.rate", format_real(rate));
  manifest.set("eval.folds", std::to_string(folds));
  manifest.set("eval.guard", guard ? "true" : "false");
  manifest.set("eval.dataset", dataset);
  flags.echo(manifest, base);
  manifest.set("output.metrics", output.string());
  manifest.write();

  try {
    RngStream root(base.seed);
    RngStream mask_rng = root.derive("mask");
    const Mask mask = generate_mcar_mask(truth.rows(), truth.cols(), rate, mask_rng, guard);
    RngStream fold_rng = root.derive("folds");
    const auto split = kfold_split(truth.rows(), folds, fold_rng);

    auto run_fold = [&](std::size_t f) {
      std::vector<Index> train_idx;
      std::vector<char> in_fold(static_cast<std::size_t>(truth.rows()), 0);
      for (Index i : split[f]) in_fold[static_cast<std::size_t>(i)] = 1;
      for (Index i = 0; i < truth.rows(); ++i) {
        if (!in_fold[static_cast<std::size_t>(i)]) train_idx.push_back(i);
      }
      auto corrupted = [&](const std::vector<Index>& rows) {
        Mask m(static_cast<Index>(rows.size()), truth.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Index>(r)) = mask.row(rows[r]);
        return truth.select_rows(rows).with_mask(m);
      };
      TrainConfig config = base;
      config.seed = splitmix64(base.seed + 0x100 + f);
      const DataTable train_table = corrupted(train_idx);
      TrainResult trained = train(train_table, config);
      const DataTable test_table = corrupted(split[f]);
      ImputationResult result = impute_chain(test_table, trained.chain);
      attach_metrics(result, truth.select_rows(split[f]).values(), test_table.mask(),
                     trained.chain.scale);
      return FoldMetrics{*result.rmse_scaled, *result.rmse_raw, result.imputed_count};
    };

    std::vector<FoldMetrics> metrics(split.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, split.size()));
    for (std::size_t start = 0; start < split.size(); start += workers) {
      std::vector<std::future<FoldMetrics>> pending;
      const std::size_t end = std::min(split.size(), start + workers);
      for (std::size_t f = start; f < end; ++f) {
        pending.push_back(std::async(std::launch::async, run_fold, f));
      }
      for (std::size_t f = start; f < end; ++f) metrics[f] = pending[f - start].get();
    }

    auto mean_std = [&](double FoldMetrics::*field) {
      double mean = 0.0;
      for (const auto& m : metrics) mean += m.*field;
      mean /= static_cast<double>(metrics.size());
      double var = 0.0;
      for (const auto& m : metrics) var += (m.*field - mean) * (m.*field - mean);
      var /= static_cast<double>(metrics.size() > 1 ? metrics.size() - 1 : 1);
      return std::pair{mean, std::sqrt(var)};
    };

    std::ofstream csv(output, std::ios::binary | std::ios::trunc);
    if (!csv) throw DataError("cannot write '" + output.string() + "'");
    csv << "dataset,missing_rate,fold,rmse_scaled,rmse_raw,n_imputed,rmse_scaled_std,"
           "rmse_raw_std\n";
    Index total = 0;
    for (std::size_t f = 0; f < metrics.size(); ++f) {
      csv << dataset << ',' << format_real(rate) << ',' << f << ','
          << format_real(metrics[f].rmse_scaled) << ',' << format_real(metrics[f].rmse_raw) << ','
          << metrics[f].imputed << ",,\n";
      total += metrics[f].imputed;
    }
    const auto [scaled_mean, scaled_std] = mean_std(&FoldMetrics::rmse_scaled);
    const auto [raw_mean, raw_std] = mean_std(&FoldMetrics::rmse_raw);
    csv << dataset << ',' << format_real(rate) << ",mean," << format_real(scaled_mean) << ','
        << format_real(raw_mean) << ',' << total << ',' << format_real(scaled_std) << ','
        << format_real(raw_std) << '\n';
    if (!csv) throw DataError("write failed for '" + output.string() + "'");

    out << dataset << ": rmse_scaled " << format_real(scaled_mean) << " +/- "
        << format_real(scaled_std) << " over " << metrics.size() << " folds -> "
        << output.string() << '\n';
    manifest.set("rmse_scaled.mean", format_real(scaled_mean));
    manifest.set("rmse_scaled.std", format_real(scaled_std));
    manifest.finish("ok");
  } catch (const std::exception& e) {
    manifest.finish(std::string("failed: ") + e.what());
    throw;
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Missing-data imputation with normalizing flows"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string header = "auto";

  // genmask
  auto* genmask = app.add_subcommand("genmask", "Write an MCAR mask for a CSV file");
  fs::path gm_input, gm_output;
  double gm_rate = 0.2;
  std::uint64_t gm_seed = 0;
  bool gm_guard = false;
  genmask->add_option("--input", gm_input, "Input CSV")->required();
  genmask->add_option("--rate", gm_rate, "Missing probability per entry")->required();
  genmask->add_option("--seed", gm_seed, "Random seed")->capture_default_str();
  genmask->add_flag("--guard", gm_guard, "Keep at least one observed entry per row");
  genmask->add_option("--output", gm_output, "Mask CSV to write")->required();
  genmask->add_option("--header", header, "auto | yes | no")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a checkpoint chain");
  fs::path tr_input, tr_mask, tr_outdir;
  std::optional<double> tr_rate;
  bool tr_guard = false;
  TrainFlags tr_flags;
  train_cmd->add_option("--input", tr_input, "Input CSV (empty cells = missing)")->required();
  train_cmd->add_option("--mask", tr_mask, "Mask CSV for a complete input");
  train_cmd->add_option("--rate", tr_rate, "Synthesize an MCAR mask for a complete input");
  train_cmd->add_flag("--guard", tr_guard, "With --rate: keep one observed entry per row");
  train_cmd->add_option("--outdir", tr_outdir, "Output directory")->required();
  train_cmd->add_option("--header", header, "auto | yes | no")->capture_default_str();
  tr_flags.add_to(train_cmd);

  // impute
  auto* impute = app.add_subcommand("impute", "Impute missing cells with a trained chain");
  fs::path im_input, im_chain, im_mask, im_truth, im_output;
  impute->add_option("--input", im_input, "Input CSV (empty cells = missing)")->required();
  impute->add_option("--chain", im_chain, "Chain directory written by train")->required();
  impute->add_option("--mask", im_mask, "Extra mask applied on top of the input");
  impute->add_option("--truth", im_truth, "Ground truth CSV for RMSE reporting");
  impute->add_option("--output", im_output, "Completed CSV to write")->required();
  impute->add_option("--header", header, "auto | yes | no")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Cross-validated imputation RMSE");
  fs::path ev_input, ev_output;
  double ev_rate = 0.2;
  Index ev_folds = 5;
  bool ev_guard = false;
  std::size_t ev_jobs = 1;
  std::string ev_dataset;
  TrainFlags ev_flags;
  eval->add_option("--input", ev_input, "Fully observed CSV")->required();
  eval->add_option("--rate", ev_rate, "MCAR missing rate")->capture_default_str();
  eval->add_option("--folds", ev_folds, "Cross-validation folds")->capture_default_str();
  eval->add_flag("--guard", ev_guard, "Keep at least one observed entry per row");
  eval->add_option("--jobs", ev_jobs, "Folds trained concurrently")->capture_default_str();
  eval->add_option("--dataset", ev_dataset, "Dataset label (default: input file stem)");
  eval->add_option("--output", ev_output, "Metrics CSV to write")->required();
  eval->add_option("--header", header, "auto | yes | no")->capture_default_str();
  ev_flags.add_to(eval);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return kUsageError;
  }

  try {
    if (genmask->parsed()) {
      return cmd_genmask(gm_input, header, gm_rate, gm_seed, gm_guard, gm_output, out);
    }
    if (train_cmd->parsed()) {
      return cmd_train(tr_input, header, tr_mask, tr_rate, tr_guard, tr_flags, tr_outdir, out);
    }
    if (impute->parsed()) {
      return cmd_impute(im_input, header, im_chain, im_mask, im_truth, im_output, out);
    }
    if (eval->parsed()) {
      return cmd_eval(ev_input, header, ev_rate, ev_folds, ev_guard, ev_jobs, ev_dataset,
                      ev_flags, ev_output, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}

}  // namespace flowfill::cli
