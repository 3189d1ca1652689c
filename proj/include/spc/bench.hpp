#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spc/masks.hpp"
#include "spc/train.hpp"

namespace spc {

/// Configuration problems map to CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One declared experiment sweep, parsed from a key = value text file.
struct ExperimentConfig {
  std::string task;                   // reconstruct | classify | onn-classify | onn-reconstruct | theory
  std::vector<std::string> families;  // mask families (classify also accepts "onn")
  std::string noise = "poisson";      // noiseless | gaussian | poisson
  double sigma = 1.0;
  std::string rail = "auto";          // auto | single | dual1 | dual2
  std::vector<double> budgets;
  int trials = 100;
  std::uint64_t seed = 0;
  int seeds = 1;  // independent repetitions for learning tasks

  Eigen::Index n = 64;
  Eigen::Index m = 0;  // 0 -> n
  double open_probability = 0.5;
  std::string scene = "uniform";  // uniform | random | csv path (one row)

  std::string dataset;  // mnist | synthetic-digits | spectral:<csv>:<bands>
  std::string data_dir;
  Eigen::Index train_size = 0, validation_size = 0, test_size = 0;  // 0 = split defaults

  std::string mask_init = "random";
  double learning_rate = 5e-3;
  int batch_size = 128;
  int epochs = 100;
  double dropout = 0.2;
  int patience = 20;
  std::string optimizer = "adam";

  int patterns = 2048;  // reconstruction protocol
  int rounds = 10;
  int epochs_per_round = 12;

  std::string raw_text;  // original config body, hashed into every output

  TrainConfig train_config(std::uint64_t run_seed) const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

struct ResultRow {
  std::string experiment;
  std::string family;
  std::string noise;
  double photons = 0.0;
  int trial = 0;
  std::string metric;  // mse | accuracy | loss | offdiag_ratio
  double value = 0.0;
};

/// Executes the configured sweep; writes results.csv (long format), a JSON
/// summary, and task artifacts under out_dir. Deterministic for fixed seeds.
void run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                    int threads = 1);

std::vector<ResultRow> read_result_rows(const std::filesystem::path& csv_path);

struct AggregateCell {
  int count = 0;
  double mean = 0.0;
  double stderr_of_mean = 0.0;  // 0 when count < 2
};

using AggregateKey = std::tuple<std::string, std::string, std::string, double, std::string>;

/// Groups rows by (experiment, family, noise, photons, metric).
std::map<AggregateKey, AggregateCell> aggregate_rows(const std::vector<ResultRow>& rows);

/// Aggregation plus human-readable comparison verdicts (mse ratios between
/// hadamard and raster, accuracy orderings). Returns the printed report.
std::string report_results(const std::filesystem::path& csv_path,
                           const std::filesystem::path& summary_out = {});

struct Histogram {
  std::vector<double> lower_edges;
  std::vector<long> counts;
  double bin_width = 0.0;
};

/// Uniform-bin histogram over all matrix entries; [lo, hi] defaults to the
/// data range, final bin right-inclusive.
Histogram mask_histogram(const Eigen::MatrixXd& matrix, int bins, double lo, double hi);
Histogram mask_histogram(const Eigen::MatrixXd& matrix, int bins);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& histogram,
                         const std::string& header_comment = {});

/// Synthetic stand-in digit set (procedural seven-segment-style glyphs with
/// jitter and blur, 28x28). Clearly labeled provenance; used when the real
/// IDX files are not available.
LabeledDataset synthetic_digits(Eigen::Index count, std::uint64_t seed);

/// Loads train+test MNIST IDX files from dir (raises ConfigError when absent)
/// and applies the 32x32 / [0.3, 1] preprocessing.
LabeledDataset load_mnist_dataset(const std::filesystem::path& dir);

}  // namespace spc
