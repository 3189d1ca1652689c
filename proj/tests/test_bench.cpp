#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "spc/bench.hpp"
#include "spc/mask_io.hpp"
#include "spc/theory.hpp"
#include "test_helpers.hpp"

using namespace spc;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE_BEGIN("bench");

TEST_CASE("config parsing") {
  const ExperimentConfig config = parse_config_text(R"(
    # comment line
    task = reconstruct
    families = raster, hadamard
    noise = poisson
    budgets = 1e2, 1e3
    trials = 50
    seed = 9
    n = 16
  )");
  CHECK(config.task == "reconstruct");
  CHECK(config.families == std::vector<std::string>{"raster", "hadamard"});
  CHECK(config.budgets == std::vector<double>{100.0, 1000.0});
  CHECK(config.trials == 50);
  CHECK(config.seed == 9);
  CHECK(config.n == 16);

  CHECK_THROWS_WITH_AS(parse_config_text("bogus_key = 1\n"),
                       doctest::Contains("unknown config key 'bogus_key'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("trials = soon\n"), doctest::Contains("trials"),
                       ConfigError);
  CHECK_THROWS_AS(parse_config_text("task reconstruct\n"), ConfigError);
}

TEST_CASE("run rejects incomplete configurations") {
  const auto dir = fresh_dir("spc_bench_invalid");
  ExperimentConfig config = parse_config_text("task = reconstruct\nfamilies = raster\nn = 8\n");
  config.budgets.clear();
  CHECK_THROWS_WITH_AS(run_experiment(config, dir), doctest::Contains("budgets"), ConfigError);

  ExperimentConfig unknown = parse_config_text("task = translate\nn = 8\n");
  CHECK_THROWS_WITH_AS(run_experiment(unknown, dir), doctest::Contains("unknown task"), ConfigError);
}

TEST_CASE("reconstruct task emits deterministic long-format rows") {
  const auto dir_a = fresh_dir("spc_bench_recon_a");
  const auto dir_b = fresh_dir("spc_bench_recon_b");
  const ExperimentConfig config = parse_config_text(R"(
    task = reconstruct
    families = raster, hadamard
    noise = poisson
    budgets = 1e3, 1e4
    trials = 200
    seed = 4
    n = 16
    scene = random
  )");
  run_experiment(config, dir_a);
  run_experiment(config, dir_b, 3);  // different thread count, same bytes

  const std::string csv_a = read_text(dir_a / "results.csv");
  CHECK(csv_a == read_text(dir_b / "results.csv"));
  CHECK(csv_a.find("# config_hash=") == 0);
  CHECK(csv_a.find("version=") != std::string::npos);

  const std::vector<ResultRow> rows = read_result_rows(dir_a / "results.csv");
  CHECK(rows.size() == 2 * 2 * 200);
  CHECK(std::filesystem::exists(dir_a / "summary.csv"));
  CHECK(std::filesystem::exists(dir_a / "masks_raster.csv"));

  // The multiplexing-penalty ratio shows up in the aggregated means.
  const auto cells = aggregate_rows(rows);
  for (double budget : {1e3, 1e4}) {
    const double raster_mse =
        cells.at({"reconstruct", "raster", "poisson", budget, "mse"}).mean;
    const double hadamard_mse =
        cells.at({"reconstruct", "hadamard", "poisson", budget, "mse"}).mean;
    CHECK(hadamard_mse / raster_mse == doctest::Approx(2.0).epsilon(0.10));
  }

  const std::string report = report_results(dir_a / "results.csv");
  CHECK(report.find("mse ratio hadamard/raster") != std::string::npos);
}

TEST_CASE("mid-run failures flush completed rows with a marker") {
  const auto dir = fresh_dir("spc_bench_partial");
  // Forcing signed masks through the single rail fails when the hadamard
  // cells execute; the raster cells have finished by then.
  const ExperimentConfig config = parse_config_text(R"(
    task = reconstruct
    families = raster, hadamard
    rail = single
    noise = poisson
    budgets = 1e3
    trials = 20
    seed = 2
    n = 8
  )");
  CHECK_THROWS_AS(run_experiment(config, dir), std::invalid_argument);

  const std::string csv = read_text(dir / "results.csv");
  CHECK(csv.find("# FAILED:") != std::string::npos);
  const std::vector<ResultRow> rows = read_result_rows(dir / "results.csv");
  CHECK(rows.size() == 20);  // the completed raster cell
  for (const ResultRow& row : rows) CHECK(row.family == "raster");
}

TEST_CASE("theory task reproduces the closed forms") {
  const auto dir = fresh_dir("spc_bench_theory");
  const ExperimentConfig config = parse_config_text(R"(
    task = theory
    budgets = 1e4
    sigma = 1
    n = 64
    scene = ones
  )");
  run_experiment(config, dir);
  std::ifstream table(dir / "theory.csv");
  std::string line;
  std::getline(table, line);  // hash comment
  CHECK(line.find("# config_hash=") == 0);
  std::getline(table, line);  // header
  std::map<std::string, std::pair<double, double>> cells;
  while (std::getline(table, line)) {
    const auto first = line.find(','), second = line.find(',', line.find(',', line.find(',') + 1) + 1);
    const std::string key = line.substr(0, line.find(',', first + 1));
    std::stringstream rest(line.substr(second + 1));
    double per_pixel = 0.0, trace = 0.0;
    char comma = 0;
    rest >> per_pixel >> comma >> trace;
    cells[key] = {per_pixel, trace};
  }
  // Closed forms at x = ones, N = 64, total = 1e4.
  CHECK(cells.at("raster,gaussian").first == doctest::Approx(0.16777216).epsilon(1e-12));
  CHECK(cells.at("hadamard,gaussian").first == doctest::Approx(0.02097152).epsilon(1e-12));
  CHECK(cells.at("raster,poisson").first == doctest::Approx(0.4096).epsilon(1e-12));
  CHECK(cells.at("hadamard,poisson").first == doctest::Approx(0.8192).epsilon(1e-12));
  CHECK(cells.at("hadamard,poisson").second ==
        doctest::Approx(2.0 * cells.at("raster,poisson").second).epsilon(1e-12));
}

TEST_CASE("report aggregates a hand-built fixture exactly") {
  const auto dir = fresh_dir("spc_bench_report");
  {
    std::ofstream out(dir / "rows.csv");
    out << "# config_hash=0 version=test\n";
    out << "experiment,family,noise,photons,trial,metric,value\n";
    out << "fixture,raster,poisson,100,0,mse,1\n";
    out << "fixture,raster,poisson,100,1,mse,3\n";
    out << "fixture,hadamard,poisson,100,0,mse,4\n";
    out << "fixture,hadamard,poisson,100,1,mse,4\n";
    out << "fixture,solo,poisson,100,0,accuracy,0.5\n";
  }
  const std::vector<ResultRow> rows = read_result_rows(dir / "rows.csv");
  const auto cells = aggregate_rows(rows);

  const AggregateCell raster_cell = cells.at({"fixture", "raster", "poisson", 100.0, "mse"});
  CHECK(raster_cell.count == 2);
  CHECK(raster_cell.mean == 2.0);
  CHECK(raster_cell.stderr_of_mean == doctest::Approx(1.0));  // sd = sqrt(2), se = 1

  // Two identical trials: zero spread.
  const AggregateCell hadamard_cell = cells.at({"fixture", "hadamard", "poisson", 100.0, "mse"});
  CHECK(hadamard_cell.stderr_of_mean == 0.0);

  // Single row: mean is the value and the spread is reported as n=1.
  const AggregateCell solo = cells.at({"fixture", "solo", "poisson", 100.0, "accuracy"});
  CHECK(solo.count == 1);
  CHECK(solo.mean == 0.5);
  const std::string report = report_results(dir / "rows.csv", dir / "summary.csv");
  CHECK(report.find("(n=1)") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "summary.csv"));

  {
    std::ofstream out(dir / "bad.csv");
    out << "experiment,family,noise,photons,trial,metric,value\n";
    out << "fixture,raster,poisson,100,0,mse\n";
  }
  CHECK_THROWS_WITH_AS(read_result_rows(dir / "bad.csv"), doctest::Contains("line 2"),
                       std::runtime_error);
}

TEST_CASE("mask histograms") {
  // Identity 4x4 over two bins: twelve zeros, four ones.
  const Histogram identity_histogram = mask_histogram(Eigen::MatrixXd::Identity(4, 4), 2);
  CHECK(identity_histogram.counts == std::vector<long>{12, 4});

  // Sylvester 4x4: count the negative entries directly (rows carry 0, 2, 2
  // and 2 of them), then pin the histogram against that enumeration.
  const Eigen::MatrixXd h4 = sylvester_hadamard(4).cast<double>();
  long negatives = 0;
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 4; ++c)
      if (h4(r, c) < 0.0) ++negatives;
  CHECK(negatives == 6);
  const Histogram hadamard_histogram = mask_histogram(h4, 2, -1.0, 1.0);
  CHECK(hadamard_histogram.counts == std::vector<long>{negatives, 16 - negatives});

  // Empty bins are reported as zero counts.
  const Histogram sparse = mask_histogram(Eigen::MatrixXd::Identity(4, 4), 4, 0.0, 1.0);
  CHECK(sparse.counts == std::vector<long>{12, 0, 0, 4});

  CHECK_THROWS_AS(mask_histogram(h4, 0, -1.0, 1.0), std::invalid_argument);
}

TEST_CASE("synthetic digit fixture is a valid classification dataset") {
  const LabeledDataset digits = synthetic_digits(400, 5);
  CHECK(digits.size() == 400);
  CHECK(digits.dimension() == 1024);
  CHECK(digits.class_count == 10);
  CHECK(digits.samples.minCoeff() >= 0.3);
  CHECK(digits.samples.maxCoeff() <= 1.0);
  CHECK(digits.provenance == "synthetic-digits");
  // All ten classes appear in a sample this large.
  std::vector<int> counts(10, 0);
  for (int label : digits.labels) ++counts[static_cast<std::size_t>(label)];
  for (int count : counts) CHECK(count > 10);
  // Deterministic in (count, seed).
  CHECK(exact_equal(synthetic_digits(50, 5).samples, synthetic_digits(50, 5).samples));
}

TEST_CASE("classification task runs end to end on the synthetic fixture") {
  const auto dir = fresh_dir("spc_bench_classify");
  const ExperimentConfig config = parse_config_text(R"(
    task = classify
    families = truncated-hadamard, pca
    dataset = synthetic-digits:700
    noise = poisson
    budgets = 1e8
    n = 1024
    m = 16
    seeds = 1
    seed = 3
    train_size = 400
    validation_size = 120
    test_size = 150
    epochs = 12
    patience = 12
    batch_size = 100
    learning_rate = 0.005
  )");
  run_experiment(config, dir);
  const std::vector<ResultRow> rows = read_result_rows(dir / "results.csv");
  CHECK(rows.size() == 2);
  for (const ResultRow& row : rows) {
    CHECK(row.metric == "accuracy");
    CHECK(row.value > 0.3);  // far above the 0.1 chance level
  }
  CHECK(std::filesystem::exists(dir / "checkpoint_pca.spcn"));
  CHECK(std::filesystem::exists(dir / "checkpoint_pca.spcn.json"));
}

TEST_CASE("mnist loader reports missing files as a configuration problem") {
  CHECK_THROWS_WITH_AS(load_mnist_dataset(fresh_dir("spc_no_mnist")), doctest::Contains("mnist"),
                       ConfigError);
}

TEST_SUITE_END();
