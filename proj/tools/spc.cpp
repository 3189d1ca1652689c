// Command-line front end: mask generation, simulation sweeps, scanner
// training, closed-form tables, result aggregation, and mask histograms.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "spc/bench.hpp"
#include "spc/mask_io.hpp"
#include "spc/theory.hpp"
#include "spc/version.hpp"

namespace {

struct GlobalFlags {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  std::string out_dir = "out";
};

spc::ExperimentConfig load_config(const std::string& path, const GlobalFlags& flags,
                                  const std::string& expected_task) {
  spc::ExperimentConfig config = spc::parse_config_file(path);
  if (flags.seed_given) config.seed = flags.seed;
  if (!expected_task.empty() && config.task != expected_task)
    throw spc::ConfigError("config task '" + config.task + "' does not match subcommand (expected '" +
                           expected_task + "')");
  return config;
}

void run_and_report(const spc::ExperimentConfig& config, const GlobalFlags& flags) {
  spc::run_experiment(config, flags.out_dir, flags.threads);
  std::printf("results written to %s\n", flags.out_dir.c_str());
  if (config.task != "theory")
    std::fputs(spc::report_results(std::filesystem::path(flags.out_dir) / "results.csv").c_str(),
               stdout);
}

int generate_codes(const std::string& family, long n, long m, double p, std::uint64_t seed,
                   const std::string& out, const std::string& csv, const std::string& meta) {
  const long mask_count = m > 0 ? m : n;
  spc::MaskSet masks;
  const spc::MaskFamily parsed = spc::mask_family_from_string(family);
  switch (parsed) {
    case spc::MaskFamily::Raster: masks = spc::raster(n); break;
    case spc::MaskFamily::Impulse: masks = spc::impulse(n); break;
    case spc::MaskFamily::Hadamard: masks = spc::hadamard(n); break;
    case spc::MaskFamily::TruncatedHadamard: masks = spc::truncated_hadamard(n, mask_count); break;
    case spc::MaskFamily::BinaryRandom: masks = spc::binary_random(n, mask_count, seed, p); break;
    default:
      throw spc::ConfigError("codes generate: family '" + family + "' is not generable here");
  }
  if (!out.empty()) spc::save_mask_binary(out, masks.matrix);
  if (!csv.empty()) spc::save_mask_csv(csv, masks.matrix);
  if (!meta.empty()) spc::save_mask_metadata(meta, masks, seed);
  std::printf("generated %ld x %ld %s masks\n", static_cast<long>(masks.mask_count()),
              static_cast<long>(masks.pixel_count()), spc::to_string(masks.family));
  return 0;
}

void print_theory_table(long n, double sigma, const std::vector<double>& photons,
                        const std::string& x_file) {
  Eigen::VectorXd x;
  if (x_file.empty())
    x = Eigen::VectorXd::Ones(n);
  else {
    const Eigen::MatrixXd loaded = spc::load_mask_csv(x_file);
    if (loaded.rows() != 1 || loaded.cols() != n)
      throw spc::ConfigError("theory: x file must hold one row of length n");
    x = loaded.row(0).transpose();
  }
  std::printf("basis,noise,total_photons,per_pixel_variance,trace\n");
  for (double total : photons) {
    const struct {
      spc::MaskFamily basis;
      spc::NoiseModel noise;
    } cases[4] = {{spc::MaskFamily::Raster, spc::NoiseModel::gaussian(sigma)},
                  {spc::MaskFamily::Hadamard, spc::NoiseModel::gaussian(sigma)},
                  {spc::MaskFamily::Raster, spc::NoiseModel::poisson()},
                  {spc::MaskFamily::Hadamard, spc::NoiseModel::poisson()}};
    for (const auto& entry : cases) {
      const spc::TheoryPrediction prediction = spc::predict(entry.basis, entry.noise, n, total, x);
      const double per_pixel = prediction.per_pixel_variance.size() == 1
                                   ? prediction.per_pixel_variance[0]
                                   : prediction.per_pixel_variance.mean();
      std::printf("%s,%s,%.17g,%.17g,%.17g\n", spc::to_string(entry.basis),
                  spc::to_string(entry.noise.kind), total, per_pixel, prediction.trace);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coded single-pixel imaging simulator (v" + std::string(spc::kToolkitVersion) + ")"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags flags;
  auto* seed_option = app.add_option("--seed", flags.seed, "override the experiment seed");
  app.add_option("--threads", flags.threads, "worker threads for independent cells");
  app.add_option("--out-dir", flags.out_dir, "output directory");

  // codes generate
  auto* codes = app.add_subcommand("codes", "mask generation");
  auto* generate = codes->add_subcommand("generate", "generate a mask family");
  std::string family = "hadamard", out_path, csv_path, meta_path;
  long gen_n = 64, gen_m = 0;
  double gen_p = 0.5;
  generate->add_option("--family", family, "raster|impulse|hadamard|truncated-hadamard|binary-random")
      ->required();
  generate->add_option("--n", gen_n, "pixel count")->required();
  generate->add_option("--m", gen_m, "mask count (defaults to n)");
  generate->add_option("--p", gen_p, "open-pixel probability (binary-random)");
  generate->add_option("--out", out_path, "binary container output path");
  generate->add_option("--csv", csv_path, "CSV output path");
  generate->add_option("--meta", meta_path, "JSON metadata output path");

  // simulate reconstruct / classify
  auto* simulate = app.add_subcommand("simulate", "run a configured simulation sweep");
  auto* sim_reconstruct = simulate->add_subcommand("reconstruct", "measure + invert sweep");
  auto* sim_classify = simulate->add_subcommand("classify", "fixed-mask classification sweep");
  std::string reconstruct_config, classify_config;
  sim_reconstruct->add_option("--config", reconstruct_config, "experiment config file")->required();
  sim_classify->add_option("--config", classify_config, "experiment config file")->required();

  // train onn
  auto* train = app.add_subcommand("train", "scanner training");
  auto* train_onn_cmd = train->add_subcommand("onn", "joint mask + head training");
  std::string train_config;
  train_onn_cmd->add_option("--config", train_config, "experiment config file")->required();

  // theory
  auto* theory_cmd = app.add_subcommand("theory", "closed-form error predictions");
  long theory_n = 64;
  double theory_sigma = 1.0;
  std::vector<double> theory_photons{10000.0};
  std::string theory_x_file;
  theory_cmd->add_option("--n", theory_n, "pixel count");
  theory_cmd->add_option("--sigma", theory_sigma, "gaussian count noise");
  theory_cmd->add_option("--photons", theory_photons, "photon totals")->delimiter(',');
  theory_cmd->add_option("--x-file", theory_x_file, "scene CSV (one row)");

  // report
  auto* report_cmd = app.add_subcommand("report", "aggregate a results CSV");
  std::string results_path, summary_path;
  report_cmd->add_option("--results", results_path, "results.csv path")->required();
  report_cmd->add_option("--out", summary_path, "summary CSV output path");

  // mask-histogram
  auto* histogram_cmd = app.add_subcommand("mask-histogram", "entry-value histogram of a mask file");
  std::string mask_path, histogram_out;
  int bins = 81;
  double histogram_min = 0.0, histogram_max = 0.0;
  bool range_given = false;
  histogram_cmd->add_option("--file", mask_path, "mask CSV or binary container")->required();
  histogram_cmd->add_option("--bins", bins, "bin count");
  auto* min_option = histogram_cmd->add_option("--min", histogram_min, "lower edge");
  histogram_cmd->add_option("--max", histogram_max, "upper edge");
  histogram_cmd->add_option("--out", histogram_out, "histogram CSV output path");

  CLI11_PARSE(app, argc, argv);
  flags.seed_given = seed_option->count() > 0;
  range_given = min_option->count() > 0;

  try {
    if (generate->parsed())
      return generate_codes(family, gen_n, gen_m, gen_p, flags.seed, out_path, csv_path, meta_path);
    if (sim_reconstruct->parsed()) {
      run_and_report(load_config(reconstruct_config, flags, "reconstruct"), flags);
      return 0;
    }
    if (sim_classify->parsed()) {
      spc::ExperimentConfig config = load_config(classify_config, flags, "");
      if (config.task != "classify" && config.task != "onn-classify")
        throw spc::ConfigError("simulate classify: config task must be classify or onn-classify");
      run_and_report(config, flags);
      return 0;
    }
    if (train_onn_cmd->parsed()) {
      spc::ExperimentConfig config = load_config(train_config, flags, "");
      if (config.task != "onn-classify" && config.task != "onn-reconstruct")
        throw spc::ConfigError("train onn: config task must be onn-classify or onn-reconstruct");
      run_and_report(config, flags);
      return 0;
    }
    if (theory_cmd->parsed()) {
      print_theory_table(theory_n, theory_sigma, theory_photons, theory_x_file);
      return 0;
    }
    if (report_cmd->parsed()) {
      std::fputs(spc::report_results(results_path, summary_path).c_str(), stdout);
      return 0;
    }
    if (histogram_cmd->parsed()) {
      const Eigen::MatrixXd matrix = spc::load_mask_matrix(mask_path);
      const spc::Histogram histogram = range_given
                                           ? spc::mask_histogram(matrix, bins, histogram_min, histogram_max)
                                           : spc::mask_histogram(matrix, bins);
      if (!histogram_out.empty()) spc::write_histogram_csv(histogram_out, histogram);
      for (std::size_t b = 0; b < histogram.counts.size(); ++b)
        std::printf("%g,%g,%ld\n", histogram.lower_edges[b],
                    histogram.lower_edges[b] + histogram.bin_width, histogram.counts[b]);
      return 0;
    }
  } catch (const spc::ConfigError& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 2;
  } catch (const std::invalid_argument& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 2;
  } catch (const std::exception& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 1;
  }
  return 0;
}
