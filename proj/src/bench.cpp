#include "spc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "spc/mask_io.hpp"
#include "spc/measurement.hpp"
#include "spc/theory.hpp"
#include "spc/version.hpp"

namespace spc {

namespace {

std::vector<std::string> split_list(const std::string& text, char sep = ',') {
  std::vector<std::string> parts;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, sep)) {
    const auto begin = part.find_first_not_of(" \t");
    const auto end = part.find_last_not_of(" \t");
    if (begin != std::string::npos) parts.push_back(part.substr(begin, end - begin + 1));
  }
  return parts;
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const double parsed = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config field '" + key + "': expected a number, got '" + value + "'");
  }
}

long parse_long(const std::string& value, const std::string& key) {
  const double parsed = parse_double(value, key);
  const auto integral = static_cast<long>(parsed);
  if (static_cast<double>(integral) != parsed)
    throw ConfigError("config field '" + key + "': expected an integer, got '" + value + "'");
  return integral;
}

NoiseModel noise_from_config(const ExperimentConfig& config) {
  if (config.noise == "noiseless") return NoiseModel::noiseless();
  if (config.noise == "gaussian") return NoiseModel::gaussian(config.sigma);
  if (config.noise == "poisson") return NoiseModel::poisson();
  throw ConfigError("config field 'noise': unknown model '" + config.noise + "'");
}

RailMode rail_from_config(const ExperimentConfig& config, const MaskSet& masks) {
  if (config.rail == "auto") return default_rail_mode(masks);
  return rail_mode_from_string(config.rail);
}

MaskSet masks_for_family(const std::string& family, const ExperimentConfig& config,
                         const LabeledDataset* train) {
  const Eigen::Index m = config.m > 0 ? config.m : config.n;
  if (family == "raster") return raster(config.n);
  if (family == "impulse") return impulse(config.n);
  if (family == "hadamard") return hadamard(config.n);
  if (family == "binary-random") return binary_random(config.n, m, config.seed, config.open_probability);
  if (family == "truncated-hadamard") return truncated_hadamard(config.n, m);
  if (family == "pca") {
    if (train == nullptr) throw ConfigError("family 'pca' needs a dataset");
    return pca_masks(*train, m).masks;
  }
  throw ConfigError("unknown mask family '" + family + "'");
}

Eigen::VectorXd scene_from_config(const ExperimentConfig& config) {
  if (config.scene == "ones") return Eigen::VectorXd::Ones(config.n);
  if (config.scene == "random") {
    Rng rng(config.seed, 0xDECAF);
    Eigen::VectorXd x(config.n);
    for (Eigen::Index i = 0; i < config.n; ++i) x[i] = rng.uniform();
    return x;
  }
  // Anything else is a CSV file holding one row.
  const Eigen::MatrixXd loaded = load_mask_csv(config.scene);
  if (loaded.rows() != 1 || loaded.cols() != config.n)
    throw ConfigError("scene file must hold exactly one row of length n");
  return loaded.row(0).transpose();
}

void append_row(std::string& csv, const ResultRow& row) {
  char line[320];
  std::snprintf(line, sizeof line, "%s,%s,%s,%.17g,%d,%s,%.17g\n", row.experiment.c_str(),
                row.family.c_str(), row.noise.c_str(), row.photons, row.trial, row.metric.c_str(),
                row.value);
  csv += line;
}

// Runs independent cells on a small worker pool. The first exception stops
// the scheduling of further cells and is rethrown after the pool drains, so
// callers can flush whatever completed.
void run_cells_parallel(int cell_count, int threads, const std::function<void(int)>& work) {
  if (threads <= 1 || cell_count <= 1) {
    for (int cell = 0; cell < cell_count; ++cell) work(cell);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const int workers = std::min(threads, cell_count);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (int cell = next.fetch_add(1); cell < cell_count && !stop.load();
           cell = next.fetch_add(1)) {
        try {
          work(cell);
        } catch (...) {
          const std::scoped_lock lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          stop.store(true);
        }
      }
    });
  for (auto& worker : pool) worker.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --- datasets -------------------------------------------------------------

// 7x5 glyph templates for the synthetic digit fixture.
constexpr const char* kGlyphs[10] = {
    "#####"
    "#...#"
    "#...#"
    "#...#"
    "#...#"
    "#...#"
    "#####",
    "..#.."
    ".##.."
    "..#.."
    "..#.."
    "..#.."
    "..#.."
    ".###.",
    "#####"
    "....#"
    "....#"
    "#####"
    "#...."
    "#...."
    "#####",
    "#####"
    "....#"
    "....#"
    ".####"
    "....#"
    "....#"
    "#####",
    "#...#"
    "#...#"
    "#...#"
    "#####"
    "....#"
    "....#"
    "....#",
    "#####"
    "#...."
    "#...."
    "#####"
    "....#"
    "....#"
    "#####",
    "#####"
    "#...."
    "#...."
    "#####"
    "#...#"
    "#...#"
    "#####",
    "#####"
    "....#"
    "...#."
    "..#.."
    "..#.."
    ".#..."
    ".#...",
    "#####"
    "#...#"
    "#...#"
    "#####"
    "#...#"
    "#...#"
    "#####",
    "#####"
    "#...#"
    "#...#"
    "#####"
    "....#"
    "....#"
    "#####"};

Eigen::MatrixXd render_glyph(int digit, Rng& rng) {
  Eigen::MatrixXd image = Eigen::MatrixXd::Zero(28, 28);
  const char* glyph = kGlyphs[digit];
  const int scale = 3;
  const int height = 7 * scale, width = 5 * scale;
  const int row0 = 3 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(28 - height - 5)));
  const int col0 = 5 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(28 - width - 9)));
  const double intensity = 0.7 + 0.3 * rng.uniform();
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 5; ++c)
      if (glyph[r * 5 + c] == '#')
        for (int dr = 0; dr < scale; ++dr)
          for (int dc = 0; dc < scale; ++dc) image(row0 + r * scale + dr, col0 + c * scale + dc) = intensity;

  // Box blur softens the strokes so nearest-glyph matching is nontrivial.
  Eigen::MatrixXd blurred = Eigen::MatrixXd::Zero(28, 28);
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c) {
      double sum = 0.0;
      int taps = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < 28 && cc >= 0 && cc < 28) {
            sum += image(rr, cc);
            ++taps;
          }
        }
      blurred(r, c) = sum / taps;
    }
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c)
      blurred(r, c) = std::clamp(blurred(r, c) + 0.05 * (rng.uniform() - 0.5), 0.0, 1.0);
  return blurred;
}

}  // namespace

LabeledDataset synthetic_digits(Eigen::Index count, std::uint64_t seed) {
  IdxImages images;
  images.rows = 28;
  images.cols = 28;
  images.pixels.resize(count, 28 * 28);
  std::vector<int> labels(static_cast<std::size_t>(count));
  Rng rng(seed, 0xD161);
  for (Eigen::Index i = 0; i < count; ++i) {
    const int digit = static_cast<int>(rng.uniform_index(10));
    labels[static_cast<std::size_t>(i)] = digit;
    const Eigen::MatrixXd glyph = render_glyph(digit, rng);
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c) images.pixels(i, r * 28 + c) = glyph(r, c);
  }
  LabeledDataset set = preprocess_mnist(images, labels);
  set.provenance = "synthetic-digits";
  return set;
}

LabeledDataset load_mnist_dataset(const std::filesystem::path& dir) {
  const auto train_images = dir / "train-images-idx3-ubyte";
  const auto train_labels = dir / "train-labels-idx1-ubyte";
  if (!std::filesystem::exists(train_images) || !std::filesystem::exists(train_labels))
    throw ConfigError("mnist idx files not found under " + dir.string() +
                      " (want train-images-idx3-ubyte / train-labels-idx1-ubyte)");
  IdxImages images = load_idx_images(train_images);
  std::vector<int> labels = load_idx_labels(train_labels);

  const auto test_images = dir / "t10k-images-idx3-ubyte";
  const auto test_labels = dir / "t10k-labels-idx1-ubyte";
  if (std::filesystem::exists(test_images) && std::filesystem::exists(test_labels)) {
    const IdxImages extra = load_idx_images(test_images);
    const std::vector<int> extra_labels = load_idx_labels(test_labels);
    const Eigen::Index base = images.pixels.rows();
    images.pixels.conservativeResize(base + extra.pixels.rows(), Eigen::NoChange);
    images.pixels.bottomRows(extra.pixels.rows()) = extra.pixels;
    labels.insert(labels.end(), extra_labels.begin(), extra_labels.end());
  }
  return preprocess_mnist(images, labels);
}

TrainConfig ExperimentConfig::train_config(std::uint64_t run_seed) const {
  TrainConfig train;
  train.learning_rate = learning_rate;
  train.batch_size = batch_size;
  train.max_epochs = epochs;
  train.dropout_rate = dropout;
  train.seed = run_seed;
  train.patience = patience;
  if (optimizer == "adam")
    train.optimizer = OptimizerKind::Adam;
  else if (optimizer == "sgd")
    train.optimizer = OptimizerKind::Sgd;
  else
    throw ConfigError("config field 'optimizer': unknown value '" + optimizer + "'");
  return train;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  config.raw_text = text;
  std::stringstream stream(text);
  std::string line;
  int line_number = 0;
  while (std::getline(stream, line)) {
    ++line_number;
    if (const auto comment = line.find('#'); comment != std::string::npos) line.erase(comment);
    const auto equals = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (equals == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_number) + ": expected 'key = value'");
    auto trim = [](std::string s) {
      const auto begin = s.find_first_not_of(" \t\r");
      const auto end = s.find_last_not_of(" \t\r");
      return begin == std::string::npos ? std::string() : s.substr(begin, end - begin + 1);
    };
    const std::string key = trim(line.substr(0, equals));
    const std::string value = trim(line.substr(equals + 1));
    if (value.empty()) throw ConfigError("config field '" + key + "': empty value");

    if (key == "task") config.task = value;
    else if (key == "families") config.families = split_list(value);
    else if (key == "noise") config.noise = value;
    else if (key == "sigma") config.sigma = parse_double(value, key);
    else if (key == "rail") config.rail = value;
    else if (key == "budgets") {
      config.budgets.clear();
      for (const std::string& item : split_list(value)) config.budgets.push_back(parse_double(item, key));
    }
    else if (key == "trials") config.trials = static_cast<int>(parse_long(value, key));
    else if (key == "seed") config.seed = static_cast<std::uint64_t>(parse_long(value, key));
    else if (key == "seeds") config.seeds = static_cast<int>(parse_long(value, key));
    else if (key == "n") config.n = parse_long(value, key);
    else if (key == "m") config.m = parse_long(value, key);
    else if (key == "p") config.open_probability = parse_double(value, key);
    else if (key == "scene") config.scene = value;
    else if (key == "dataset") config.dataset = value;
    else if (key == "data_dir") config.data_dir = value;
    else if (key == "train_size") config.train_size = parse_long(value, key);
    else if (key == "validation_size") config.validation_size = parse_long(value, key);
    else if (key == "test_size") config.test_size = parse_long(value, key);
    else if (key == "mask_init") config.mask_init = value;
    else if (key == "learning_rate") config.learning_rate = parse_double(value, key);
    else if (key == "batch_size") config.batch_size = static_cast<int>(parse_long(value, key));
    else if (key == "epochs") config.epochs = static_cast<int>(parse_long(value, key));
    else if (key == "dropout") config.dropout = parse_double(value, key);
    else if (key == "patience") config.patience = static_cast<int>(parse_long(value, key));
    else if (key == "optimizer") config.optimizer = value;
    else if (key == "patterns") config.patterns = static_cast<int>(parse_long(value, key));
    else if (key == "rounds") config.rounds = static_cast<int>(parse_long(value, key));
    else if (key == "epochs_per_round") config.epochs_per_round = static_cast<int>(parse_long(value, key));
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return config;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

namespace {

std::string output_header(const ExperimentConfig& config) {
  char header[128];
  std::snprintf(header, sizeof header, "# config_hash=%016llx version=%s\n",
                static_cast<unsigned long long>(fnv1a_hash(config.raw_text)),
                std::string(kToolkitVersion).c_str());
  return header;
}

LabeledDataset load_config_dataset(const ExperimentConfig& config) {
  if (config.dataset.empty()) throw ConfigError("config field 'dataset' is required for this task");
  if (config.dataset == "mnist") {
    const std::filesystem::path dir =
        config.data_dir.empty() ? data_directory() : std::filesystem::path(config.data_dir);
    return load_mnist_dataset(dir);
  }
  if (config.dataset.rfind("synthetic-digits", 0) == 0) {
    Eigen::Index count = 8000;
    if (const auto colon = config.dataset.find(':'); colon != std::string::npos)
      count = parse_long(config.dataset.substr(colon + 1), "dataset");
    return synthetic_digits(count, config.seed ^ 0x5D161);
  }
  if (config.dataset.rfind("spectral:", 0) == 0) {
    const std::vector<std::string> parts = split_list(config.dataset, ':');
    if (parts.size() < 3) throw ConfigError("dataset 'spectral:<csv>:<bands>[:header]'");
    const bool header = parts.size() > 3 && parts[3] == "header";
    return load_spectral_csv(parts[1], parse_long(parts[2], "dataset"), header);
  }
  throw ConfigError("config field 'dataset': unknown source '" + config.dataset + "'");
}

struct ClassifySplits {
  LabeledDataset train, validation, test;
};

// Test rows are fixed by the master seed; train/validation reshuffle per rep.
ClassifySplits classify_splits(const LabeledDataset& pool, const ExperimentConfig& config, int rep) {
  const Eigen::Index n = pool.size();
  Eigen::Index test_size = config.test_size > 0 ? config.test_size : n * 15 / 100;
  Eigen::Index train_size = config.train_size > 0 ? config.train_size : n * 70 / 100;
  Eigen::Index val_size = config.validation_size > 0 ? config.validation_size : n - test_size - train_size;
  if (train_size + val_size + test_size > n)
    throw ConfigError("dataset too small for requested train/validation/test sizes");

  SplitSpec outer;
  outer.train_fraction = static_cast<double>(n - test_size) / static_cast<double>(n);
  outer.validation_fraction = 0.0;
  outer.seed = config.seed;
  SplitResult outer_split = split(pool, outer);
  // outer.train = working pool, outer.test = held-out test rows
  LabeledDataset test = std::move(outer_split.test);
  if (test.size() > test_size) {
    test.samples.conservativeResize(test_size, Eigen::NoChange);
    test.labels.resize(static_cast<std::size_t>(test_size));
  }

  SplitSpec inner;
  inner.train_fraction =
      static_cast<double>(train_size) / static_cast<double>(outer_split.train.size());
  inner.validation_fraction =
      static_cast<double>(val_size) / static_cast<double>(outer_split.train.size());
  inner.seed = config.seed + 1000 + static_cast<std::uint64_t>(rep);
  SplitResult inner_split = split(outer_split.train, inner);

  return {std::move(inner_split.train), std::move(inner_split.validation), std::move(test)};
}

void run_reconstruct(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                     int threads, std::string& csv) {
  if (config.families.empty()) throw ConfigError("config field 'families' must not be empty");
  if (config.budgets.empty()) throw ConfigError("config field 'budgets' must not be empty");
  if (config.trials < 1) throw ConfigError("config field 'trials' must be positive");
  const NoiseModel noise = noise_from_config(config);
  const Eigen::VectorXd x = scene_from_config(config);

  struct Cell {
    std::size_t family;
    std::size_t budget;
  };
  std::vector<Cell> cells;
  for (std::size_t f = 0; f < config.families.size(); ++f)
    for (std::size_t b = 0; b < config.budgets.size(); ++b) cells.push_back({f, b});

  std::vector<std::vector<double>> cell_mse(cells.size());
  std::vector<char> cell_done(cells.size(), 0);
  std::vector<MaskSet> mask_sets;
  std::vector<RailMode> rails;
  for (const std::string& family : config.families) {
    mask_sets.push_back(masks_for_family(family, config, nullptr));
    rails.push_back(rail_from_config(config, mask_sets.back()));
  }

  // On a mid-run failure the rows of every completed cell are still flushed.
  const auto append_completed = [&]() {
    for (std::size_t index = 0; index < cells.size(); ++index) {
      if (!cell_done[index]) continue;
      const Cell cell = cells[index];
      for (int t = 0; t < config.trials; ++t)
        append_row(csv, {config.task, config.families[cell.family], config.noise,
                         config.budgets[cell.budget], t, "mse",
                         cell_mse[index][static_cast<std::size_t>(t)]});
    }
  };

  try {
    run_cells_parallel(static_cast<int>(cells.size()), threads, [&](int index) {
      const Cell cell = cells[static_cast<std::size_t>(index)];
      const MaskSet& masks = mask_sets[cell.family];
      const PhotonBudget budget = PhotonBudget::total_photons(config.budgets[cell.budget]);
      std::vector<double>& mse = cell_mse[static_cast<std::size_t>(index)];
      mse.resize(static_cast<std::size_t>(config.trials));
      const auto n = static_cast<double>(masks.pixel_count());
      for (int t = 0; t < config.trials; ++t) {
        const std::uint64_t stream =
            (cell.family * config.budgets.size() + cell.budget) *
                static_cast<std::uint64_t>(config.trials) +
            static_cast<std::uint64_t>(t);
        Rng rng(config.seed, stream);
        const Measurement measurement = measure(x, masks, budget, noise, rails[cell.family], rng);
        const Eigen::VectorXd estimate = reconstruct_fullrank(measurement, masks);
        mse[static_cast<std::size_t>(t)] = (estimate - x).squaredNorm() / n;
      }
      cell_done[static_cast<std::size_t>(index)] = 1;
    });
  } catch (...) {
    append_completed();
    throw;
  }
  append_completed();

  for (std::size_t f = 0; f < config.families.size(); ++f)
    save_mask_csv(out_dir / ("masks_" + config.families[f] + ".csv"), mask_sets[f].matrix,
                  output_header(config));
}

void run_classify(const ExperimentConfig& config, const std::filesystem::path& out_dir, int threads,
                  std::string& csv) {
  if (config.families.empty()) throw ConfigError("config field 'families' must not be empty");
  if (config.budgets.empty()) throw ConfigError("config field 'budgets' must not be empty");
  const NoiseModel noise = noise_from_config(config);
  const LabeledDataset pool = load_config_dataset(config);
  if (pool.dimension() != config.n)
    throw ConfigError("config field 'n' (" + std::to_string(config.n) + ") != dataset dimension " +
                      std::to_string(pool.dimension()));

  struct Cell {
    std::size_t family;
    std::size_t budget;
    int rep;
  };
  std::vector<Cell> cells;
  for (std::size_t f = 0; f < config.families.size(); ++f)
    for (std::size_t b = 0; b < config.budgets.size(); ++b)
      for (int rep = 0; rep < config.seeds; ++rep) cells.push_back({f, b, rep});
  std::vector<double> accuracy(cells.size());
  std::vector<char> cell_done(cells.size(), 0);

  const auto append_completed = [&]() {
    for (std::size_t index = 0; index < cells.size(); ++index) {
      if (!cell_done[index]) continue;
      const Cell cell = cells[index];
      append_row(csv, {config.task, config.families[cell.family], config.noise,
                       config.budgets[cell.budget], cell.rep, "accuracy", accuracy[index]});
    }
  };

  const auto run_cell = [&](int index) {
    const Cell cell = cells[static_cast<std::size_t>(index)];
    const std::string& family = config.families[cell.family];
    const ClassifySplits splits = classify_splits(pool, config, cell.rep);
    const std::uint64_t run_seed = config.seed + 7919 * static_cast<std::uint64_t>(cell.rep) + 31 * cell.budget;
    const PhotonBudget budget = PhotonBudget::total_photons(config.budgets[cell.budget]);

    ClassifierRun run;
    if (family == "onn") {
      const Eigen::Index m = config.m > 0 ? config.m : config.n;
      const Eigen::MatrixXd init = initial_masks(mask_init_from_string(config.mask_init), m, config.n,
                                                 run_seed, &splits.train);
      SensingNet net = SensingNet::classifier(init, pool.class_count, noise, budget,
                                              RailMode::DualOneSensor, run_seed);
      run = train_onn(std::move(net), splits.train, splits.validation, config.train_config(run_seed));
    } else {
      const MaskSet masks = masks_for_family(family, config, &splits.train);
      const RailMode rail = rail_from_config(config, masks);
      SensingNet net =
          SensingNet::classifier(masks.matrix, pool.class_count, noise, budget, rail, run_seed);
      net.exposure_scale = masks.exposure_scale;
      run = train_classifier(std::move(net), splits.train, splits.validation,
                             config.train_config(run_seed));
    }
    accuracy[static_cast<std::size_t>(index)] =
        evaluate_accuracy(run.net, splits.test, {run_seed, 0xE7A1});

    if (cell.rep == 0 && cell.budget == 0) {
      const TrainConfig train = config.train_config(run_seed);
      nlohmann::json sidecar;
      sidecar["family"] = family;
      sidecar["photons"] = config.budgets[cell.budget];
      sidecar["best_validation_accuracy"] = run.best_validation_accuracy;
      sidecar["best_epoch"] = run.best_epoch;
      sidecar["config_hash"] = fnv1a_hash(config.raw_text);
      sidecar["version"] = std::string(kToolkitVersion);
      sidecar["train_config"] = {{"learning_rate", train.learning_rate},
                                 {"batch_size", train.batch_size},
                                 {"max_epochs", train.max_epochs},
                                 {"dropout_rate", train.dropout_rate},
                                 {"seed", train.seed},
                                 {"optimizer", config.optimizer},
                                 {"patience", train.patience}};
      std::vector<double> curve;
      for (const EpochStats& stats : run.curve) curve.push_back(stats.validation_accuracy);
      sidecar["validation_curve"] = curve;
      save_checkpoint(out_dir / ("checkpoint_" + family + ".spcn"), run.net, sidecar);
    }
    cell_done[static_cast<std::size_t>(index)] = 1;
  };

  try {
    run_cells_parallel(static_cast<int>(cells.size()), threads, run_cell);
  } catch (...) {
    append_completed();
    throw;
  }
  append_completed();
}

void run_onn_reconstruct(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                         std::string& csv) {
  ReconstructorProtocol protocol;
  protocol.pixel_count = config.n;
  protocol.patterns_per_round = config.patterns;
  protocol.rounds = config.rounds;
  protocol.epochs_per_round = config.epochs_per_round;
  protocol.total_photons = config.budgets.empty() ? 100.0 : config.budgets.front();
  protocol.noise = noise_from_config(config);
  protocol.init = mask_init_from_string(config.mask_init);

  const ReconstructorRun run = train_reconstructor(protocol, config.train_config(config.seed));
  for (std::size_t epoch = 0; epoch < run.loss_trace.size(); ++epoch)
    append_row(csv, {config.task, "onn", config.noise, protocol.total_photons,
                     static_cast<int>(epoch), "loss", run.loss_trace[epoch]});
  append_row(csv, {config.task, "onn", config.noise, protocol.total_photons, 0, "offdiag_ratio",
                   offdiagonal_to_diagonal_ratio(run.masks)});

  const std::string header = output_header(config);
  save_mask_csv(out_dir / "masks_final.csv", run.masks, header);
  write_histogram_csv(out_dir / "mask_value_histogram.csv", mask_histogram(run.masks, 81), header);
  for (std::size_t r = 0; r < run.snapshots.size(); ++r)
    save_mask_csv(out_dir / ("masks_round_" + std::to_string(r) + ".csv"), run.snapshots[r], header);
}

void run_theory(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                std::string& header) {
  if (config.budgets.empty()) throw ConfigError("config field 'budgets' must not be empty");
  const Eigen::VectorXd x = scene_from_config(config);
  std::string table = header;
  table += "basis,noise,total_photons,per_pixel_variance,trace\n";
  char line[256];
  for (double photons : config.budgets) {
    const struct {
      MaskFamily basis;
      NoiseModel noise;
    } cases[4] = {{MaskFamily::Raster, NoiseModel::gaussian(config.sigma)},
                  {MaskFamily::Hadamard, NoiseModel::gaussian(config.sigma)},
                  {MaskFamily::Raster, NoiseModel::poisson()},
                  {MaskFamily::Hadamard, NoiseModel::poisson()}};
    for (const auto& entry : cases) {
      const TheoryPrediction prediction = predict(entry.basis, entry.noise, config.n, photons, x);
      const double per_pixel = prediction.per_pixel_variance.size() == 1
                                   ? prediction.per_pixel_variance[0]
                                   : prediction.per_pixel_variance.mean();
      std::snprintf(line, sizeof line, "%s,%s,%.17g,%.17g,%.17g\n", to_string(entry.basis),
                    to_string(entry.noise.kind), photons, per_pixel, prediction.trace);
      table += line;
    }
  }
  std::ofstream out(out_dir / "theory.csv");
  if (!out) throw std::runtime_error("cannot open theory.csv for writing");
  out << table;
}

}  // namespace

void run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                    int threads) {
  std::filesystem::create_directories(out_dir);
  const std::string header = output_header(config);
  std::string csv = header;
  csv += "experiment,family,noise,photons,trial,metric,value\n";

  const auto write_results = [&]() {
    std::ofstream out(out_dir / "results.csv");
    if (!out) throw std::runtime_error("cannot open results.csv for writing");
    out << csv;
  };

  try {
    if (config.task == "reconstruct") {
      run_reconstruct(config, out_dir, threads, csv);
    } else if (config.task == "classify") {
      run_classify(config, out_dir, threads, csv);
    } else if (config.task == "onn-classify") {
      ExperimentConfig forced = config;
      forced.families = {"onn"};
      run_classify(forced, out_dir, threads, csv);
    } else if (config.task == "onn-reconstruct") {
      run_onn_reconstruct(config, out_dir, csv);
    } else if (config.task == "theory") {
      std::string theory_header = header;
      run_theory(config, out_dir, theory_header);
      return;  // theory writes its own table; no long-format rows
    } else if (config.task.empty()) {
      throw ConfigError("config field 'task' is required");
    } else {
      throw ConfigError("config field 'task': unknown task '" + config.task + "'");
    }
  } catch (const ConfigError&) {
    throw;  // schema problems abort before producing outputs
  } catch (const std::exception& error) {
    // Mid-run failure: flush whatever completed, marked as partial.
    csv += std::string("# FAILED: ") + error.what() + "\n";
    write_results();
    throw;
  }

  write_results();

  // Plot-ready summary next to the raw rows.
  report_results(out_dir / "results.csv", out_dir / "summary.csv");
}

std::vector<ResultRow> read_result_rows(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path.string());
  std::vector<ResultRow> rows;
  std::string line;
  int line_number = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "experiment,family,noise,photons,trial,metric,value")
        throw std::runtime_error("results parse error: " + csv_path.string() + ": line " +
                                 std::to_string(line_number) + ": unexpected header '" + line + "'");
      saw_header = true;
      continue;
    }
    const std::vector<std::string> cells = split_list(line);
    if (cells.size() != 7)
      throw std::runtime_error("results parse error: " + csv_path.string() + ": line " +
                               std::to_string(line_number) + ": expected 7 cells, got " +
                               std::to_string(cells.size()));
    ResultRow row;
    row.experiment = cells[0];
    row.family = cells[1];
    row.noise = cells[2];
    try {
      row.photons = std::stod(cells[3]);
      row.trial = std::stoi(cells[4]);
      row.metric = cells[5];
      row.value = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw std::runtime_error("results parse error: " + csv_path.string() + ": line " +
                               std::to_string(line_number) + ": bad numeric cell");
    }
    if (row.metric != "mse" && row.metric != "accuracy" && row.metric != "loss" &&
        row.metric != "offdiag_ratio")
      throw std::runtime_error("results parse error: " + csv_path.string() + ": line " +
                               std::to_string(line_number) + ": unknown metric '" + row.metric + "'");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::map<AggregateKey, AggregateCell> aggregate_rows(const std::vector<ResultRow>& rows) {
  std::map<AggregateKey, std::vector<double>> grouped;
  for (const ResultRow& row : rows)
    grouped[{row.experiment, row.family, row.noise, row.photons, row.metric}].push_back(row.value);

  std::map<AggregateKey, AggregateCell> cells;
  for (const auto& [key, values] : grouped) {
    AggregateCell cell;
    cell.count = static_cast<int>(values.size());
    for (double v : values) cell.mean += v;
    cell.mean /= static_cast<double>(cell.count);
    if (cell.count > 1) {
      double variance = 0.0;
      for (double v : values) variance += (v - cell.mean) * (v - cell.mean);
      variance /= static_cast<double>(cell.count - 1);
      cell.stderr_of_mean = std::sqrt(variance / static_cast<double>(cell.count));
    }
    cells.emplace(key, cell);
  }
  return cells;
}

std::string report_results(const std::filesystem::path& csv_path,
                           const std::filesystem::path& summary_out) {
  const std::vector<ResultRow> rows = read_result_rows(csv_path);
  const auto cells = aggregate_rows(rows);

  // Carry the provenance stamp of the input into the summary.
  std::string summary;
  {
    std::ifstream in(csv_path);
    std::string first;
    if (std::getline(in, first) && !first.empty() && first[0] == '#') summary = first + "\n";
  }

  std::string report;
  char line[384];
  summary += "experiment,family,noise,photons,metric,count,mean,stderr\n";
  for (const auto& [key, cell] : cells) {
    const auto& [experiment, family, noise, photons, metric] = key;
    std::snprintf(line, sizeof line, "%s,%s,%s,%.17g,%s,%d,%.17g,%.17g\n", experiment.c_str(),
                  family.c_str(), noise.c_str(), photons, metric.c_str(), cell.count, cell.mean,
                  cell.stderr_of_mean);
    summary += line;
    if (cell.count == 1)
      std::snprintf(line, sizeof line, "%s/%s %s photons=%.3g %s: %.6g (n=1)\n", experiment.c_str(),
                    family.c_str(), noise.c_str(), photons, metric.c_str(), cell.mean);
    else
      std::snprintf(line, sizeof line, "%s/%s %s photons=%.3g %s: %.6g +- %.3g (n=%d)\n",
                    experiment.c_str(), family.c_str(), noise.c_str(), photons, metric.c_str(),
                    cell.mean, cell.stderr_of_mean, cell.count);
    report += line;
  }

  // Comparison verdicts between families sharing a (noise, photons, metric) cell.
  std::map<std::tuple<std::string, std::string, double, std::string>,
           std::vector<std::pair<std::string, double>>>
      by_cell;
  for (const auto& [key, cell] : cells) {
    const auto& [experiment, family, noise, photons, metric] = key;
    by_cell[{experiment, noise, photons, metric}].push_back({family, cell.mean});
  }
  for (auto& [key, families] : by_cell) {
    const auto& [experiment, noise, photons, metric] = key;
    if (metric == "mse") {
      double raster_mean = -1.0, hadamard_mean = -1.0;
      for (const auto& [family, mean] : families) {
        if (family == "raster") raster_mean = mean;
        if (family == "hadamard") hadamard_mean = mean;
      }
      if (raster_mean > 0.0 && hadamard_mean > 0.0) {
        std::snprintf(line, sizeof line, "verdict: %s photons=%.3g mse ratio hadamard/raster = %.4f\n",
                      noise.c_str(), photons, hadamard_mean / raster_mean);
        report += line;
      }
    }
    if (metric == "accuracy" && families.size() > 1) {
      std::sort(families.begin(), families.end(),
                [](const auto& a, const auto& b) { return a.second > b.second; });
      std::string ordering;
      for (std::size_t i = 0; i < families.size(); ++i) {
        if (i) ordering += " >= ";
        ordering += families[i].first;
      }
      std::snprintf(line, sizeof line, "verdict: %s photons=%.3g accuracy ordering: %s\n",
                    noise.c_str(), photons, ordering.c_str());
      report += line;
    }
  }

  if (!summary_out.empty()) {
    std::ofstream out(summary_out);
    if (!out) throw std::runtime_error("cannot open " + summary_out.string() + " for writing");
    out << summary;
  }
  return report;
}

Histogram mask_histogram(const Eigen::MatrixXd& matrix, int bins, double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("mask_histogram: need at least one bin");
  if (!(hi > lo)) throw std::invalid_argument("mask_histogram: upper edge must exceed lower edge");
  Histogram histogram;
  histogram.bin_width = (hi - lo) / bins;
  histogram.lower_edges.resize(static_cast<std::size_t>(bins));
  histogram.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int b = 0; b < bins; ++b)
    histogram.lower_edges[static_cast<std::size_t>(b)] = lo + b * histogram.bin_width;
  for (Eigen::Index r = 0; r < matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      const double value = matrix(r, c);
      if (value < lo || value > hi) continue;
      auto bin = static_cast<int>((value - lo) / histogram.bin_width);
      if (bin == bins) bin = bins - 1;  // right edge of the last bin is inclusive
      ++histogram.counts[static_cast<std::size_t>(bin)];
    }
  return histogram;
}

Histogram mask_histogram(const Eigen::MatrixXd& matrix, int bins) {
  double lo = matrix.minCoeff();
  double hi = matrix.maxCoeff();
  if (lo == hi) hi = lo + 1.0;
  return mask_histogram(matrix, bins, lo, hi);
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& histogram,
                         const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (!header_comment.empty()) out << header_comment;
  out << "bin_lower,bin_upper,count\n";
  char line[128];
  for (std::size_t b = 0; b < histogram.counts.size(); ++b) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%ld\n", histogram.lower_edges[b],
                  histogram.lower_edges[b] + histogram.bin_width, histogram.counts[b]);
    out << line;
  }
}

}  // namespace spc
