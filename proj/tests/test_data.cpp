#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "spc/data.hpp"
#include "test_helpers.hpp"

using namespace spc;

namespace {

std::filesystem::path test_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "spc_data_test";
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("idx image parsing") {
  const auto dir = test_dir();

  // One 28x28 image, every pixel at full scale.
  std::vector<std::uint8_t> bright(28 * 28, 255);
  save_idx_images(dir / "bright.idx", bright, 1, 28, 28);
  const IdxImages images = load_idx_images(dir / "bright.idx");
  CHECK(images.rows == 28);
  CHECK(images.pixels.rows() == 1);
  CHECK(images.pixels.minCoeff() == 1.0);
  CHECK(images.pixels.maxCoeff() == 1.0);

  save_idx_labels(dir / "labels.idx", {9, 0, 3});
  const std::vector<int> labels = load_idx_labels(dir / "labels.idx");
  CHECK(labels == std::vector<int>{9, 0, 3});

  // Wrong magic is reported as such.
  {
    std::ofstream bad(dir / "bad.idx", std::ios::binary);
    const unsigned char magic[4] = {0x00, 0x00, 0x08, 0x04};
    bad.write(reinterpret_cast<const char*>(magic), 4);
  }
  CHECK_THROWS_WITH_AS(load_idx_images(dir / "bad.idx"), doctest::Contains("unexpected magic"),
                       std::runtime_error);

  // Truncation is reported with a byte offset.
  {
    std::ofstream truncated(dir / "short.idx", std::ios::binary);
    const unsigned char header[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28};
    truncated.write(reinterpret_cast<const char*>(header), 16);
    const std::vector<char> partial(100, 'x');
    truncated.write(partial.data(), 100);
  }
  CHECK_THROWS_WITH_AS(load_idx_images(dir / "short.idx"), doctest::Contains("truncated"),
                       std::runtime_error);

  std::filesystem::remove_all(dir);
}

TEST_CASE("idx containers round-trip bit-exactly") {
  const auto dir = test_dir();
  Rng rng(3, 0);
  std::vector<std::uint8_t> pixels(5 * 28 * 28);
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
  std::vector<std::uint8_t> labels(5);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_index(10));

  save_idx_images(dir / "a.idx", pixels, 5, 28, 28);
  save_idx_labels(dir / "a-labels.idx", labels);

  // Read back, rescale to bytes, write again: the files must be identical.
  const IdxImages loaded = load_idx_images(dir / "a.idx");
  std::vector<std::uint8_t> rescaled(pixels.size());
  for (Eigen::Index i = 0; i < loaded.pixels.rows(); ++i)
    for (Eigen::Index p = 0; p < loaded.pixels.cols(); ++p)
      rescaled[static_cast<std::size_t>(i * loaded.pixels.cols() + p)] =
          static_cast<std::uint8_t>(std::lround(loaded.pixels(i, p) * 255.0));
  save_idx_images(dir / "b.idx", rescaled, 5, 28, 28);
  CHECK(read_file_bytes(dir / "a.idx") == read_file_bytes(dir / "b.idx"));

  const std::vector<int> loaded_labels = load_idx_labels(dir / "a-labels.idx");
  std::vector<std::uint8_t> relabeled(loaded_labels.begin(), loaded_labels.end());
  save_idx_labels(dir / "b-labels.idx", relabeled);
  CHECK(read_file_bytes(dir / "a-labels.idx") == read_file_bytes(dir / "b-labels.idx"));

  std::filesystem::remove_all(dir);
}

TEST_CASE("digit preprocessing pads then rescales") {
  IdxImages images;
  images.rows = 28;
  images.cols = 28;
  images.pixels = Eigen::MatrixXd::Zero(1, 28 * 28);
  images.pixels(0, 0) = 1.0;   // original top-left pixel
  images.pixels(0, 29) = 0.5;  // row 1, col 1

  const LabeledDataset set = preprocess_mnist(images, {7});
  CHECK(set.dimension() == 1024);
  CHECK(set.class_count == 10);
  CHECK(set.labels[0] == 7);

  // Padding frame lands at the dark floor, original pixels map affinely.
  CHECK(set.samples(0, 0) == doctest::Approx(0.3));                 // padded corner
  CHECK(set.samples(0, 2 * 32 + 2) == doctest::Approx(1.0));        // original (0,0)
  CHECK(set.samples(0, 3 * 32 + 3) == doctest::Approx(0.65));       // original (1,1)
  CHECK(set.samples.minCoeff() >= 0.3);
  CHECK(set.samples.maxCoeff() <= 1.0);

  IdxImages wrong;
  wrong.rows = 27;
  wrong.cols = 28;
  wrong.pixels = Eigen::MatrixXd::Zero(1, 27 * 28);
  CHECK_THROWS_AS(preprocess_mnist(wrong, {0}), std::invalid_argument);
}

TEST_CASE("random patterns are uniform and reproducible") {
  const Eigen::MatrixXd patterns = random_patterns(100000, 64, 11);
  CHECK(patterns.minCoeff() >= 0.0);
  CHECK(patterns.maxCoeff() < 1.0);
  CHECK(std::abs(patterns.mean() - 0.5) < 0.002);
  CHECK(exact_equal(random_patterns(10, 8, 11), random_patterns(10, 8, 11)));
  CHECK(!exact_equal(random_patterns(10, 8, 11), random_patterns(10, 8, 12)));
}

TEST_CASE("spectral csv loading") {
  const auto dir = test_dir();

  // 224 bands zero-padded into 256, labels preserved verbatim.
  {
    std::ofstream out(dir / "bands.csv");
    for (int row = 0; row < 3; ++row) {
      for (int b = 0; b < 224; ++b) out << (row + b % 7) << ',';
      out << (row % 2) << '\n';
    }
  }
  const LabeledDataset set = load_spectral_csv(dir / "bands.csv", 224);
  CHECK(set.dimension() == 256);
  CHECK(set.samples.rightCols(32).isZero(0.0));
  CHECK(set.labels == std::vector<int>{0, 1, 0});
  CHECK(set.samples.minCoeff() == 0.0);
  CHECK(set.samples.maxCoeff() == 1.0);

  // A constant file degenerates to all zeros instead of dividing by zero.
  {
    std::ofstream out(dir / "flat.csv");
    out << "5,5,5,5,0\n";
  }
  const LabeledDataset flat = load_spectral_csv(dir / "flat.csv", 4);
  CHECK(flat.samples.isZero(0.0));

  // Ragged and non-numeric rows carry line numbers.
  {
    std::ofstream out(dir / "ragged.csv");
    out << "1,2,3,4,0\n1,2,3,0\n";
  }
  CHECK_THROWS_WITH_AS(load_spectral_csv(dir / "ragged.csv", 4), doctest::Contains("line 2"),
                       std::runtime_error);
  {
    std::ofstream out(dir / "alpha.csv");
    out << "1,2,x,4,0\n";
  }
  CHECK_THROWS_WITH_AS(load_spectral_csv(dir / "alpha.csv", 4), doctest::Contains("line 1"),
                       std::runtime_error);

  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset splitting") {
  LabeledDataset pool;
  Rng rng(17, 0);
  pool.samples = rng.uniform_matrix(100, 4);
  pool.labels.resize(100);
  for (int i = 0; i < 100; ++i) pool.labels[static_cast<std::size_t>(i)] = i % 5;
  pool.class_count = 5;
  pool.provenance = "fixture";

  SplitSpec spec;
  spec.train_fraction = 0.8;
  spec.validation_fraction = 0.2;
  spec.seed = 5;
  const SplitResult result = split(pool, spec);
  CHECK(result.train.size() == 80);
  CHECK(result.validation.size() == 20);
  CHECK(result.test.size() == 0);
  int train_total = 0;
  for (int count : result.train_class_counts) train_total += count;
  CHECK(train_total == 80);

  // Identical seeds give identical splits; different seeds differ.
  const SplitResult again = split(pool, spec);
  CHECK(exact_equal(again.train.samples, result.train.samples));
  CHECK(again.train.labels == result.train.labels);

  std::set<std::vector<int>> orderings;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SplitSpec jitter = spec;
    jitter.seed = seed;
    orderings.insert(split(pool, jitter).train.labels);
  }
  CHECK(orderings.size() == 5);

  // Empty partitions are configuration errors.
  SplitSpec tiny;
  tiny.train_fraction = 0.99;
  tiny.validation_fraction = 0.009;
  LabeledDataset small;
  small.samples = pool.samples.topRows(10);
  small.labels.assign(pool.labels.begin(), pool.labels.begin() + 10);
  small.class_count = 5;
  CHECK_THROWS_AS(split(small, tiny), std::invalid_argument);

  SplitSpec bad;
  bad.train_fraction = 0.9;
  bad.validation_fraction = 0.2;
  CHECK_THROWS_AS(split(pool, bad), std::invalid_argument);
}

TEST_CASE("dataset validation catches inconsistencies") {
  LabeledDataset set;
  set.samples = Eigen::MatrixXd::Constant(3, 2, 0.5);
  set.labels = {0, 1};
  set.class_count = 2;
  CHECK_THROWS_AS(set.validate(), std::invalid_argument);

  set.labels = {0, 1, 5};
  CHECK_THROWS_AS(set.validate(), std::invalid_argument);

  set.labels = {0, 1, 1};
  set.samples(1, 1) = 1.5;
  CHECK_THROWS_AS(set.validate(), std::invalid_argument);

  set.samples(1, 1) = 0.5;
  CHECK_NOTHROW(set.validate());
}

TEST_SUITE_END();
