#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "spc/mask_io.hpp"
#include "spc/masks.hpp"
#include "test_helpers.hpp"

using namespace spc;

namespace {

Eigen::MatrixXd random_signed_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed, 0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = 2.0 * rng.uniform() - 1.0;
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("masks");

TEST_CASE("raster is the identity") {
  const MaskSet masks = raster(2);
  CHECK(exact_equal(masks.matrix, Eigen::MatrixXd::Identity(2, 2)));
  CHECK(masks.family == MaskFamily::Raster);
  CHECK(masks.exposure_scale == 1.0);

  const MaskSet wide = raster(4);
  for (Eigen::Index k = 0; k < 4; ++k) CHECK(wide.matrix.row(k).sum() == 1.0);

  const DualRailPair pair = dual_rail_split(raster(3).matrix);
  CHECK(pair.negative.isZero(0.0));

  CHECK_THROWS_AS(raster(0), std::invalid_argument);
}

TEST_CASE("impulse is identity with scaled exposure") {
  const MaskSet fast = impulse(4);
  CHECK(exact_equal(fast.matrix, raster(4).matrix));
  CHECK(fast.exposure_scale == 4.0);
  CHECK(exact_equal(impulse(1).matrix, raster(1).matrix));
  CHECK(impulse(1).exposure_scale == 1.0);
}

TEST_CASE("hadamard base cases") {
  CHECK(exact_equal(hadamard(1).matrix, Eigen::MatrixXd::Ones(1, 1)));

  Eigen::MatrixXd h2(2, 2);
  h2 << 1, 1, 1, -1;
  CHECK(exact_equal(hadamard(2).matrix, h2));

  CHECK_THROWS_AS(hadamard(3), std::invalid_argument);
  CHECK_THROWS_AS(hadamard(0), std::invalid_argument);
}

TEST_CASE("hadamard orthogonality and sequency ordering") {
  for (Eigen::Index n : {1, 2, 4, 8, 16, 64, 256}) {
    const Eigen::MatrixXi h = sequency_hadamard(n);
    CHECK(exact_equal(h * h.transpose(),
                      (static_cast<int>(n) * Eigen::MatrixXi::Identity(n, n)).eval()));
    for (Eigen::Index k = 0; k < n; ++k) CHECK(sign_change_count(h.row(k)) == k);
  }
}

TEST_CASE("truncated hadamard keeps the low-sequency rows") {
  CHECK(exact_equal(truncated_hadamard(4, 4).matrix, hadamard(4).matrix));

  const MaskSet two = truncated_hadamard(4, 2);
  Eigen::MatrixXd expected(2, 4);
  expected << 1, 1, 1, 1, 1, 1, -1, -1;
  CHECK(exact_equal(two.matrix, expected));

  const MaskSet one = truncated_hadamard(4, 1);
  CHECK(exact_equal(one.matrix, Eigen::MatrixXd::Ones(1, 4)));

  CHECK_THROWS_AS(truncated_hadamard(4, 5), std::invalid_argument);
  CHECK_THROWS_AS(truncated_hadamard(4, 0), std::invalid_argument);
}

TEST_CASE("binary random masks") {
  const MaskSet a = binary_random(16, 8, 99);
  const MaskSet b = binary_random(16, 8, 99);
  CHECK(exact_equal(a.matrix, b.matrix));
  CHECK(!exact_equal(a.matrix, binary_random(16, 8, 100).matrix));

  for (Eigen::Index r = 0; r < a.matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < a.matrix.cols(); ++c)
      CHECK((a.matrix(r, c) == 0.0 || a.matrix(r, c) == 1.0));

  const MaskSet big = binary_random(256, 256, 7);
  const double fraction = big.matrix.sum() / static_cast<double>(big.matrix.size());
  CHECK(fraction > 0.47);
  CHECK(fraction < 0.53);

  // Low open probability forces the all-zero-row resampling path.
  const MaskSet sparse = binary_random(3, 64, 5, 0.05);
  for (Eigen::Index r = 0; r < sparse.matrix.rows(); ++r)
    CHECK(sparse.matrix.row(r).maxCoeff() == 1.0);

  CHECK_THROWS_AS(binary_random(4, 4, 0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(binary_random(4, 4, 0, 1.0), std::invalid_argument);
}

TEST_CASE("pca masks: variance along one axis") {
  LabeledDataset data;
  data.samples.resize(4, 3);
  data.samples << 1.0, 0, 0, 0.2, 0, 0, 0.8, 0, 0, 0.4, 0, 0;
  data.labels = {0, 0, 0, 0};
  data.class_count = 1;

  const PcaMasks result = pca_masks(data, 1);
  CHECK(std::abs(result.masks.matrix(0, 0)) == doctest::Approx(1.0));
  CHECK(result.masks.matrix(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(result.masks.matrix(0, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pca masks: exact diagonal covariance aligns with the heavy axis") {
  // Centered points (+-0.5, 0) and (0, +-0.25): the sample covariance is
  // exactly diagonal and heavier along the first axis.
  LabeledDataset data;
  data.samples.resize(4, 2);
  data.samples << 1.0, 0.5, 0.0, 0.5, 0.5, 0.75, 0.5, 0.25;
  data.labels = {0, 0, 0, 0};
  data.class_count = 1;

  const PcaMasks result = pca_masks(data, 2);
  CHECK(std::abs(result.masks.matrix(0, 0)) > 0.999);
  CHECK(result.eigenvalues[0] > result.eigenvalues[1]);
}

TEST_CASE("pca masks: components orthonormal before row rescaling") {
  Rng rng(42, 0);
  LabeledDataset data;
  data.samples = rng.uniform_matrix(80, 12);
  data.labels.assign(80, 0);
  data.class_count = 1;

  const PcaMasks result = pca_masks(data, 5);
  Eigen::MatrixXd components = result.masks.matrix;
  for (Eigen::Index k = 0; k < components.rows(); ++k)
    components.row(k) *= result.masks.row_max[k];
  const Eigen::MatrixXd gram = components * components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("pca masks: power iteration oracle agrees on the top eigenpairs") {
  Rng rng(1234, 0);
  LabeledDataset data;
  data.samples = rng.uniform_matrix(200, 12);
  data.labels.assign(200, 0);
  data.class_count = 1;

  const Eigen::VectorXd mean = data.samples.colwise().mean();
  const Eigen::MatrixXd centered = data.samples.rowwise() - mean.transpose();
  const Eigen::MatrixXd covariance = centered.transpose() * centered / 199.0;

  const PcaMasks result = pca_masks(data, 5);

  // Power iteration with deflation, independent of the library eigensolver.
  Eigen::MatrixXd deflated = covariance;
  for (Eigen::Index k = 0; k < 5; ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(12).normalized();
    for (int iteration = 0; iteration < 20000; ++iteration) {
      const Eigen::VectorXd next = (deflated * v).normalized();
      if ((next - v).norm() < 1e-14) {
        v = next;
        break;
      }
      v = next;
    }
    const double value = v.dot(deflated * v);
    CHECK(value == doctest::Approx(result.eigenvalues[k]).epsilon(1e-6));

    const Eigen::VectorXd component =
        (result.masks.matrix.row(k) * result.masks.row_max[k]).transpose();
    CHECK(std::abs(component.normalized().dot(v)) == doctest::Approx(1.0).epsilon(1e-6));
    deflated -= value * v * v.transpose();
  }
}

TEST_CASE("pca masks: rank deficiency is flagged") {
  // Samples confined to a 2-dimensional subspace of R^5.
  Rng rng(5, 0);
  Eigen::MatrixXd basis(2, 5);
  basis << 1, 0, 1, 0, 1, 0, 1, 0, 1, 0;
  LabeledDataset data;
  data.samples = (rng.uniform_matrix(30, 2) * basis) / 3.0;
  data.labels.assign(30, 0);
  data.class_count = 1;

  const PcaMasks result = pca_masks(data, 4);
  CHECK(result.rank_deficient);
  CHECK(result.masks.mask_count() == 2);
}

TEST_CASE("normalize_masks rescales rows and records the peak") {
  MaskSet masks;
  masks.matrix.resize(2, 2);
  masks.matrix << 0.5, 0.25, -2.0, 1.0;
  masks = normalize_masks(std::move(masks));
  CHECK(masks.matrix(0, 0) == 1.0);
  CHECK(masks.matrix(0, 1) == 0.5);
  CHECK(masks.row_max[0] == 0.5);
  CHECK(masks.matrix(1, 0) == -1.0);
  CHECK(masks.matrix(1, 1) == 0.5);
  CHECK(masks.row_max[1] == 2.0);

  // Already normalized rows are untouched and report a unit peak.
  const MaskSet again = normalize_masks(masks);
  CHECK(exact_equal(again.matrix, masks.matrix));
  CHECK(exact_equal(again.row_max, Eigen::VectorXd::Ones(2)));

  MaskSet degenerate;
  degenerate.matrix = Eigen::MatrixXd::Zero(1, 3);
  CHECK_THROWS_AS(normalize_masks(std::move(degenerate)), std::domain_error);
}

TEST_CASE("dual rail split") {
  Eigen::MatrixXd m(2, 2);
  m << 1, -2, 0, 3;
  const DualRailPair pair = dual_rail_split(m);
  Eigen::MatrixXd positive(2, 2), negative(2, 2);
  positive << 1, 0, 0, 3;
  negative << 0, 2, 0, 0;
  CHECK(exact_equal(pair.positive, positive));
  CHECK(exact_equal(pair.negative, negative));

  const Eigen::MatrixXd random = random_signed_matrix(7, 11, 21);
  const DualRailPair split = dual_rail_split(random);
  CHECK(exact_equal(split.positive - split.negative, random));  // bit-exact recombination
  CHECK(split.positive.minCoeff() >= 0.0);
  CHECK(split.negative.minCoeff() >= 0.0);
  CHECK((split.positive.array() * split.negative.array()).matrix().isZero(0.0));
}

TEST_CASE("photon distribution factor matches the closed accounting") {
  const PhotonBudget budget = PhotonBudget::total_photons(160.0);

  CHECK(photon_distribution_factor(raster(4), budget, RailMode::SinglePositive) == 160.0 / 16.0);
  CHECK(photon_distribution_factor(hadamard(4), budget, RailMode::DualOneSensor) == 160.0 / 32.0);
  CHECK(photon_distribution_factor(hadamard(4), budget, RailMode::DualTwoSensors) == 160.0 / 16.0);

  // Exact to machine precision across sizes.
  for (Eigen::Index n : {4, 64, 1024}) {
    const PhotonBudget big = PhotonBudget::total_photons(1e10);
    const auto nd = static_cast<double>(n);
    CHECK(photon_distribution_factor(raster(n), big, RailMode::SinglePositive) == 1e10 / (nd * nd));
    CHECK(photon_distribution_factor(hadamard(n), big, RailMode::DualOneSensor) ==
          1e10 / (2.0 * nd * nd));
  }

  // The impulse exposure multiplier folds into the factor.
  CHECK(photon_distribution_factor(impulse(4), budget, RailMode::SinglePositive) ==
        4.0 * photon_distribution_factor(raster(4), budget, RailMode::SinglePositive));

  MaskSet degenerate;
  degenerate.matrix = Eigen::MatrixXd::Zero(2, 4);
  degenerate.row_max = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(photon_distribution_factor(degenerate, budget, RailMode::SinglePositive),
                  std::domain_error);
}

TEST_CASE("flux preservation holds for random masks and scenes") {
  Rng rng(31, 0);
  for (int round = 0; round < 200; ++round) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.uniform_index(8));
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_index(12));
    MaskSet masks;
    masks.matrix = random_signed_matrix(m, n, 1000 + static_cast<std::uint64_t>(round));
    masks.matrix.array() += 1e-6;  // avoid exactly-zero rows
    masks = normalize_masks(std::move(masks));

    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = rng.uniform();

    const double total = 1.0 + 1e4 * rng.uniform();
    const PhotonBudget budget = PhotonBudget::total_photons(total);
    const DualRailPair pair = dual_rail_split(masks.matrix);

    // Single rail over the magnitude pattern.
    {
      const double lambda =
          photon_distribution_factor(masks.matrix.cwiseAbs(), 1.0, budget, RailMode::SinglePositive);
      const double detected = lambda * (masks.matrix.cwiseAbs() * x).sum();
      CHECK(detected <= total * (1.0 + 1e-12));
    }
    // Dual rail: every photon lands in one of the two branches.
    {
      const double lambda = photon_distribution_factor(masks, budget, RailMode::DualOneSensor);
      const double detected = lambda * ((pair.positive * x).sum() + (pair.negative * x).sum());
      CHECK(detected <= total * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("default rail mode follows the sign pattern") {
  CHECK(default_rail_mode(raster(4)) == RailMode::SinglePositive);
  CHECK(default_rail_mode(hadamard(4)) == RailMode::DualOneSensor);
}

TEST_CASE("mask csv and binary containers round-trip") {
  const Eigen::MatrixXd matrix = random_signed_matrix(5, 9, 77);
  const auto dir = std::filesystem::temp_directory_path() / "spc_mask_io_test";
  std::filesystem::create_directories(dir);

  save_mask_csv(dir / "m.csv", matrix);
  CHECK(exact_equal(load_mask_csv(dir / "m.csv"), matrix));  // %.17g preserves doubles exactly

  save_mask_binary(dir / "m.spcm", matrix);
  CHECK(exact_equal(load_mask_binary(dir / "m.spcm"), matrix));
  CHECK(exact_equal(load_mask_matrix(dir / "m.spcm"), matrix));

  // 4-byte magic then u32 dimensions.
  std::ifstream in(dir / "m.spcm", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "SPCM");

  const MaskSet masks = hadamard(4);
  save_mask_metadata(dir / "m.json", masks, 1234);
  const MaskSet restored = load_mask_metadata(dir / "m.json", masks.matrix);
  CHECK(restored.family == MaskFamily::Hadamard);
  CHECK(restored.exposure_scale == 1.0);
  CHECK(exact_equal(restored.row_max, masks.row_max));

  std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
