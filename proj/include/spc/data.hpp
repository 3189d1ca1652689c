#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spc/rng.hpp"

namespace spc {

/// Samples live in rows; every entry is expected to be in [0, 1].
struct LabeledDataset {
  Eigen::MatrixXd samples;  // one sample per row
  std::vector<int> labels;
  int class_count = 0;
  std::string provenance;

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dimension() const { return samples.cols(); }

  /// Throws std::invalid_argument when sizes disagree, a label falls outside
  /// [0, class_count) or a sample entry leaves [0, 1].
  void validate() const;
};

struct SplitSpec {
  double train_fraction = 0.8;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct SplitResult {
  LabeledDataset train;
  LabeledDataset validation;
  LabeledDataset test;
  std::vector<int> train_class_counts;
  std::vector<int> validation_class_counts;
  std::vector<int> test_class_counts;
};

/// Raw image stack from an IDX container, pixel values scaled to [0, 1].
struct IdxImages {
  Eigen::MatrixXd pixels;  // one flattened row-major image per row
  int rows = 0;
  int cols = 0;
};

IdxImages load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

/// Writes raw bytes back into IDX form (u8, big-endian headers); used for
/// synthetic fixtures and round-trip checks.
void save_idx_images(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
                     int count, int rows, int cols);
void save_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// 28x28 digits: zero-pad to 32x32 (2 pixels each side), then map pixel
/// values p -> 0.3 + 0.7 p so even dark pixels carry photon flux. Output
/// dimension is 1024.
LabeledDataset preprocess_mnist(const IdxImages& images, const std::vector<int>& labels);

/// i.i.d. uniform [0, 1) vectors, one per row.
Eigen::MatrixXd random_patterns(Eigen::Index count, Eigen::Index dimension, std::uint64_t seed);

/// CSV rows of (band values..., integer label). Band values are min-max
/// rescaled to [0, 1] over the whole file and zero-padded up to the next
/// power of two (224 -> 256).
LabeledDataset load_spectral_csv(const std::filesystem::path& path, Eigen::Index band_count,
                                 bool skip_header = false);

SplitResult split(const LabeledDataset& dataset, const SplitSpec& spec);

/// Dataset search root: $SPC_DATA_DIR when set, else "./data".
std::filesystem::path data_directory();

}  // namespace spc
