#include "spc/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace spc {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::filesystem::path& path, std::size_t offset) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in)
    throw std::runtime_error("idx parse error: " + path.string() + ": truncated header at byte offset " +
                             std::to_string(offset));
  return (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
         (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t value) {
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(value >> 24), static_cast<unsigned char>(value >> 16),
      static_cast<unsigned char>(value >> 8), static_cast<unsigned char>(value)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::vector<int> count_classes(const LabeledDataset& set, int class_count) {
  std::vector<int> counts(static_cast<std::size_t>(class_count), 0);
  for (int label : set.labels) ++counts[static_cast<std::size_t>(label)];
  return counts;
}

LabeledDataset take_rows(const LabeledDataset& source, const std::vector<Eigen::Index>& order,
                         Eigen::Index begin, Eigen::Index end, const std::string& provenance) {
  LabeledDataset out;
  out.samples.resize(end - begin, source.dimension());
  out.labels.reserve(static_cast<std::size_t>(end - begin));
  for (Eigen::Index i = begin; i < end; ++i) {
    out.samples.row(i - begin) = source.samples.row(order[static_cast<std::size_t>(i)]);
    out.labels.push_back(source.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  }
  out.class_count = source.class_count;
  out.provenance = provenance;
  return out;
}

}  // namespace

void LabeledDataset::validate() const {
  if (samples.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("dataset: sample count " + std::to_string(samples.rows()) +
                                " != label count " + std::to_string(labels.size()));
  if (class_count <= 0) throw std::invalid_argument("dataset: class count must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= class_count)
      throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " at index " +
                                  std::to_string(i) + " outside [0, " + std::to_string(class_count) + ")");
  if (samples.size() > 0 && (samples.minCoeff() < 0.0 || samples.maxCoeff() > 1.0))
    throw std::invalid_argument("dataset: sample entries must lie in [0, 1]");
}

IdxImages load_idx_images(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx parse error: cannot open " + path.string());
  const std::uint32_t magic = read_u32_be(in, path, 0);
  if (magic != kIdxImageMagic) {
    std::ostringstream msg;
    msg << "idx parse error: " << path.string() << ": unexpected magic 0x" << std::hex << magic
        << " at byte offset 0 (want 0x" << kIdxImageMagic << ")";
    throw std::runtime_error(msg.str());
  }
  const std::uint32_t count = read_u32_be(in, path, 4);
  const std::uint32_t rows = read_u32_be(in, path, 8);
  const std::uint32_t cols = read_u32_be(in, path, 12);
  if (rows == 0 || cols == 0)
    throw std::runtime_error("idx parse error: " + path.string() + ": zero image dimensions");

  const std::size_t pixel_count = std::size_t(count) * rows * cols;
  std::vector<unsigned char> bytes(pixel_count);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(pixel_count));
  if (static_cast<std::size_t>(in.gcount()) != pixel_count)
    throw std::runtime_error("idx parse error: " + path.string() + ": truncated pixel data at byte offset " +
                             std::to_string(16 + in.gcount()));

  IdxImages images;
  images.rows = static_cast<int>(rows);
  images.cols = static_cast<int>(cols);
  images.pixels.resize(count, std::int64_t(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint32_t p = 0; p < rows * cols; ++p)
      images.pixels(i, p) = bytes[std::size_t(i) * rows * cols + p] / 255.0;
  return images;
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx parse error: cannot open " + path.string());
  const std::uint32_t magic = read_u32_be(in, path, 0);
  if (magic != kIdxLabelMagic) {
    std::ostringstream msg;
    msg << "idx parse error: " << path.string() << ": unexpected magic 0x" << std::hex << magic
        << " at byte offset 0 (want 0x" << kIdxLabelMagic << ")";
    throw std::runtime_error(msg.str());
  }
  const std::uint32_t count = read_u32_be(in, path, 4);
  std::vector<unsigned char> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()), count);
  if (static_cast<std::size_t>(in.gcount()) != count)
    throw std::runtime_error("idx parse error: " + path.string() + ": truncated label data at byte offset " +
                             std::to_string(8 + in.gcount()));
  return {bytes.begin(), bytes.end()};
}

void save_idx_images(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
                     int count, int rows, int cols) {
  if (pixels.size() != std::size_t(count) * rows * cols)
    throw std::invalid_argument("save_idx_images: pixel buffer does not match count*rows*cols");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_u32_be(out, kIdxImageMagic);
  write_u32_be(out, static_cast<std::uint32_t>(count));
  write_u32_be(out, static_cast<std::uint32_t>(rows));
  write_u32_be(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void save_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_u32_be(out, kIdxLabelMagic);
  write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

LabeledDataset preprocess_mnist(const IdxImages& images, const std::vector<int>& labels) {
  if (images.rows != 28 || images.cols != 28)
    throw std::invalid_argument("preprocess_mnist: expected 28x28 images, got " +
                                std::to_string(images.rows) + "x" + std::to_string(images.cols));
  if (images.pixels.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("preprocess_mnist: image/label count mismatch");

  const Eigen::Index count = images.pixels.rows();
  LabeledDataset out;
  out.samples.setZero(count, 32 * 32);
  for (Eigen::Index i = 0; i < count; ++i)
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c)
        out.samples(i, (r + 2) * 32 + (c + 2)) = images.pixels(i, r * 28 + c);
  // Padding included: every pixel lands in [0.3, 1].
  out.samples = (0.3 + 0.7 * out.samples.array()).matrix();
  out.labels = labels;
  out.class_count = 10;
  out.provenance = "mnist-32x32";
  out.validate();
  return out;
}

Eigen::MatrixXd random_patterns(Eigen::Index count, Eigen::Index dimension, std::uint64_t seed) {
  if (count < 1 || dimension < 1)
    throw std::invalid_argument("random_patterns: count and dimension must be positive");
  Rng rng(seed, 0);
  return rng.uniform_matrix(count, dimension);
}

LabeledDataset load_spectral_csv(const std::filesystem::path& path, Eigen::Index band_count,
                                 bool skip_header) {
  if (band_count < 1) throw std::invalid_argument("load_spectral_csv: band count must be positive");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("spectral parse error: cannot open " + path.string());

  std::vector<Eigen::VectorXd> spectra;
  std::vector<int> labels;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line_number == 1 && skip_header) continue;
    if (line.empty()) continue;

    std::vector<double> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        cells.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \t\r", used) != std::string::npos)
          throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("spectral parse error: " + path.string() + ": line " +
                                 std::to_string(line_number) + ": non-numeric cell '" + cell + "'");
      }
    }
    if (static_cast<Eigen::Index>(cells.size()) != band_count + 1)
      throw std::runtime_error("spectral parse error: " + path.string() + ": line " +
                               std::to_string(line_number) + ": expected " + std::to_string(band_count + 1) +
                               " cells, got " + std::to_string(cells.size()));

    Eigen::VectorXd spectrum(band_count);
    for (Eigen::Index b = 0; b < band_count; ++b) spectrum[b] = cells[static_cast<std::size_t>(b)];
    spectra.push_back(std::move(spectrum));
    const double label_cell = cells.back();
    const int label = static_cast<int>(label_cell);
    if (label_cell != label || label < 0)
      throw std::runtime_error("spectral parse error: " + path.string() + ": line " +
                               std::to_string(line_number) + ": label must be a nonnegative integer");
    labels.push_back(label);
  }
  if (spectra.empty()) throw std::runtime_error("spectral parse error: " + path.string() + ": no rows");

  Eigen::Index padded = 1;
  while (padded < band_count) padded *= 2;

  double lo = spectra[0][0], hi = spectra[0][0];
  for (const auto& s : spectra) {
    lo = std::min(lo, s.minCoeff());
    hi = std::max(hi, s.maxCoeff());
  }
  const double scale = hi - lo;

  LabeledDataset out;
  out.samples.setZero(static_cast<Eigen::Index>(spectra.size()), padded);
  for (std::size_t i = 0; i < spectra.size(); ++i) {
    if (scale > 0.0)
      out.samples.row(static_cast<Eigen::Index>(i)).head(band_count) =
          ((spectra[i].array() - lo) / scale).matrix().transpose();
    // Degenerate all-equal file maps to zero.
  }
  out.labels = labels;
  out.class_count = *std::max_element(labels.begin(), labels.end()) + 1;
  out.provenance = "spectral-csv";
  out.validate();
  return out;
}

SplitResult split(const LabeledDataset& dataset, const SplitSpec& spec) {
  if (spec.train_fraction < 0.0 || spec.validation_fraction < 0.0 ||
      spec.train_fraction + spec.validation_fraction > 1.0 + 1e-12)
    throw std::invalid_argument("split: fractions must be nonnegative and sum to at most 1");

  const Eigen::Index n = dataset.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(spec.seed, 0);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);

  const auto train_count = static_cast<Eigen::Index>(spec.train_fraction * static_cast<double>(n));
  const auto val_count = static_cast<Eigen::Index>(spec.validation_fraction * static_cast<double>(n));
  const Eigen::Index test_count = n - train_count - val_count;
  const double test_fraction = 1.0 - spec.train_fraction - spec.validation_fraction;

  if (spec.train_fraction > 0.0 && train_count == 0)
    throw std::invalid_argument("split: train partition is empty");
  if (spec.validation_fraction > 0.0 && val_count == 0)
    throw std::invalid_argument("split: validation partition is empty");
  if (test_fraction > 1e-12 && test_count == 0)
    throw std::invalid_argument("split: test partition is empty");

  SplitResult result;
  result.train = take_rows(dataset, order, 0, train_count, dataset.provenance + "/train");
  result.validation =
      take_rows(dataset, order, train_count, train_count + val_count, dataset.provenance + "/validation");
  result.test = take_rows(dataset, order, train_count + val_count, n, dataset.provenance + "/test");
  result.train_class_counts = count_classes(result.train, dataset.class_count);
  result.validation_class_counts = count_classes(result.validation, dataset.class_count);
  result.test_class_counts = count_classes(result.test, dataset.class_count);
  return result;
}

std::filesystem::path data_directory() {
  if (const char* env = std::getenv("SPC_DATA_DIR"); env != nullptr && *env != '\0')
    return std::filesystem::path(env);
  return std::filesystem::path("data");
}

}  // namespace spc
