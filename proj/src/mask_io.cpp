#include "spc/mask_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "spc/binary_io.hpp"

namespace spc {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'M'};

}  // namespace

void save_mask_csv(const std::filesystem::path& path, const Eigen::MatrixXd& matrix,
                   const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (!header_comment.empty()) out << header_comment;
  char buffer[64];
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      std::snprintf(buffer, sizeof buffer, "%.17g", matrix(r, c));
      if (c) out << ',';
      out << buffer;
    }
    out << '\n';
  }
}

Eigen::MatrixXd load_mask_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("mask csv parse error: " + path.string() + ": line " +
                                 std::to_string(line_number) + ": bad cell '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("mask csv parse error: " + path.string() + ": line " +
                               std::to_string(line_number) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("mask csv parse error: " + path.string() + ": empty file");
  Eigen::MatrixXd matrix(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index r = 0; r < matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < matrix.cols(); ++c)
      matrix(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return matrix;
}

void save_mask_binary(const std::filesystem::path& path, const Eigen::MatrixXd& matrix) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  write_u32_le(out, static_cast<std::uint32_t>(matrix.rows()));
  write_u32_le(out, static_cast<std::uint32_t>(matrix.cols()));
  for (Eigen::Index r = 0; r < matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) write_f64_le(out, matrix(r, c));
}

Eigen::MatrixXd load_mask_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("mask binary parse error: " + path.string() + ": bad magic");
  const std::uint32_t rows = read_u32_le(in);
  const std::uint32_t cols = read_u32_le(in);
  Eigen::MatrixXd matrix(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) matrix(r, c) = read_f64_le(in);
  if (!in) throw std::runtime_error("mask binary parse error: " + path.string() + ": truncated payload");
  return matrix;
}

void save_mask_metadata(const std::filesystem::path& path, const MaskSet& masks,
                        std::optional<std::uint64_t> seed) {
  nlohmann::json meta;
  meta["family"] = to_string(masks.family);
  meta["mask_count"] = masks.mask_count();
  meta["pixel_count"] = masks.pixel_count();
  meta["exposure_scale"] = masks.exposure_scale;
  meta["row_max"] = std::vector<double>(masks.row_max.data(), masks.row_max.data() + masks.row_max.size());
  if (seed) meta["seed"] = *seed;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << meta.dump(2) << '\n';
}

MaskSet load_mask_metadata(const std::filesystem::path& path, Eigen::MatrixXd matrix) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json meta = nlohmann::json::parse(in);
  MaskSet masks;
  masks.matrix = std::move(matrix);
  masks.family = mask_family_from_string(meta.at("family").get<std::string>());
  masks.exposure_scale = meta.at("exposure_scale").get<double>();
  const auto row_max = meta.at("row_max").get<std::vector<double>>();
  masks.row_max = Eigen::Map<const Eigen::VectorXd>(row_max.data(), static_cast<Eigen::Index>(row_max.size()));
  if (masks.row_max.size() != masks.mask_count())
    throw std::runtime_error("mask metadata mismatch: row_max length != mask count");
  return masks;
}

Eigen::MatrixXd load_mask_matrix(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? load_mask_csv(path) : load_mask_binary(path);
}

}  // namespace spc
