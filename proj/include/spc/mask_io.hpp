#pragma once

#include <filesystem>
#include <optional>

#include "spc/masks.hpp"

namespace spc {

// Mask container formats: CSV (one row per mask, full precision), a compact
// binary form, and a JSON metadata sidecar.
//
// Binary layout: magic "SPCM", u32 mask count, u32 pixel count, then
// row-major f64 entries; all multi-byte fields little-endian.

/// Optional comment lines ("# ...") may precede the rows; the loader skips
/// them.
void save_mask_csv(const std::filesystem::path& path, const Eigen::MatrixXd& matrix,
                   const std::string& header_comment = {});
Eigen::MatrixXd load_mask_csv(const std::filesystem::path& path);

void save_mask_binary(const std::filesystem::path& path, const Eigen::MatrixXd& matrix);
Eigen::MatrixXd load_mask_binary(const std::filesystem::path& path);

void save_mask_metadata(const std::filesystem::path& path, const MaskSet& masks,
                        std::optional<std::uint64_t> seed = {});
/// Restores family / row_max / exposure_scale around an already-loaded matrix.
MaskSet load_mask_metadata(const std::filesystem::path& path, Eigen::MatrixXd matrix);

/// Loads .csv or binary by extension (anything not .csv is treated as binary).
Eigen::MatrixXd load_mask_matrix(const std::filesystem::path& path);

}  // namespace spc
