#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "maskforge/grid.hpp"

namespace maskforge::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a PNG (gray, gray+alpha, RGB, RGBA, palette; 8 or 16 bit) or a
/// binary PPM/PGM (P6/P5) into [0, 1]. Alpha is dropped.
Grid read_image(const std::filesystem::path& path);

/// Heatmap from CSV (one row per line, comma separated) or from an 8/16-bit
/// grayscale PNG scaled to [0, 1]. Format is chosen by extension.
Grid read_heatmap(const std::filesystem::path& path);

void write_heatmap_csv(const std::filesystem::path& path, const Grid& heatmap);

/// 8-bit PNG of a 1- or 3-channel grid; values are clamped to [0, 1].
void write_png(const std::filesystem::path& path, const Grid& image);

/// Writes `text` verbatim.
void write_text(const std::filesystem::path& path, const std::string& text);

std::string read_text(const std::filesystem::path& path);

}  // namespace maskforge::io
