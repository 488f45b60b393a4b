#include "image_io.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <vector>

namespace maskforge::io {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<unsigned char> bytes;
  std::vector<unsigned char*> rows;
};

// libpng reports errors with longjmp, so this stays free of objects with
// non-trivial destructors between setjmp and the decode.
bool decode_png(std::FILE* fp, DecodedPng& out, char* message, std::size_t message_size) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) {
    std::snprintf(message, message_size, "out of memory");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::snprintf(message, message_size, "out of memory");
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(message, message_size, "corrupt PNG data");
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.bytes.resize(row_bytes * static_cast<std::size_t>(out.height));
  out.rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) out.rows[static_cast<std::size_t>(y)] = out.bytes.data() + row_bytes * y;
  png_read_image(png, out.rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

Grid read_png(const std::filesystem::path& path) {
  FilePtr fp = open_file(path, "rb");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  std::rewind(fp.get());
  DecodedPng png;
  char message[128] = {};
  if (!decode_png(fp.get(), png, message, sizeof message)) {
    throw IoError("cannot decode '" + path.string() + "': " + message);
  }
  if (png.channels != 1 && png.channels != 3) {
    throw IoError("'" + path.string() + "' has an unsupported channel layout");
  }
  Grid g(png.height, png.width, png.channels);
  const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
  const std::size_t bps = png.bit_depth == 16 ? 2 : 1;
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) {
      for (int c = 0; c < png.channels; ++c) {
        const std::size_t at = ((static_cast<std::size_t>(y) * png.width + x) * png.channels + c) * bps;
        const unsigned v = bps == 2 ? (png.bytes[at] << 8U) | png.bytes[at + 1] : png.bytes[at];
        g.at(c, y, x) = v / scale;
      }
    }
  }
  return g;
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string token;
  for (;;) {
    const int ch = in.get();
    if (ch == EOF) return token;
    if (ch == '#' && token.empty()) {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
}

int pnm_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = pnm_token(in);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v <= 0) {
    throw IoError("malformed PNM header in '" + path.string() + "'");
  }
  return v;
}

Grid read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string magic = pnm_token(in);
  if (magic != "P5" && magic != "P6") {
    throw IoError("'" + path.string() + "' is not a binary PPM/PGM (expected P5 or P6)");
  }
  const int channels = magic == "P6" ? 3 : 1;
  const int width = pnm_int(in, path);
  const int height = pnm_int(in, path);
  const int maxval = pnm_int(in, path);
  if (maxval > 65535) throw IoError("PNM maxval above 65535 in '" + path.string() + "'");
  const std::size_t bps = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> data(static_cast<std::size_t>(width) * height * channels * bps);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) {
    throw IoError("truncated pixel data in '" + path.string() + "'");
  }
  Grid g(height, width, channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t at = ((static_cast<std::size_t>(y) * width + x) * channels + c) * bps;
        const unsigned v = bps == 2 ? (data[at] << 8U) | data[at + 1] : data[at];
        g.at(c, y, x) = static_cast<double>(v) / maxval;
      }
    }
  }
  return g;
}

Grid read_csv_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<double> values;
  int rows = 0;
  int cols = -1;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    int count = 0;
    std::stringstream fields(line);
    for (std::string field; std::getline(fields, field, ',');) {
      const auto b = field.find_first_not_of(" \t");
      const auto e = field.find_last_not_of(" \t");
      if (b == std::string::npos) throw IoError("empty field in '" + path.string() + "'");
      const std::string trimmed = field.substr(b, e - b + 1);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), v);
      if (ec != std::errc() || ptr != trimmed.data() + trimmed.size() || !std::isfinite(v)) {
        throw IoError("non-numeric value '" + trimmed + "' in '" + path.string() + "' row " +
                      std::to_string(rows + 1));
      }
      values.push_back(v);
      ++count;
    }
    if (cols >= 0 && count != cols) {
      throw IoError("ragged CSV '" + path.string() + "': row " + std::to_string(rows + 1) + " has " +
                    std::to_string(count) + " values, expected " + std::to_string(cols));
    }
    cols = count;
    ++rows;
  }
  if (rows == 0) throw IoError("'" + path.string() + "' holds no values");
  return Grid(rows, cols, 1, std::move(values));
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Grid read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
  throw IoError("unsupported image format '" + ext + "' for '" + path.string() + "' (use PNG or PPM)");
}

Grid read_heatmap(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".csv") return read_csv_grid(path);
  if (ext == ".png") {
    Grid g = read_png(path);
    if (g.channels() != 1) throw IoError("heatmap PNG '" + path.string() + "' must be grayscale");
    return g;
  }
  throw IoError("unsupported heatmap format '" + ext + "' (use CSV or grayscale PNG)");
}

void write_heatmap_csv(const std::filesystem::path& path, const Grid& heatmap) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (int y = 0; y < heatmap.height(); ++y) {
    for (int x = 0; x < heatmap.width(); ++x) {
      if (x > 0) out << ',';
      out << heatmap.at(0, y, x);
    }
    out << '\n';
  }
  write_text(path, out.str());
}

void write_png(const std::filesystem::path& path, const Grid& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw IoError("PNG output needs 1 or 3 channels");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> bytes(image.size());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        bytes[(static_cast<std::size_t>(y) * image.width() + x) * image.channels() + c] =
            to_byte(image.at(c, y, x));
      }
    }
  }
  if (png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr) == 0) {
    const std::string why = png.message;
    png_image_free(&png);
    throw IoError("cannot write '" + path.string() + "': " + why);
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace maskforge::io
