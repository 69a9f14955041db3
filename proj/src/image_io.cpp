#include "invertfill/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "invertfill/error.hpp"

namespace invertfill {

namespace {

struct PngBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bytes;
};

PngBuffer read_png(const std::filesystem::path& path, png_uint_32 format) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  PngBuffer out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.bytes.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, int size, png_uint_32 format, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(size);
  img.height = static_cast<png_uint_32>(size);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void check_square(const PngBuffer& b, const std::filesystem::path& path) {
  if (b.width != b.height) {
    throw InvalidInput(path.string() + " is " + std::to_string(b.width) + "x" + std::to_string(b.height) +
                       "; square images are required");
  }
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::uint8_t to_byte(double value) noexcept {
  const double v = std::clamp((value + 1.0) * 127.5, 0.0, 255.0);
  return static_cast<std::uint8_t>(std::lround(v));
}

double from_byte(std::uint8_t value) noexcept { return value / 127.5 - 1.0; }

Image read_image(const std::filesystem::path& path) {
  const PngBuffer b = read_png(path, PNG_FORMAT_RGB);
  check_square(b, path);
  const int s = b.width;
  Image image(3, s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = from_byte(b.bytes[(static_cast<std::size_t>(y) * s + x) * 3 + c]);
  return image;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 3) throw InvalidInput("write_image expects a 3-channel image");
  const int s = image.size();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(s) * s * 3);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c) bytes[(static_cast<std::size_t>(y) * s + x) * 3 + c] = to_byte(image.at(c, y, x));
  write_png(path, s, PNG_FORMAT_RGB, bytes);
}

Mask read_mask(const std::filesystem::path& path) {
  const PngBuffer b = read_png(path, PNG_FORMAT_GRAY);
  check_square(b, path);
  Tensor values({1, b.width, b.width});
  for (std::size_t i = 0; i < b.bytes.size(); ++i) {
    if (b.bytes[i] == 255) {
      values[i] = 1.0;
    } else if (b.bytes[i] != 0) {
      throw InvalidInput("mask " + path.string() + " is not binary (found value " + std::to_string(b.bytes[i]) + ")");
    }
  }
  return Mask(values);
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  const int s = mask.size();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(s) * s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) bytes[static_cast<std::size_t>(y) * s + x] = mask.at(y, x) ? 255 : 0;
  write_png(path, s, PNG_FORMAT_GRAY, bytes);
}

void write_manifest(const std::filesystem::path& path, const std::vector<MaskRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    if (r.path.find(',') != std::string::npos) throw InvalidInput("manifest paths cannot contain commas: " + r.path);
    os << r.path << ',' << format_double(r.coverage) << ',' << to_string(r.kind) << ',' << r.seed << '\n';
  }
}

std::vector<MaskRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest " + path.string());
  std::vector<MaskRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 4) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected path,coverage,kind,seed");
    }
    MaskRecord r;
    r.path = fields[0];
    auto cov = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), r.coverage);
    auto seed = std::from_chars(fields[3].data(), fields[3].data() + fields[3].size(), r.seed);
    if (cov.ec != std::errc() || seed.ec != std::errc()) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    r.kind = mask_kind_from_string(fields[2]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace invertfill
