#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "invertfill/imaging.hpp"

namespace invertfill {

// 8-bit RGB PNG <-> Image in [-1, 1] (v = p / 127.5 - 1). Grayscale or alpha inputs
// are converted to RGB on read.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

// Single-channel PNG masks: 0 = keep, 255 = hole. Any other value is rejected.
Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& mask);

std::uint8_t to_byte(double value) noexcept;
double from_byte(std::uint8_t value) noexcept;

// One line per mask: path,coverage,kind,seed. coverage is the requested target, so
// generate_mask(kind, coverage, size, seed) reproduces the file.
struct MaskRecord {
  std::string path;
  double coverage = 0.0;
  MaskKind kind = MaskKind::Freeform;
  std::uint64_t seed = 0;

  bool operator==(const MaskRecord&) const = default;
};

void write_manifest(const std::filesystem::path& path, const std::vector<MaskRecord>& records);
std::vector<MaskRecord> read_manifest(const std::filesystem::path& path);

// All *.png files of a directory in lexicographic order.
std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir);

}  // namespace invertfill
