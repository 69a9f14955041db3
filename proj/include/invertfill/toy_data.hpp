#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "invertfill/imaging.hpp"

namespace invertfill {

// Procedural scene: vertical sky gradient over a ground band, a few flat-shaded
// shapes and a textured blob. Deterministic in (size, seed).
Image toy_image(int size, std::uint64_t seed);
std::vector<Image> toy_dataset(int count, int size, std::uint64_t seed);

// Every PNG in a directory (sorted by name); each must be RGB at the given size.
std::vector<Image> load_image_directory(const std::filesystem::path& dir, int size);

}  // namespace invertfill
