#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "invertfill/nn.hpp"

namespace invertfill {

// Versioned binary archive: a JSON header followed by named float64 tensors.
//
//   "IFARCHV\0"  magic (8 bytes)
//   u32          format version
//   u64          header length, then UTF-8 JSON header (must contain "kind")
//   u64          tensor count
//   per tensor:  u32 name length, name bytes, u32 rank, i32 dims[rank],
//                float64 values (little-endian, row-major)
struct Archive {
  nlohmann::json header = nlohmann::json::object();
  StateDict tensors;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

// Throws CheckpointMismatch naming the first field whose value differs from `expected`.
void expect_header(const Archive& archive, const nlohmann::json& expected);

// Tensors whose names start with prefix, with the prefix stripped.
StateDict extract_prefixed(const StateDict& tensors, const std::string& prefix);
void insert_prefixed(StateDict& tensors, const std::string& prefix, const StateDict& values);

}  // namespace invertfill
