#include "invertfill/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "invertfill/error.hpp"

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace invertfill {

namespace {

constexpr char kMagic[8] = {'I', 'F', 'A', 'R', 'C', 'H', 'V', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated archive: " + path.string());
  return v;
}

std::string get_string(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated archive: " + path.string());
  return s;
}

}  // namespace

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  if (!archive.header.contains("kind")) throw InvalidInput("archive header needs a \"kind\" field");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kArchiveVersion);
    const std::string header = archive.header.dump();
    put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    put<std::uint64_t>(os, archive.tensors.size());
    for (const auto& [name, t] : archive.tensors) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open archive " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointMismatch("not an archive: " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kArchiveVersion) {
    throw CheckpointMismatch("unsupported archive version " + std::to_string(version) + " in " + path.string());
  }
  Archive a;
  const auto header_len = get<std::uint64_t>(is, path);
  try {
    a.header = nlohmann::json::parse(get_string(is, header_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointMismatch("corrupt archive header in " + path.string() + ": " + e.what());
  }
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = get_string(is, get<std::uint32_t>(is, path), path);
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw CheckpointMismatch("implausible tensor rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = get<std::int32_t>(is, path);
    Tensor t(shape);
    if (t.numel() &&
        !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
      throw IoError("truncated archive: " + path.string());
    }
    a.tensors.emplace(name, std::move(t));
  }
  return a;
}

void expect_header(const Archive& archive, const nlohmann::json& expected) {
  for (const auto& [key, value] : expected.items()) {
    if (!archive.header.contains(key)) throw CheckpointMismatch("archive header lacks field \"" + key + "\"");
    if (archive.header.at(key) != value) {
      throw CheckpointMismatch("archive header field \"" + key + "\" is " + archive.header.at(key).dump() +
                               ", expected " + value.dump());
    }
  }
}

StateDict extract_prefixed(const StateDict& tensors, const std::string& prefix) {
  StateDict out;
  for (const auto& [k, v] : tensors)
    if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
  return out;
}

void insert_prefixed(StateDict& tensors, const std::string& prefix, const StateDict& values) {
  for (const auto& [k, v] : values) tensors.insert_or_assign(prefix + k, v);
}

}  // namespace invertfill
