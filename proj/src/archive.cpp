#include "duet/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "duet/error.hpp"

namespace duet {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr int kManifestVersion = 1;

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  if (s == "i32") return DType::kI32;
  if (s == "i64") return DType::kI64;
  if (s == "u8") return DType::kU8;
  throw Error("corrupt-archive", "unknown element type " + s);
}

template <typename T>
std::vector<uint8_t> to_le_bytes(std::span<const T> data) {
  std::vector<uint8_t> out(data.size() * sizeof(T));
  std::memcpy(out.data(), data.data(), out.size());
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (size_t i = 0; i < out.size(); i += sizeof(T)) std::reverse(out.begin() + i, out.begin() + i + sizeof(T));
  }
  return out;
}

template <typename T>
std::vector<T> from_le_bytes(const std::vector<uint8_t>& bytes) {
  std::vector<uint8_t> tmp = bytes;
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (size_t i = 0; i < tmp.size(); i += sizeof(T)) std::reverse(tmp.begin() + i, tmp.begin() + i + sizeof(T));
  }
  std::vector<T> out(tmp.size() / sizeof(T));
  std::memcpy(out.data(), tmp.data(), out.size() * sizeof(T));
  return out;
}

template <typename Out>
std::vector<Out> convert(const ArrayEntry& e) {
  auto cast = [](const auto& v) { return std::vector<Out>(v.begin(), v.end()); };
  switch (e.dtype) {
    case DType::kF32: return cast(from_le_bytes<float>(e.bytes));
    case DType::kF64: return cast(from_le_bytes<double>(e.bytes));
    case DType::kI32: return cast(from_le_bytes<int32_t>(e.bytes));
    case DType::kI64: return cast(from_le_bytes<int64_t>(e.bytes));
    case DType::kU8: return cast(e.bytes);
  }
  return {};
}

int64_t product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw Error("corrupt-archive", "negative dimension");
    n *= d;
  }
  return n;
}

}  // namespace

const char* dtype_name(DType t) {
  switch (t) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI32: return "i32";
    case DType::kI64: return "i64";
    case DType::kU8: return "u8";
  }
  return "?";
}

size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32:
    case DType::kI32: return 4;
    case DType::kF64:
    case DType::kI64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

int64_t ArrayEntry::element_count() const { return product(shape); }

ArrayEntry ArrayEntry::from_f32(std::string name, std::vector<int64_t> shape, std::span<const float> data) {
  if (product(shape) != static_cast<int64_t>(data.size())) throw Error("shape-mismatch", name);
  return {std::move(name), std::move(shape), DType::kF32, to_le_bytes(data)};
}
ArrayEntry ArrayEntry::from_f64(std::string name, std::vector<int64_t> shape, std::span<const double> data) {
  if (product(shape) != static_cast<int64_t>(data.size())) throw Error("shape-mismatch", name);
  return {std::move(name), std::move(shape), DType::kF64, to_le_bytes(data)};
}
ArrayEntry ArrayEntry::from_i64(std::string name, std::vector<int64_t> shape, std::span<const int64_t> data) {
  if (product(shape) != static_cast<int64_t>(data.size())) throw Error("shape-mismatch", name);
  return {std::move(name), std::move(shape), DType::kI64, to_le_bytes(data)};
}
ArrayEntry ArrayEntry::from_i32(std::string name, std::vector<int64_t> shape, std::span<const int32_t> data) {
  if (product(shape) != static_cast<int64_t>(data.size())) throw Error("shape-mismatch", name);
  return {std::move(name), std::move(shape), DType::kI32, to_le_bytes(data)};
}

std::vector<float> ArrayEntry::to_f32() const { return convert<float>(*this); }
std::vector<double> ArrayEntry::to_f64() const { return convert<double>(*this); }
std::vector<int64_t> ArrayEntry::to_i64() const {
  if (dtype == DType::kF32 || dtype == DType::kF64) throw Error("bad-dtype", name + " is not an integer array");
  return convert<int64_t>(*this);
}

const ArrayEntry* Archive::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const ArrayEntry& Archive::at(const std::string& name) const {
  if (const auto* e = find(name)) return *e;
  throw Error("missing-entry", name);
}

void Archive::add(ArrayEntry entry) {
  for (auto& e : entries) {
    if (e.name == entry.name) {
      e = std::move(entry);
      return;
    }
  }
  entries.push_back(std::move(entry));
}

bool is_known_format(const std::string& tag) {
  static const std::set<std::string> known = {kFormatVq,    kFormatMasked,  kFormatRefiner, kFormatExtractor,
                                              kFormatStats, kFormatDataset, kFormatClip,    kFormatMusic};
  return known.contains(tag);
}

void write_archive(const Archive& archive, const std::filesystem::path& dir) {
  if (!is_known_format(archive.format)) throw Error("unsupported-format", archive.format);
  std::set<std::string> names;
  for (const auto& e : archive.entries) {
    if (!names.insert(e.name).second) throw Error("duplicate-entry", e.name);
    if (static_cast<int64_t>(e.bytes.size()) != e.element_count() * static_cast<int64_t>(dtype_size(e.dtype))) {
      throw Error("corrupt-archive", "payload length of " + e.name + " does not match its shape");
    }
  }
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = archive.format;
  manifest["manifest_version"] = kManifestVersion;
  manifest["byte_order"] = "little";
  manifest["metadata"] = archive.metadata;
  manifest["entries"] = nlohmann::json::array();
  for (size_t i = 0; i < archive.entries.size(); ++i) {
    const auto& e = archive.entries[i];
    char file[32];
    std::snprintf(file, sizeof(file), "%05zu.bin", i);
    manifest["entries"].push_back(
        {{"name", e.name}, {"shape", e.shape}, {"dtype", dtype_name(e.dtype)}, {"file", file}, {"bytes", e.bytes.size()}});
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io-error", (dir / file).string());
    out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
  }
  std::ofstream out(dir / kManifest, std::ios::trunc);
  if (!out) throw Error("io-error", (dir / kManifest).string());
  out << manifest.dump(2) << '\n';
}

Archive read_archive(const std::filesystem::path& dir, const std::string& expected_format) {
  std::ifstream in(dir / kManifest);
  if (!in) throw Error("missing-archive", dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt-archive", std::string("manifest: ") + e.what());
  }
  Archive archive;
  try {
    archive.format = manifest.at("format").get<std::string>();
    if (!is_known_format(archive.format)) throw Error("unsupported-format", archive.format);
    if (!expected_format.empty() && archive.format != expected_format) {
      throw Error("unsupported-format", "expected " + expected_format + ", found " + archive.format);
    }
    if (manifest.value("manifest_version", 0) != kManifestVersion) throw Error("unsupported-format", "manifest version");
    archive.metadata = manifest.value("metadata", nlohmann::json::object());
    std::set<std::string> names;
    for (const auto& je : manifest.at("entries")) {
      ArrayEntry e;
      e.name = je.at("name").get<std::string>();
      if (!names.insert(e.name).second) throw Error("corrupt-archive", "duplicate entry " + e.name);
      e.shape = je.at("shape").get<std::vector<int64_t>>();
      e.dtype = parse_dtype(je.at("dtype").get<std::string>());
      const auto file = dir / je.at("file").get<std::string>();
      std::ifstream pin(file, std::ios::binary);
      if (!pin) throw Error("corrupt-archive", "missing payload " + file.string());
      e.bytes.assign(std::istreambuf_iterator<char>(pin), std::istreambuf_iterator<char>());
      const auto expected = static_cast<size_t>(e.element_count()) * dtype_size(e.dtype);
      if (e.bytes.size() != expected) {
        throw Error("corrupt-archive", e.name + ": payload has " + std::to_string(e.bytes.size()) + " bytes, expected " +
                                           std::to_string(expected));
      }
      archive.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt-archive", e.what());
  }
  return archive;
}

}  // namespace duet
