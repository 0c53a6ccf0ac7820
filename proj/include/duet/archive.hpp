#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace duet {

// Named-array archive: a directory holding manifest.json plus one
// little-endian, row-major payload file per entry.
enum class DType { kF32, kF64, kI32, kI64, kU8 };

const char* dtype_name(DType t);
size_t dtype_size(DType t);

struct ArrayEntry {
  std::string name;
  std::vector<int64_t> shape;
  DType dtype = DType::kF32;
  std::vector<uint8_t> bytes;  // little-endian payload

  int64_t element_count() const;

  static ArrayEntry from_f32(std::string name, std::vector<int64_t> shape, std::span<const float> data);
  static ArrayEntry from_f64(std::string name, std::vector<int64_t> shape, std::span<const double> data);
  static ArrayEntry from_i64(std::string name, std::vector<int64_t> shape, std::span<const int64_t> data);
  static ArrayEntry from_i32(std::string name, std::vector<int64_t> shape, std::span<const int32_t> data);

  std::vector<float> to_f32() const;
  std::vector<double> to_f64() const;  // converts from any float/int dtype
  std::vector<int64_t> to_i64() const;  // converts from any integer dtype

  friend bool operator==(const ArrayEntry&, const ArrayEntry&) = default;
};

struct Archive {
  std::string format;
  std::vector<ArrayEntry> entries;
  nlohmann::json metadata = nlohmann::json::object();

  const ArrayEntry* find(const std::string& name) const;
  // Throws Error("missing-entry") when absent.
  const ArrayEntry& at(const std::string& name) const;
  void add(ArrayEntry entry);  // replaces an entry of the same name
};

inline constexpr const char* kFormatVq = "duet-vq-v1";
inline constexpr const char* kFormatMasked = "duet-masked-v1";
inline constexpr const char* kFormatRefiner = "duet-refiner-v1";
inline constexpr const char* kFormatExtractor = "duet-extractor-v1";
inline constexpr const char* kFormatStats = "duet-stats-v1";
inline constexpr const char* kFormatDataset = "duet-dataset-v1";
inline constexpr const char* kFormatClip = "duet-clip-v1";
inline constexpr const char* kFormatMusic = "duet-music-v1";

bool is_known_format(const std::string& tag);

void write_archive(const Archive& archive, const std::filesystem::path& dir);
// Throws Error("corrupt-archive") on manifest/payload mismatch and
// Error("unsupported-format") for unknown tags or a tag other than `expected`.
Archive read_archive(const std::filesystem::path& dir, const std::string& expected_format = {});

}  // namespace duet
