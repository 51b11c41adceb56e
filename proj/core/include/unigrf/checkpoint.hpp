#pragma once

// Versioned tensor container.
//
// Layout (all integers little-endian):
//   magic        8 bytes   "UNIGRF01"
//   count        u64       number of records
//   per record:
//     name_len   u32
//     name       name_len bytes, UTF-8
//     rank       u32
//     extents    rank x u64
//     payload    product(extents) x f64 (IEEE-754, little-endian)
//
// Records are written in the order given and read back in file order.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace unigrf {

inline constexpr char kCheckpointMagic[8] = {'U', 'N', 'I', 'G', 'R', 'F', '0', '1'};

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> extents;
  std::vector<double> values;
};

class TensorArchive {
 public:
  void add(std::string name, std::vector<std::uint64_t> extents, std::vector<double> values);
  bool contains(const std::string& name) const;
  const TensorRecord& get(const std::string& name) const;
  const std::vector<TensorRecord>& records() const { return records_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(const std::vector<std::uint8_t>& bytes);

  /// Writes to a temporary sibling then renames, so a crash never leaves a truncated file.
  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<TensorRecord> records_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace unigrf
