#include "unigrf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "unigrf/errors.hpp"

namespace unigrf {

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U read() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return value;
  }

  std::string read_string(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint: truncated container");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::add(std::string name, std::vector<std::uint64_t> extents, std::vector<double> values) {
  std::uint64_t count = 1;
  for (auto e : extents) count *= e;
  if (count != values.size())
    throw ContractError("checkpoint: record '" + name + "' has " + std::to_string(values.size()) +
                        " values for " + std::to_string(count) + " elements");
  if (index_.count(name)) throw ContractError("checkpoint: duplicate record '" + name + "'");
  index_[name] = records_.size();
  records_.push_back({std::move(name), std::move(extents), std::move(values)});
}

bool TensorArchive::contains(const std::string& name) const { return index_.count(name) != 0; }

const TensorRecord& TensorArchive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("checkpoint: missing record '" + name + "'");
  return records_[it->second];
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint64_t>(out, records_.size());
  for (const auto& rec : records_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.name.size()));
    out.insert(out.end(), rec.name.begin(), rec.name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.extents.size()));
    for (auto e : rec.extents) put_le<std::uint64_t>(out, e);
    for (double v : rec.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

TensorArchive TensorArchive::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw DataError("checkpoint: bad magic (expected UNIGRF01)");
  std::vector<std::uint8_t> body(bytes.begin() + sizeof(kCheckpointMagic), bytes.end());
  Reader in(body);
  TensorArchive archive;
  const auto count = in.read<std::uint64_t>();
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto name_len = in.read<std::uint32_t>();
    std::string name = in.read_string(name_len);
    const auto rank = in.read<std::uint32_t>();
    std::vector<std::uint64_t> extents(rank);
    std::uint64_t elements = 1;
    for (auto& e : extents) {
      e = in.read<std::uint64_t>();
      elements *= e;
    }
    if (elements > body.size() / 8) throw DataError("checkpoint: record '" + name + "' exceeds file size");
    std::vector<double> values(elements);
    for (auto& v : values) v = std::bit_cast<double>(in.read<std::uint64_t>());
    archive.add(std::move(name), std::move(extents), std::move(values));
  }
  if (!in.at_end()) throw DataError("checkpoint: trailing bytes after last record");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("checkpoint: write failed for " + tmp.string() + " (disk full?)");
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace unigrf
