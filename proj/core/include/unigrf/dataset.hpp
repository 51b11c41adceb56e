#pragma once

// MovieLens-style ingestion: parsing, binarisation, leave-one-out sequences,
// uniform negative sampling and the processed on-disk store.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "unigrf/rng.hpp"

namespace unigrf::data {

/// Dense item index; 0 is the padding token.
using ItemIndex = std::uint32_t;
inline constexpr ItemIndex kPadding = 0;

enum class InputFormat { dat, csv };

InputFormat parse_format(std::string_view name);
std::string_view format_name(InputFormat format);

struct InteractionRecord {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
  std::uint8_t label = 0;  // 1 iff rating > 3
};

inline std::uint8_t binarize(double rating) { return rating > 3.0 ? 1 : 0; }

/// Bijections between external ids and dense indices. Items are numbered
/// 1..|I| (0 stays padding), users 0..|U|-1, both in ascending external-id order.
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::vector<std::int64_t> user_ids, std::vector<std::int64_t> item_ids);

  std::size_t num_users() const { return user_ids_.size(); }
  std::size_t num_items() const { return item_ids_.size(); }

  std::uint32_t user_index(std::int64_t external) const;
  ItemIndex item_index(std::int64_t external) const;
  std::int64_t user_id(std::uint32_t index) const { return user_ids_.at(index); }
  std::int64_t item_id(ItemIndex index) const { return item_ids_.at(index - 1); }

  const std::vector<std::int64_t>& user_ids() const { return user_ids_; }
  const std::vector<std::int64_t>& item_ids() const { return item_ids_; }

 private:
  std::vector<std::int64_t> user_ids_;
  std::vector<std::int64_t> item_ids_;
  std::unordered_map<std::int64_t, std::uint32_t> user_lookup_;
  std::unordered_map<std::int64_t, ItemIndex> item_lookup_;
};

struct ParseReport {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::vector<std::string> malformed_samples;  // at most a handful, "line N: text"
};

struct ParsedInteractions {
  std::vector<InteractionRecord> records;  // file order
  Catalog catalog;
  ParseReport report;
};

/// Malformed rows are skipped and counted; more than 1% of rows malformed is a DataError.
ParsedInteractions parse_interactions(const std::filesystem::path& path, InputFormat format);
ParsedInteractions parse_interactions_text(std::string_view text, InputFormat format);

/// One user's training history, left-padded to a fixed length, plus the two held-out items.
struct UserSequence {
  std::uint32_t user = 0;
  std::vector<ItemIndex> items;
  std::vector<std::uint8_t> behaviors;
  std::vector<std::uint8_t> valid_mask;
  ItemIndex valid_item = kPadding;
  std::uint8_t valid_label = 0;
  ItemIndex test_item = kPadding;
  std::uint8_t test_label = 0;

  std::size_t length() const { return items.size(); }
  std::size_t num_valid() const;
  /// Position of the first non-padding slot (== length() when empty).
  std::size_t first_valid() const { return length() - num_valid(); }
};

/// Users with fewer than three interactions are dropped. Records must carry
/// ids known to `catalog`.
std::vector<UserSequence> build_sequences(std::span<const InteractionRecord> records,
                                          const Catalog& catalog, std::size_t n);

struct DatasetStats {
  std::size_t users = 0;          // after filtering
  std::size_t items = 0;          // catalog size
  std::size_t interactions = 0;   // after filtering
  std::size_t filtered_users = 0; // dropped for having < 3 interactions
  double mean_sequence_length = 0.0;
  std::size_t train_positions = 0;
};

struct Dataset {
  Catalog catalog;
  std::size_t max_len = 0;
  std::vector<UserSequence> sequences;
  /// Every item each user interacted with (sorted, unique), aligned with `sequences`.
  std::vector<std::vector<ItemIndex>> observed;
  DatasetStats stats;
};

Dataset build_dataset(const ParsedInteractions& parsed, std::size_t n);

enum class Split { valid, test };

/// The length-n history a split is evaluated on and its held-out target.
/// Validation reads the training history; test shifts the validation item in.
struct EvalCase {
  std::vector<ItemIndex> items;
  std::vector<std::uint8_t> behaviors;
  ItemIndex target = kPadding;
  std::uint8_t label = 0;
};

EvalCase eval_case(const UserSequence& seq, Split split);

/// Uniform draw without replacement from {1..num_items} \ exclude.
std::vector<ItemIndex> sample_uniform_negatives(std::size_t num_items, std::span<const ItemIndex> exclude,
                                                std::size_t count, Rng& rng);

// --- processed store ---------------------------------------------------------

struct StoreManifest {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string source_path;
  std::string source_format;
  std::string source_hash;
  std::string sequences_hash;
  DatasetStats stats;
  std::size_t malformed_rows = 0;
};

/// Writes manifest.json and sequences.bin into `dir`.
StoreManifest save_processed(const Dataset& dataset, const std::filesystem::path& dir,
                             StoreManifest manifest);
Dataset load_processed(const std::filesystem::path& dir);
StoreManifest read_manifest(const std::filesystem::path& dir);

/// FNV-1a 64 of a byte range, as 16 hex digits.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace unigrf::data
