#include "unigrf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "unigrf/checkpoint.hpp"
#include "unigrf/errors.hpp"

namespace unigrf::data {

namespace {

constexpr std::size_t kMaxMalformedSamples = 5;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

template <typename N>
bool parse_number(std::string_view s, N& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_row(std::string_view line, InputFormat format, InteractionRecord& rec) {
  const auto fields = split(line, format == InputFormat::dat ? "::" : ",");
  if (fields.size() != 4) return false;
  if (!parse_number(fields[0], rec.user_id) || !parse_number(fields[1], rec.item_id) ||
      !parse_number(fields[2], rec.rating) || !parse_number(fields[3], rec.timestamp))
    return false;
  if (!(rec.rating >= 0.5 && rec.rating <= 5.0)) return false;
  rec.label = binarize(rec.rating);
  return true;
}

std::string to_hex(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return s;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

InputFormat parse_format(std::string_view name) {
  if (name == "dat") return InputFormat::dat;
  if (name == "csv") return InputFormat::csv;
  throw ConfigError("unknown input format '" + std::string(name) + "' (expected dat or csv)");
}

std::string_view format_name(InputFormat format) { return format == InputFormat::dat ? "dat" : "csv"; }

// --- Catalog -------------------------------------------------------------------

Catalog::Catalog(std::vector<std::int64_t> user_ids, std::vector<std::int64_t> item_ids)
    : user_ids_(std::move(user_ids)), item_ids_(std::move(item_ids)) {
  for (std::size_t i = 0; i < user_ids_.size(); ++i) {
    if (!user_lookup_.emplace(user_ids_[i], static_cast<std::uint32_t>(i)).second)
      throw DataError("catalog: duplicate user id " + std::to_string(user_ids_[i]));
  }
  for (std::size_t i = 0; i < item_ids_.size(); ++i) {
    if (!item_lookup_.emplace(item_ids_[i], static_cast<ItemIndex>(i + 1)).second)
      throw DataError("catalog: duplicate item id " + std::to_string(item_ids_[i]));
  }
}

std::uint32_t Catalog::user_index(std::int64_t external) const {
  auto it = user_lookup_.find(external);
  if (it == user_lookup_.end()) throw DataError("catalog: unknown user id " + std::to_string(external));
  return it->second;
}

ItemIndex Catalog::item_index(std::int64_t external) const {
  auto it = item_lookup_.find(external);
  if (it == item_lookup_.end()) throw DataError("catalog: unknown item id " + std::to_string(external));
  return it->second;
}

// --- parsing -------------------------------------------------------------------

ParsedInteractions parse_interactions_text(std::string_view text, InputFormat format) {
  ParsedInteractions out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool header_pending = format == InputFormat::csv;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (header_pending) {
      header_pending = false;
      if (line.rfind("userId", 0) == 0) continue;
    }
    ++out.report.rows;
    InteractionRecord rec;
    if (parse_row(line, format, rec)) {
      out.records.push_back(rec);
    } else {
      ++out.report.malformed;
      if (out.report.malformed_samples.size() < kMaxMalformedSamples)
        out.report.malformed_samples.push_back("line " + std::to_string(line_no) + ": " + std::string(line));
    }
  }
  if (out.report.rows > 0 && out.report.malformed * 100 > out.report.rows) {
    std::string msg = "too many malformed rows: " + std::to_string(out.report.malformed) + " of " +
                      std::to_string(out.report.rows);
    for (const auto& s : out.report.malformed_samples) msg += "\n  " + s;
    throw DataError(msg);
  }

  std::vector<std::int64_t> users, items;
  users.reserve(out.records.size());
  items.reserve(out.records.size());
  for (const auto& r : out.records) {
    users.push_back(r.user_id);
    items.push_back(r.item_id);
  }
  auto uniq = [](std::vector<std::int64_t>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(users);
  uniq(items);
  out.catalog = Catalog(std::move(users), std::move(items));
  return out;
}

ParsedInteractions parse_interactions(const std::filesystem::path& path, InputFormat format) {
  const auto bytes = read_bytes(path);
  return parse_interactions_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                                 format);
}

// --- sequences -----------------------------------------------------------------

std::size_t UserSequence::num_valid() const {
  return static_cast<std::size_t>(std::count(valid_mask.begin(), valid_mask.end(), std::uint8_t{1}));
}

namespace {

std::vector<std::vector<std::size_t>> group_by_user(std::span<const InteractionRecord> records,
                                                    const Catalog& catalog) {
  std::vector<std::vector<std::size_t>> by_user(catalog.num_users());
  for (std::size_t i = 0; i < records.size(); ++i)
    by_user[catalog.user_index(records[i].user_id)].push_back(i);
  for (auto& rows : by_user) {
    // stable: equal timestamps keep file order
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
  }
  return by_user;
}

UserSequence make_sequence(std::uint32_t user, std::span<const InteractionRecord> records,
                           std::span<const std::size_t> rows, const Catalog& catalog, std::size_t n) {
  UserSequence seq;
  seq.user = user;
  seq.items.assign(n, kPadding);
  seq.behaviors.assign(n, 0);
  seq.valid_mask.assign(n, 0);
  const std::size_t total = rows.size();
  const auto& test = records[rows[total - 1]];
  const auto& valid = records[rows[total - 2]];
  seq.test_item = catalog.item_index(test.item_id);
  seq.test_label = test.label;
  seq.valid_item = catalog.item_index(valid.item_id);
  seq.valid_label = valid.label;

  const std::size_t train = total - 2;
  const std::size_t kept = std::min(train, n);
  for (std::size_t k = 0; k < kept; ++k) {
    const auto& rec = records[rows[train - kept + k]];
    const std::size_t slot = n - kept + k;
    seq.items[slot] = catalog.item_index(rec.item_id);
    seq.behaviors[slot] = rec.label;
    seq.valid_mask[slot] = 1;
  }
  return seq;
}

}  // namespace

std::vector<UserSequence> build_sequences(std::span<const InteractionRecord> records, const Catalog& catalog,
                                          std::size_t n) {
  if (n < 3) throw ContractError("build_sequences: n must be at least 3");
  const auto by_user = group_by_user(records, catalog);
  std::vector<UserSequence> out;
  for (std::uint32_t u = 0; u < by_user.size(); ++u) {
    if (by_user[u].size() < 3) continue;
    out.push_back(make_sequence(u, records, by_user[u], catalog, n));
  }
  return out;
}

Dataset build_dataset(const ParsedInteractions& parsed, std::size_t n) {
  if (n < 3) throw ContractError("build_dataset: n must be at least 3");
  Dataset ds;
  ds.catalog = parsed.catalog;
  ds.max_len = n;
  const auto by_user = group_by_user(parsed.records, parsed.catalog);
  for (std::uint32_t u = 0; u < by_user.size(); ++u) {
    const auto& rows = by_user[u];
    if (rows.size() < 3) {
      ++ds.stats.filtered_users;
      continue;
    }
    ds.sequences.push_back(make_sequence(u, parsed.records, rows, parsed.catalog, n));
    std::vector<ItemIndex> seen;
    seen.reserve(rows.size());
    for (auto r : rows) seen.push_back(parsed.catalog.item_index(parsed.records[r].item_id));
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    ds.observed.push_back(std::move(seen));
    ds.stats.interactions += rows.size();
    ds.stats.train_positions += ds.sequences.back().num_valid();
  }
  ds.stats.users = ds.sequences.size();
  ds.stats.items = parsed.catalog.num_items();
  ds.stats.mean_sequence_length =
      ds.stats.users ? static_cast<double>(ds.stats.interactions) / static_cast<double>(ds.stats.users) : 0.0;
  return ds;
}

EvalCase eval_case(const UserSequence& seq, Split split) {
  EvalCase c;
  if (split == Split::valid) {
    c.items = seq.items;
    c.behaviors = seq.behaviors;
    c.target = seq.valid_item;
    c.label = seq.valid_label;
    return c;
  }
  // test: drop the oldest slot, append the validation interaction.
  const std::size_t n = seq.length();
  c.items.assign(seq.items.begin() + 1, seq.items.end());
  c.behaviors.assign(seq.behaviors.begin() + 1, seq.behaviors.end());
  c.items.push_back(seq.valid_item);
  c.behaviors.push_back(seq.valid_label);
  c.items.resize(n);
  c.behaviors.resize(n);
  c.target = seq.test_item;
  c.label = seq.test_label;
  return c;
}

// --- negative sampling -----------------------------------------------------------

std::vector<ItemIndex> sample_uniform_negatives(std::size_t num_items, std::span<const ItemIndex> exclude,
                                                std::size_t count, Rng& rng) {
  std::vector<ItemIndex> blocked(exclude.begin(), exclude.end());
  std::sort(blocked.begin(), blocked.end());
  blocked.erase(std::unique(blocked.begin(), blocked.end()), blocked.end());
  std::size_t blocked_real = 0;
  for (auto b : blocked) blocked_real += (b >= 1 && b <= num_items) ? 1 : 0;
  const std::size_t available = num_items - blocked_real;
  if (count > available)
    throw ContractError("sample_uniform_negatives: requested " + std::to_string(count) + " of " +
                        std::to_string(available) + " available items");
  std::vector<ItemIndex> out;
  if (count == 0) return out;
  out.reserve(count);
  auto is_blocked = [&](ItemIndex i) { return std::binary_search(blocked.begin(), blocked.end(), i); };

  if (available >= 2 * count) {
    // Rejection: each accepted draw is uniform over the remaining pool.
    std::uniform_int_distribution<std::size_t> dist(1, num_items);
    std::vector<ItemIndex> taken;
    while (out.size() < count) {
      const auto cand = static_cast<ItemIndex>(dist(rng));
      if (is_blocked(cand)) continue;
      auto pos = std::lower_bound(taken.begin(), taken.end(), cand);
      if (pos != taken.end() && *pos == cand) continue;
      taken.insert(pos, cand);
      out.push_back(cand);
    }
    return out;
  }
  // Dense pool: partial Fisher-Yates over the complement.
  std::vector<ItemIndex> pool;
  pool.reserve(available);
  for (ItemIndex i = 1; i <= num_items; ++i)
    if (!is_blocked(i)) pool.push_back(i);
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> dist(k, pool.size() - 1);
    std::swap(pool[k], pool[dist(rng)]);
    out.push_back(pool[k]);
  }
  return out;
}

// --- processed store ---------------------------------------------------------------

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return to_hex(h);
}

std::string file_hash(const std::filesystem::path& path) { return fnv1a_hex(read_bytes(path)); }

namespace {

TensorArchive to_archive(const Dataset& ds) {
  TensorArchive ar;
  const std::size_t users = ds.sequences.size();
  const std::size_t n = ds.max_len;
  auto as_doubles = [](const auto& v) { return std::vector<double>(v.begin(), v.end()); };
  ar.add("catalog/user_ids", {ds.catalog.num_users()}, as_doubles(ds.catalog.user_ids()));
  ar.add("catalog/item_ids", {ds.catalog.num_items()}, as_doubles(ds.catalog.item_ids()));
  std::vector<double> user(users), items, behaviors, held(users * 4);
  items.reserve(users * n);
  behaviors.reserve(users * n);
  for (std::size_t u = 0; u < users; ++u) {
    const auto& s = ds.sequences[u];
    user[u] = s.user;
    items.insert(items.end(), s.items.begin(), s.items.end());
    behaviors.insert(behaviors.end(), s.behaviors.begin(), s.behaviors.end());
    held[u * 4 + 0] = s.valid_item;
    held[u * 4 + 1] = s.valid_label;
    held[u * 4 + 2] = s.test_item;
    held[u * 4 + 3] = s.test_label;
  }
  ar.add("sequences/user", {users}, std::move(user));
  ar.add("sequences/items", {users, n}, std::move(items));
  ar.add("sequences/behaviors", {users, n}, std::move(behaviors));
  ar.add("sequences/held_out", {users, 4}, std::move(held));
  std::vector<double> offsets{0.0}, observed;
  for (const auto& o : ds.observed) {
    observed.insert(observed.end(), o.begin(), o.end());
    offsets.push_back(static_cast<double>(observed.size()));
  }
  const std::uint64_t num_offsets = offsets.size(), num_observed = observed.size();
  ar.add("observed/offsets", {num_offsets}, std::move(offsets));
  ar.add("observed/items", {num_observed}, std::move(observed));
  return ar;
}

nlohmann::json manifest_json(const StoreManifest& m) {
  return {
      {"format_version", 1},
      {"n", m.n},
      {"seed", m.seed},
      {"users", m.stats.users},
      {"items", m.stats.items},
      {"interactions", m.stats.interactions},
      {"filtered_users", m.stats.filtered_users},
      {"mean_sequence_length", m.stats.mean_sequence_length},
      {"split_counts", {{"train_positions", m.stats.train_positions}, {"valid", m.stats.users}, {"test", m.stats.users}}},
      {"malformed_rows", m.malformed_rows},
      {"source", {{"path", m.source_path}, {"format", m.source_format}, {"hash", m.source_hash}}},
      {"sequences_hash", m.sequences_hash},
  };
}

}  // namespace

StoreManifest save_processed(const Dataset& dataset, const std::filesystem::path& dir, StoreManifest manifest) {
  std::filesystem::create_directories(dir);
  const auto archive = to_archive(dataset);
  manifest.n = dataset.max_len;
  manifest.stats = dataset.stats;
  manifest.sequences_hash = fnv1a_hex(archive.serialize());
  archive.save(dir / "sequences.bin");
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << manifest_json(manifest).dump(2) << '\n';
  if (!out) throw DataError("write failed for manifest.json");
  return manifest;
}

StoreManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest.json: ") + e.what());
  }
  StoreManifest m;
  m.n = j.at("n").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.stats.users = j.at("users").get<std::size_t>();
  m.stats.items = j.at("items").get<std::size_t>();
  m.stats.interactions = j.at("interactions").get<std::size_t>();
  m.stats.filtered_users = j.at("filtered_users").get<std::size_t>();
  m.stats.mean_sequence_length = j.at("mean_sequence_length").get<double>();
  m.stats.train_positions = j.at("split_counts").at("train_positions").get<std::size_t>();
  m.malformed_rows = j.at("malformed_rows").get<std::size_t>();
  m.source_path = j.at("source").at("path").get<std::string>();
  m.source_format = j.at("source").at("format").get<std::string>();
  m.source_hash = j.at("source").at("hash").get<std::string>();
  m.sequences_hash = j.at("sequences_hash").get<std::string>();
  return m;
}

Dataset load_processed(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  const auto ar = TensorArchive::load(dir / "sequences.bin");
  auto ints = [](const std::vector<double>& v) {
    return std::vector<std::int64_t>(v.begin(), v.end());
  };
  Dataset ds;
  ds.catalog = Catalog(ints(ar.get("catalog/user_ids").values), ints(ar.get("catalog/item_ids").values));
  const auto& items_rec = ar.get("sequences/items");
  if (items_rec.extents.size() != 2) throw DataError("sequences/items must be rank 2");
  const std::size_t users = items_rec.extents[0];
  const std::size_t n = items_rec.extents[1];
  ds.max_len = n;
  const auto& user = ar.get("sequences/user").values;
  const auto& items = items_rec.values;
  const auto& behaviors = ar.get("sequences/behaviors").values;
  const auto& held = ar.get("sequences/held_out").values;
  const auto& offsets = ar.get("observed/offsets").values;
  const auto& observed = ar.get("observed/items").values;
  if (user.size() != users || behaviors.size() != users * n || held.size() != users * 4 ||
      offsets.size() != users + 1)
    throw DataError("processed store arrays are inconsistent in " + dir.string());
  for (std::size_t u = 0; u < users; ++u) {
    UserSequence s;
    s.user = static_cast<std::uint32_t>(user[u]);
    s.items.resize(n);
    s.behaviors.resize(n);
    s.valid_mask.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      s.items[k] = static_cast<ItemIndex>(items[u * n + k]);
      s.behaviors[k] = static_cast<std::uint8_t>(behaviors[u * n + k]);
      s.valid_mask[k] = s.items[k] != kPadding ? 1 : 0;
    }
    s.valid_item = static_cast<ItemIndex>(held[u * 4 + 0]);
    s.valid_label = static_cast<std::uint8_t>(held[u * 4 + 1]);
    s.test_item = static_cast<ItemIndex>(held[u * 4 + 2]);
    s.test_label = static_cast<std::uint8_t>(held[u * 4 + 3]);
    ds.sequences.push_back(std::move(s));
    std::vector<ItemIndex> seen;
    for (auto k = static_cast<std::size_t>(offsets[u]); k < static_cast<std::size_t>(offsets[u + 1]); ++k)
      seen.push_back(static_cast<ItemIndex>(observed[k]));
    ds.observed.push_back(std::move(seen));
  }
  ds.stats = manifest.stats;
  return ds;
}

}  // namespace unigrf::data
