#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace eisam {

// Item ids inside a SequenceDataset are dense indices 0..|I|-1 into the
// vocabulary; `vocab[k]` is the raw id of dense item k. Raw ids are sorted
// ascending, so "smaller item id" tie-breaks agree in both spaces.
using ItemIndex = std::int32_t;

struct Interaction {
  std::int64_t user = 0;
  std::int64_t item = 0;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct InteractionLog {
  std::vector<Interaction> records;
};

struct Example {
  std::int64_t user = 0;
  std::vector<ItemIndex> prefix;
  ItemIndex target = 0;

  bool operator==(const Example&) const = default;
};

struct SequenceDataset {
  std::vector<Example> examples;
  std::vector<std::int64_t> vocab;
  int max_len = 10;

  std::size_t n_items() const { return vocab.size(); }
  std::size_t size() const { return examples.size(); }
  bool operator==(const SequenceDataset&) const = default;
};

struct FrequencyTable {
  std::vector<std::int64_t> counts;  // n_i, indexed by dense item
  std::int64_t total = 0;            // N
  std::vector<double> freqs;         // q_i = n_i / N
  std::vector<ItemIndex> head;       // sorted ascending
  std::vector<ItemIndex> tail;       // sorted ascending
  std::vector<bool> is_head;
  std::vector<std::int64_t> vocab;   // raw ids, for dumps

  std::size_t n_items() const { return counts.size(); }
  // Smallest q_i over items with n_i > 0.
  double q_min() const;
};

struct ZipfConfig {
  int n_items = 500;
  double exponent = 1.2;
  int n_sequences = 20000;
  int min_len = 2;
  int max_len = 11;
  int max_prefix = 10;  // L_max
  std::uint64_t seed = 0;
};

struct ZipfDataset {
  InteractionLog log;
  SequenceDataset sequences;
  FrequencyTable table;
};

struct DatasetSplit {
  SequenceDataset train;
  SequenceDataset val;
  SequenceDataset test;
};

InteractionLog load_interactions(const std::filesystem::path& path);
void save_interactions(const InteractionLog& log, const std::filesystem::path& path);

// Drops items with fewer than `min_count` interactions, then emits one
// (prefix -> target) example per position t >= 2 of every user's
// chronologically sorted history, keeping the last `max_len` items as prefix.
// The returned table counts targets of the emitted examples and carries the
// head/tail split.
std::pair<SequenceDataset, FrequencyTable> build_sequences(const InteractionLog& log, int max_len,
                                                           int min_count);

// Target-frequency table of a dataset over its full vocabulary, head/tail
// populated.
FrequencyTable frequency_table(const SequenceDataset& ds);

// Head = the ceil(0.2 |I|) most frequent items, count ties to the smaller id.
FrequencyTable pareto_split(FrequencyTable table);

ZipfDataset generate_zipf_dataset(const ZipfConfig& cfg);

// Per-user chronological 8:1:1 split. Val and test take round(n/10) of each
// user's latest examples; train keeps the remainder. Deterministic; `seed` is
// accepted for interface stability and does not affect the result.
DatasetSplit split_8_1_1(const SequenceDataset& ds, std::uint64_t seed = 0);

// JSON-lines: one {"user":u,"prefix":[..],"target":t} object per example,
// raw item ids.
void save_sequences(const SequenceDataset& ds, const std::filesystem::path& path);
// `vocab` lists the raw ids of the ranking universe; when empty it is inferred
// from the ids present in the file.
SequenceDataset load_sequences(const std::filesystem::path& path,
                               std::vector<std::int64_t> vocab = {}, int max_len = 10);

nlohmann::json frequency_json(const FrequencyTable& table);
void save_frequencies(const FrequencyTable& table, const std::filesystem::path& path);
FrequencyTable load_frequencies(const std::filesystem::path& path);

}  // namespace eisam
