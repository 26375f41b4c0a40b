#include "eisam/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "eisam/errors.hpp"
#include "eisam/rng.hpp"

namespace eisam {

namespace {

bool parse_int(std::string_view tok, std::int64_t& out) {
  if (tok.empty()) return false;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

double FrequencyTable::q_min() const {
  double q = 1.0;
  bool any = false;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) {
      q = std::min(q, freqs[i]);
      any = true;
    }
  }
  return any ? q : 0.0;
}

InteractionLog load_interactions(const std::filesystem::path& path) {
  auto in = open_in(path);
  InteractionLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw ParseError(line_no, "expected 3 tab-separated fields, got " +
                                    std::to_string(fields.size()));
    }
    Interaction rec;
    if (!parse_int(fields[0], rec.user) || !parse_int(fields[1], rec.item) ||
        !parse_int(fields[2], rec.timestamp)) {
      throw ParseError(line_no, "non-integer field");
    }
    if (rec.user < 0 || rec.item < 0) throw ParseError(line_no, "negative id");
    log.records.push_back(rec);
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  return log;
}

void save_interactions(const InteractionLog& log, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "# user_id\titem_id\ttimestamp\n";
  for (const auto& r : log.records) {
    out << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

FrequencyTable pareto_split(FrequencyTable table) {
  const std::size_t n = table.counts.size();
  if (std::none_of(table.counts.begin(), table.counts.end(), [](auto c) { return c > 0; })) {
    throw EmptyDataset("frequency table has no item with positive count");
  }
  std::vector<ItemIndex> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ItemIndex a, ItemIndex b) {
    return table.counts[a] > table.counts[b];
  });
  const std::size_t n_head = (2 * n + 9) / 10;  // ceil(0.2 n)
  table.is_head.assign(n, false);
  for (std::size_t k = 0; k < n_head; ++k) table.is_head[order[k]] = true;
  table.head.clear();
  table.tail.clear();
  for (std::size_t i = 0; i < n; ++i) {
    (table.is_head[i] ? table.head : table.tail).push_back(static_cast<ItemIndex>(i));
  }
  return table;
}

FrequencyTable frequency_table(const SequenceDataset& ds) {
  FrequencyTable t;
  t.vocab = ds.vocab;
  t.counts.assign(ds.n_items(), 0);
  for (const auto& ex : ds.examples) ++t.counts.at(ex.target);
  t.total = static_cast<std::int64_t>(ds.examples.size());
  t.freqs.resize(t.counts.size());
  for (std::size_t i = 0; i < t.counts.size(); ++i) {
    t.freqs[i] = t.total > 0 ? static_cast<double>(t.counts[i]) / static_cast<double>(t.total) : 0.0;
  }
  return pareto_split(std::move(t));
}

std::pair<SequenceDataset, FrequencyTable> build_sequences(const InteractionLog& log, int max_len,
                                                           int min_count) {
  if (max_len < 1) throw InvalidConfig("max sequence length must be >= 1");
  if (min_count < 0) throw InvalidConfig("min_count must be >= 0");

  std::map<std::int64_t, std::int64_t> item_counts;
  for (const auto& r : log.records) ++item_counts[r.item];

  SequenceDataset ds;
  ds.max_len = max_len;
  std::unordered_map<std::int64_t, ItemIndex> dense;
  for (const auto& [item, count] : item_counts) {
    if (count >= min_count) {
      dense.emplace(item, static_cast<ItemIndex>(ds.vocab.size()));
      ds.vocab.push_back(item);
    }
  }

  std::vector<Interaction> kept;
  kept.reserve(log.records.size());
  for (const auto& r : log.records) {
    if (dense.count(r.item)) kept.push_back(r);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.item < b.item;
  });

  std::size_t begin = 0;
  while (begin < kept.size()) {
    std::size_t end = begin;
    while (end < kept.size() && kept[end].user == kept[begin].user) ++end;
    for (std::size_t t = begin + 1; t < end; ++t) {
      Example ex;
      ex.user = kept[begin].user;
      const std::size_t first = t - std::min<std::size_t>(t - begin, max_len);
      for (std::size_t k = first; k < t; ++k) ex.prefix.push_back(dense.at(kept[k].item));
      ex.target = dense.at(kept[t].item);
      ds.examples.push_back(std::move(ex));
    }
    begin = end;
  }
  if (ds.examples.empty()) throw EmptyDataset("no example survives filtering");

  auto table = frequency_table(ds);
  return {std::move(ds), std::move(table)};
}

ZipfDataset generate_zipf_dataset(const ZipfConfig& cfg) {
  if (cfg.n_items < 2) throw InvalidConfig("zipf: n_items must be >= 2");
  if (!(cfg.exponent >= 0.0) || !std::isfinite(cfg.exponent)) {
    throw InvalidConfig("zipf: exponent must be finite and >= 0");
  }
  if (cfg.n_sequences < 1) throw InvalidConfig("zipf: n_sequences must be >= 1");
  if (cfg.max_prefix < 1) throw InvalidConfig("zipf: max_prefix must be >= 1");
  if (cfg.min_len < 1 || cfg.min_len > cfg.max_len || cfg.max_len > cfg.max_prefix + 1) {
    throw InvalidConfig("zipf: need 1 <= min_len <= max_len <= max_prefix + 1");
  }

  // Item k (0-based) has popularity rank k + 1.
  std::vector<double> cdf(cfg.n_items);
  double acc = 0.0;
  for (int k = 0; k < cfg.n_items; ++k) {
    acc += std::pow(static_cast<double>(k + 1), -cfg.exponent);
    cdf[k] = acc;
  }
  for (auto& c : cdf) c /= acc;
  cdf.back() = 1.0;

  Engine eng(cfg.seed);
  ZipfDataset out;
  const auto span = static_cast<std::uint64_t>(cfg.max_len - cfg.min_len + 1);
  for (int s = 0; s < cfg.n_sequences; ++s) {
    const int len = cfg.min_len + static_cast<int>(uniform_index(eng, span));
    for (int t = 0; t < len; ++t) {
      const double u = uniform01(eng);
      const auto item = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
      out.log.records.push_back({s, std::min<std::int64_t>(item, cfg.n_items - 1), t});
    }
  }

  auto [ds, table] = build_sequences(out.log, cfg.max_prefix, 0);
  // Items never drawn still belong to the ranking universe.
  if (static_cast<int>(ds.vocab.size()) != cfg.n_items) {
    std::vector<std::int64_t> full(cfg.n_items);
    std::iota(full.begin(), full.end(), 0);
    for (auto& ex : ds.examples) {
      for (auto& p : ex.prefix) p = static_cast<ItemIndex>(ds.vocab[p]);
      ex.target = static_cast<ItemIndex>(ds.vocab[ex.target]);
    }
    ds.vocab = std::move(full);
    table = frequency_table(ds);
  }
  out.sequences = std::move(ds);
  out.table = std::move(table);
  return out;
}

DatasetSplit split_8_1_1(const SequenceDataset& ds, std::uint64_t /*seed*/) {
  if (ds.examples.size() < 10) {
    throw DatasetTooSmall("8:1:1 split needs at least 10 examples, got " +
                          std::to_string(ds.examples.size()));
  }
  DatasetSplit out;
  for (auto* part : {&out.train, &out.val, &out.test}) {
    part->vocab = ds.vocab;
    part->max_len = ds.max_len;
  }
  // Examples are grouped by user in chronological order.
  std::size_t begin = 0;
  while (begin < ds.examples.size()) {
    std::size_t end = begin;
    while (end < ds.examples.size() && ds.examples[end].user == ds.examples[begin].user) ++end;
    const std::size_t n = end - begin;
    const std::size_t n_hold = (n + 5) / 10;
    const std::size_t n_train = n - 2 * n_hold;
    for (std::size_t k = 0; k < n; ++k) {
      auto& dst = k < n_train ? out.train : (k < n_train + n_hold ? out.val : out.test);
      dst.examples.push_back(ds.examples[begin + k]);
    }
    begin = end;
  }
  return out;
}

void save_sequences(const SequenceDataset& ds, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& ex : ds.examples) {
    nlohmann::json prefix = nlohmann::json::array();
    for (auto p : ex.prefix) prefix.push_back(ds.vocab.at(p));
    nlohmann::json obj;
    obj["user"] = ex.user;
    obj["prefix"] = std::move(prefix);
    obj["target"] = ds.vocab.at(ex.target);
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

SequenceDataset load_sequences(const std::filesystem::path& path,
                               std::vector<std::int64_t> vocab, int max_len) {
  auto in = open_in(path);
  struct RawExample {
    std::int64_t user;
    std::vector<std::int64_t> prefix;
    std::int64_t target;
  };
  std::vector<RawExample> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      RawExample r;
      r.user = obj.value("user", std::int64_t{0});
      r.prefix = obj.at("prefix").get<std::vector<std::int64_t>>();
      r.target = obj.at("target").get<std::int64_t>();
      if (r.prefix.empty()) throw ParseError(line_no, "empty prefix");
      raw.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (vocab.empty()) {
    for (const auto& r : raw) {
      vocab.insert(vocab.end(), r.prefix.begin(), r.prefix.end());
      vocab.push_back(r.target);
    }
  }
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

  std::unordered_map<std::int64_t, ItemIndex> dense;
  for (std::size_t k = 0; k < vocab.size(); ++k) dense.emplace(vocab[k], static_cast<ItemIndex>(k));
  auto lookup = [&](std::int64_t id) {
    auto it = dense.find(id);
    if (it == dense.end()) throw IdOutOfRange("item " + std::to_string(id) + " not in vocabulary");
    return it->second;
  };

  SequenceDataset ds;
  ds.vocab = std::move(vocab);
  ds.max_len = max_len;
  for (const auto& r : raw) {
    Example ex;
    ex.user = r.user;
    for (auto p : r.prefix) ex.prefix.push_back(lookup(p));
    ex.target = lookup(r.target);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

nlohmann::json frequency_json(const FrequencyTable& table) {
  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t i = 0; i < table.counts.size(); ++i) {
    counts[std::to_string(table.vocab.at(i))] = table.counts[i];
  }
  nlohmann::json head = nlohmann::json::array();
  nlohmann::json tail = nlohmann::json::array();
  for (auto i : table.head) head.push_back(table.vocab.at(i));
  for (auto i : table.tail) tail.push_back(table.vocab.at(i));
  return {{"counts", std::move(counts)}, {"head", std::move(head)}, {"tail", std::move(tail)}};
}

void save_frequencies(const FrequencyTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << frequency_json(table).dump(2) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

FrequencyTable load_frequencies(const std::filesystem::path& path) {
  auto in = open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, e.what());
  }
  std::map<std::int64_t, std::int64_t> counts;
  for (const auto& [key, value] : j.at("counts").items()) {
    counts[std::stoll(key)] = value.get<std::int64_t>();
  }
  FrequencyTable t;
  std::unordered_map<std::int64_t, ItemIndex> dense;
  for (const auto& [item, count] : counts) {
    dense.emplace(item, static_cast<ItemIndex>(t.vocab.size()));
    t.vocab.push_back(item);
    t.counts.push_back(count);
    t.total += count;
  }
  for (auto c : t.counts) {
    t.freqs.push_back(t.total > 0 ? static_cast<double>(c) / static_cast<double>(t.total) : 0.0);
  }
  t.is_head.assign(t.counts.size(), false);
  for (const auto& id : j.at("head")) {
    const auto i = dense.at(id.get<std::int64_t>());
    t.head.push_back(i);
    t.is_head[i] = true;
  }
  for (const auto& id : j.at("tail")) t.tail.push_back(dense.at(id.get<std::int64_t>()));
  std::sort(t.head.begin(), t.head.end());
  std::sort(t.tail.begin(), t.tail.end());
  return t;
}

}  // namespace eisam
