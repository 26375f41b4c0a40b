#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "eisam/data.hpp"
#include "eisam/model.hpp"
#include "eisam/rng.hpp"

namespace eisam::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("eisam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

// Random dataset with n_examples prefix/target pairs over n_items.
inline SequenceDataset random_dataset(std::size_t n_items, std::size_t n_examples,
                                      std::uint64_t seed, int max_len = 4) {
  Engine eng(seed);
  SequenceDataset ds;
  ds.max_len = max_len;
  for (std::size_t i = 0; i < n_items; ++i) ds.vocab.push_back(static_cast<std::int64_t>(i));
  for (std::size_t k = 0; k < n_examples; ++k) {
    Example ex;
    ex.user = static_cast<std::int64_t>(k);
    const auto len = 1 + uniform_index(eng, static_cast<std::uint64_t>(max_len));
    for (std::uint64_t t = 0; t < len; ++t) {
      ex.prefix.push_back(static_cast<ItemIndex>(uniform_index(eng, n_items)));
    }
    ex.target = static_cast<ItemIndex>(uniform_index(eng, n_items));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// Batch that owns the prefix storage its spans point into.
struct OwnedBatch {
  std::vector<std::vector<ItemIndex>> prefixes;
  Batch batch;

  OwnedBatch(std::vector<std::vector<ItemIndex>> p, const std::vector<ItemIndex>& targets)
      : prefixes(std::move(p)), batch(make_batch(prefixes, targets)) {}
  OwnedBatch(const OwnedBatch&) = delete;
  OwnedBatch& operator=(const OwnedBatch&) = delete;
};

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
  Engine eng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(eng, lo, hi);
  return v;
}

inline ModelParams random_params(std::size_t n_items, std::size_t d_emb, std::uint64_t seed,
                                 double scale = 0.5) {
  return ModelParams::unflatten(n_items, d_emb,
                                random_vector(n_items * (d_emb + 1), seed, -scale, scale));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
  return m;
}

inline double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

// Normwise relative error max_j |a_j - b_j| / max(||a||_inf, ||b||_inf).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  const double denom = std::max({max_abs(a), max_abs(b), 1e-300});
  return max_abs_diff(a, b) / denom;
}

}  // namespace eisam::testing
