#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eisam/analysis.hpp"
#include "eisam/data.hpp"
#include "eisam/model.hpp"
#include "eisam/optimizers.hpp"

namespace eisam {

// Single-relevant-item metrics; rank is 1-based.
double ndcg_at_k(long long rank, int k);
double hr_at_k(long long rank, int k);

// 1-based rank of `target` under descending logit, ties to the smaller id.
long long target_rank(std::span<const double> logits, ItemIndex target);

struct ScopeMetrics {
  double ndcg = 0.0;
  double hr = 0.0;
  long long n = 0;
};

struct MetricReport {
  ScopeMetrics overall;
  ScopeMetrics head;
  ScopeMetrics tail;
  int k = 10;
  std::uint64_t seed = 0;

  const ScopeMetrics& at(Scope s) const;
};

// Ranks every test target against the full vocabulary; head/tail follow the
// target's group in `table`.
MetricReport evaluate(const Recommender& model, std::span<const double> theta,
                      const SequenceDataset& test, const FrequencyTable& table, int k = 10);

nlohmann::json to_json(const MetricReport& r);

struct ExperimentConfig {
  std::vector<Variant> variants{Variant::SAM, Variant::EISAM};
  std::vector<std::uint64_t> seeds{0};
  int epochs = 3;
  std::size_t d_emb = 32;
  int k = 10;
  OptimizerConfig optimizer;  // variant field is overridden per cell
  // Tail-scope Hutchinson trace of H^w after training; 0 disables it.
  int trace_probes = 0;
  std::uint64_t trace_seed = 0;
  int jobs = 1;
};

struct ExperimentCell {
  Variant variant = Variant::Plain;
  std::uint64_t seed = 0;
  MetricReport metrics;
  std::vector<EpochSummary> epochs;
  std::optional<TraceEstimate> tail_trace;
};

struct ExperimentReport {
  std::vector<ExperimentCell> cells;  // seed-major, variants in config order

  const ExperimentCell& cell(Variant v, std::uint64_t seed) const;
  // Mean and sample std over seeds.
  std::pair<double, double> metric_stats(Variant v, Scope s, bool ndcg) const;
  double mean_epoch_seconds(Variant v) const;
  std::optional<double> mean_tail_trace(Variant v) const;
  // (EISAM - best baseline) / best baseline; nullopt without EISAM or baselines.
  std::optional<double> relative_improvement(Scope s, bool ndcg) const;

  std::vector<Variant> variants() const;
  std::vector<std::uint64_t> seeds() const;

  // Deterministic part: metrics, summaries and traces.
  nlohmann::json to_json() const;
  // Wall-clock part: seconds per epoch and ratios to SAM.
  nlohmann::json timing_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Every (variant, seed) pair starts from the same initial parameters for that
// seed. Epochs of the different variants are interleaved so per-epoch wall
// times are measured under the same machine conditions.
ExperimentReport run_experiment(const SequenceDataset& train, const SequenceDataset& test,
                                const FrequencyTable& table, const ExperimentConfig& cfg);

}  // namespace eisam
