#include "eisam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "eisam/errors.hpp"

namespace eisam {

double ndcg_at_k(long long rank, int k) {
  if (rank < 1 || k < 1) throw DomainError("rank and K must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double hr_at_k(long long rank, int k) {
  if (rank < 1 || k < 1) throw DomainError("rank and K must be >= 1");
  return rank <= k ? 1.0 : 0.0;
}

long long target_rank(std::span<const double> logits, ItemIndex target) {
  const double zt = logits[target];
  long long rank = 1;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (logits[j] > zt || (logits[j] == zt && static_cast<ItemIndex>(j) < target)) ++rank;
  }
  return rank;
}

const ScopeMetrics& MetricReport::at(Scope s) const {
  switch (s) {
    case Scope::Head: return head;
    case Scope::Tail: return tail;
    case Scope::Overall: break;
  }
  return overall;
}

MetricReport evaluate(const Recommender& model, std::span<const double> theta,
                      const SequenceDataset& test, const FrequencyTable& table, int k) {
  if (test.examples.empty()) throw EmptyDataset("test set is empty");
  if (k < 1) throw DomainError("K must be >= 1");
  double sum_ndcg[2] = {0.0, 0.0};
  double sum_hr[2] = {0.0, 0.0};
  long long count[2] = {0, 0};
  for (const auto& ex : test.examples) {
    const auto logits = model.score_all(theta, ex.prefix);
    const auto rank = target_rank(logits, ex.target);
    const int g = table.is_head.at(ex.target) ? 0 : 1;
    sum_ndcg[g] += ndcg_at_k(rank, k);
    sum_hr[g] += hr_at_k(rank, k);
    ++count[g];
  }
  auto finish = [](double s, long long n) { return n > 0 ? s / static_cast<double>(n) : 0.0; };
  MetricReport r;
  r.k = k;
  r.head = {finish(sum_ndcg[0], count[0]), finish(sum_hr[0], count[0]), count[0]};
  r.tail = {finish(sum_ndcg[1], count[1]), finish(sum_hr[1], count[1]), count[1]};
  const long long n = count[0] + count[1];
  r.overall = {finish(sum_ndcg[0] + sum_ndcg[1], n), finish(sum_hr[0] + sum_hr[1], n), n};
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  for (auto s : {Scope::Overall, Scope::Head, Scope::Tail}) {
    const auto& m = r.at(s);
    j[to_string(s)] = {{"ndcg_at_k", m.ndcg}, {"hr_at_k", m.hr}, {"n_examples", m.n}};
  }
  j["K"] = r.k;
  j["seed"] = r.seed;
  return j;
}

// ---------------------------------------------------------------------------

const ExperimentCell& ExperimentReport::cell(Variant v, std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.variant == v && c.seed == seed) return c;
  }
  throw InvalidConfig("no experiment cell for " + to_string(v) + " seed " + std::to_string(seed));
}

std::vector<Variant> ExperimentReport::variants() const {
  std::vector<Variant> out;
  for (const auto& c : cells) {
    if (std::find(out.begin(), out.end(), c.variant) == out.end()) out.push_back(c.variant);
  }
  return out;
}

std::vector<std::uint64_t> ExperimentReport::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& c : cells) {
    if (std::find(out.begin(), out.end(), c.seed) == out.end()) out.push_back(c.seed);
  }
  return out;
}

std::pair<double, double> ExperimentReport::metric_stats(Variant v, Scope s, bool ndcg) const {
  std::vector<double> xs;
  for (const auto& c : cells) {
    if (c.variant != v) continue;
    const auto& m = c.metrics.at(s);
    xs.push_back(ndcg ? m.ndcg : m.hr);
  }
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  if (xs.size() > 1) {
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
  }
  return {mean, std::sqrt(var)};
}

double ExperimentReport::mean_epoch_seconds(Variant v) const {
  double acc = 0.0;
  long long n = 0;
  for (const auto& c : cells) {
    if (c.variant != v) continue;
    for (const auto& e : c.epochs) {
      acc += e.wall_seconds;
      ++n;
    }
  }
  return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

std::optional<double> ExperimentReport::mean_tail_trace(Variant v) const {
  double acc = 0.0;
  int n = 0;
  for (const auto& c : cells) {
    if (c.variant == v && c.tail_trace) {
      acc += c.tail_trace->estimate;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / n;
}

std::optional<double> ExperimentReport::relative_improvement(Scope s, bool ndcg) const {
  const auto vs = variants();
  if (std::find(vs.begin(), vs.end(), Variant::EISAM) == vs.end()) return std::nullopt;
  std::optional<double> best;
  for (auto v : vs) {
    if (v == Variant::EISAM) continue;
    const double m = metric_stats(v, s, ndcg).first;
    if (!best || m > *best) best = m;
  }
  if (!best || *best == 0.0) return std::nullopt;
  return (metric_stats(Variant::EISAM, s, ndcg).first - *best) / *best;
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  nlohmann::json per_variant = nlohmann::json::object();
  nlohmann::json traces = nlohmann::json::object();
  for (const auto& c : cells) {
    const auto seed = std::to_string(c.seed);
    auto m = eisam::to_json(c.metrics);
    per_variant[to_string(c.variant)][seed] = {{"overall", m["overall"]},
                                               {"head", m["head"]},
                                               {"tail", m["tail"]}};
    if (c.tail_trace) traces[to_string(c.variant)][seed] = eisam::to_json(*c.tail_trace, Scope::Tail);
  }
  j["variants"] = std::move(per_variant);

  nlohmann::json summary;
  for (auto v : variants()) {
    for (auto s : {Scope::Overall, Scope::Head, Scope::Tail}) {
      const auto [nm, ns] = metric_stats(v, s, true);
      const auto [hm, hs] = metric_stats(v, s, false);
      summary["means"][to_string(v)][to_string(s)] = {
          {"ndcg_mean", nm}, {"ndcg_std", ns}, {"hr_mean", hm}, {"hr_std", hs}};
    }
    if (auto t = mean_tail_trace(v)) summary["tail_trace_mean"][to_string(v)] = *t;
  }
  for (auto s : {Scope::Overall, Scope::Head, Scope::Tail}) {
    for (bool ndcg : {true, false}) {
      const auto ri = relative_improvement(s, ndcg);
      summary["relative_improvement"][to_string(s)][ndcg ? "ndcg" : "hr"] =
          ri ? nlohmann::json(*ri) : nlohmann::json(nullptr);
    }
  }
  j["summary"] = std::move(summary);
  if (!traces.empty()) j["tail_trace"] = std::move(traces);
  return j;
}

nlohmann::json ExperimentReport::timing_json() const {
  nlohmann::json j;
  const auto vs = variants();
  const bool has_sam = std::find(vs.begin(), vs.end(), Variant::SAM) != vs.end();
  const double sam = has_sam ? mean_epoch_seconds(Variant::SAM) : 0.0;
  for (auto v : vs) {
    const double secs = mean_epoch_seconds(v);
    j["seconds_per_epoch"][to_string(v)] = secs;
    j["ratio_to_SAM"][to_string(v)] = sam > 0.0 ? nlohmann::json(secs / sam) : nlohmann::json(nullptr);
  }
  for (const auto& c : cells) {
    std::vector<double> per_epoch;
    for (const auto& e : c.epochs) per_epoch.push_back(e.wall_seconds);
    j["epochs"][to_string(c.variant)][std::to_string(c.seed)] = per_epoch;
  }
  return j;
}

void ExperimentReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,seed,scope,ndcg_at_k,hr_at_k,n_examples\n";
  char buf[160];
  for (const auto& c : cells) {
    for (auto s : {Scope::Overall, Scope::Head, Scope::Tail}) {
      const auto& m = c.metrics.at(s);
      std::snprintf(buf, sizeof buf, "%s,%llu,%s,%.17g,%.17g,%lld\n", to_string(c.variant).c_str(),
                    static_cast<unsigned long long>(c.seed), to_string(s).c_str(), m.ndcg, m.hr, m.n);
      out << buf;
    }
  }
  if (!out) throw IoError("write failure on " + path.string());
}

ExperimentReport run_experiment(const SequenceDataset& train, const SequenceDataset& test,
                                const FrequencyTable& table, const ExperimentConfig& cfg) {
  if (cfg.variants.empty()) throw InvalidConfig("experiment needs at least one variant");
  if (cfg.seeds.empty()) throw InvalidConfig("experiment needs at least one seed");
  if (cfg.epochs < 0) throw InvalidConfig("epochs must be >= 0");
  const Recommender model(train.n_items(), cfg.d_emb);

  ExperimentReport report;
  for (auto seed : cfg.seeds) {
    const auto theta0 = ModelParams::initialize(train.n_items(), cfg.d_emb, seed).flatten();
    std::vector<std::unique_ptr<Trainer>> trainers;
    for (auto v : cfg.variants) {
      auto oc = cfg.optimizer;
      oc.variant = v;
      trainers.push_back(std::make_unique<Trainer>(model, train, table, oc, theta0, seed));
    }
    std::vector<std::vector<EpochSummary>> epochs(cfg.variants.size());
    for (int e = 0; e < cfg.epochs; ++e) {
      for (std::size_t k = 0; k < trainers.size(); ++k) epochs[k].push_back(trainers[k]->run_epoch());
    }
    for (std::size_t k = 0; k < trainers.size(); ++k) {
      ExperimentCell c;
      c.variant = cfg.variants[k];
      c.seed = seed;
      c.epochs = std::move(epochs[k]);
      c.metrics = evaluate(model, trainers[k]->params(), test, table, cfg.k);
      c.metrics.seed = seed;
      if (cfg.trace_probes > 0) {
        const auto weights = ItemWeights::build(table, cfg.optimizer);
        const auto lw = weighted_loss(model, scope_batch(train, table, Scope::Tail), weights);
        c.tail_trace = hutchinson_trace([&](std::span<const double> x) { return lw.gradient(x); },
                                        trainers[k]->params(), cfg.trace_probes, cfg.trace_seed,
                                        0.0, cfg.jobs);
      }
      report.cells.push_back(std::move(c));
    }
  }
  return report;
}

}  // namespace eisam
