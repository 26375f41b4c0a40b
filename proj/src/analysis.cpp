#include "eisam/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <thread>

#include "eisam/errors.hpp"
#include "eisam/rng.hpp"

namespace eisam {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Batch sub_batch(const Batch& b, std::size_t begin, std::size_t end) {
  Batch out;
  out.prefixes.assign(b.prefixes.begin() + begin, b.prefixes.begin() + end);
  out.targets.assign(b.targets.begin() + begin, b.targets.begin() + end);
  return out;
}

}  // namespace

std::string to_string(Scope s) {
  switch (s) {
    case Scope::Overall: return "overall";
    case Scope::Head: return "head";
    case Scope::Tail: return "tail";
  }
  return "?";
}

Scope parse_scope(const std::string& name) {
  if (name == "overall") return Scope::Overall;
  if (name == "head") return Scope::Head;
  if (name == "tail") return Scope::Tail;
  throw InvalidConfig("unknown scope '" + name + "'");
}

Batch scope_batch(const SequenceDataset& ds, const FrequencyTable& table, Scope scope) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < ds.size(); ++k) {
    const auto t = ds.examples[k].target;
    const bool head = table.is_head.at(t);
    if (scope == Scope::Overall || (scope == Scope::Head) == head) idx.push_back(k);
  }
  if (idx.empty()) throw EmptyScope("no example in scope '" + to_string(scope) + "'");
  return make_batch(ds, idx);
}

// ---------------------------------------------------------------------------

FixedLoss::FixedLoss(const Objective& objective, Batch batch, std::vector<double> sample_weights,
                     std::size_t chunk)
    : objective_(&objective), batch_(std::move(batch)), weights_(std::move(sample_weights)),
      chunk_(std::max<std::size_t>(chunk, 1)) {
  if (weights_.size() != batch_.size()) throw DimensionMismatch("one weight per example required");
}

double FixedLoss::value(std::span<const double> theta) const {
  double acc = 0.0;
  for (std::size_t begin = 0; begin < batch_.size(); begin += chunk_) {
    const std::size_t end = std::min(batch_.size(), begin + chunk_);
    const auto losses = objective_->losses(theta, sub_batch(batch_, begin, end));
    for (std::size_t k = begin; k < end; ++k) acc += weights_[k] * losses[k - begin];
  }
  return acc;
}

std::vector<double> FixedLoss::gradient(std::span<const double> theta) const {
  std::vector<double> g(objective_->dim(), 0.0);
  for (std::size_t begin = 0; begin < batch_.size(); begin += chunk_) {
    const std::size_t end = std::min(batch_.size(), begin + chunk_);
    std::vector<std::vector<double>> sets{
        std::vector<double>(weights_.begin() + begin, weights_.begin() + end)};
    const auto ev = objective_->evaluate(theta, sub_batch(batch_, begin, end), sets);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += ev.grads[0][j];
  }
  return g;
}

FixedLoss weighted_loss(const Objective& objective, Batch batch, const ItemWeights& weights) {
  auto w = weighted_sample_weights(batch, weights, Estimator::Grouped);
  return FixedLoss(objective, std::move(batch), std::move(w));
}

FixedLoss mean_loss(const Objective& objective, Batch batch) {
  if (batch.size() == 0) throw EmptyScope("empty example set");
  std::vector<double> w(batch.size(), 1.0 / static_cast<double>(batch.size()));
  return FixedLoss(objective, std::move(batch), std::move(w));
}

// ---------------------------------------------------------------------------

double default_hvp_step(std::span<const double> theta) {
  return 1e-4 * std::max(1.0, norm2(theta));
}

std::vector<double> hvp_fd(const GradientFn& grad, std::span<const double> theta,
                           std::span<const double> v, double h) {
  if (!(h > 0.0)) throw DomainError("HVP step must be positive");
  if (v.size() != theta.size()) throw DimensionMismatch("probe has wrong dimension");
  std::vector<double> up(theta.begin(), theta.end());
  std::vector<double> down(theta.begin(), theta.end());
  for (std::size_t j = 0; j < up.size(); ++j) {
    up[j] += h * v[j];
    down[j] -= h * v[j];
  }
  const auto g_up = grad(up);
  const auto g_down = grad(down);
  std::vector<double> out(theta.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (g_up[j] - g_down[j]) / (2.0 * h);
  return out;
}

TraceEstimate hutchinson_trace(const GradientFn& grad, std::span<const double> theta,
                               int n_probes, std::uint64_t seed, double h, int jobs) {
  if (n_probes < 1) throw InvalidConfig("need at least one probe");
  if (h <= 0.0) h = default_hvp_step(theta);
  TraceEstimate out;
  out.n_probes = n_probes;
  out.samples.assign(n_probes, 0.0);

  auto run_probe = [&](int p) {
    Engine eng(mix_seed(seed, static_cast<std::uint64_t>(p)));
    std::vector<double> v(theta.size());
    for (auto& x : v) x = rademacher(eng);
    out.samples[p] = dot(v, hvp_fd(grad, theta, v, h));
  };
  const int workers = std::clamp(jobs, 1, n_probes);
  if (workers == 1) {
    for (int p = 0; p < n_probes; ++p) run_probe(p);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int p = w; p < n_probes; p += workers) run_probe(p);
      });
    }
    for (auto& t : pool) t.join();
  }

  double sum = 0.0;
  for (double s : out.samples) sum += s;
  out.estimate = sum / n_probes;
  if (n_probes > 1) {
    double ss = 0.0;
    for (double s : out.samples) ss += (s - out.estimate) * (s - out.estimate);
    out.std_error = std::sqrt(ss / (n_probes - 1) / n_probes);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::pair<std::vector<double>, std::vector<double>> landscape_directions(
    std::span<const double> theta, std::uint64_t seed,
    std::span<const std::pair<std::size_t, std::size_t>> row_blocks) {
  const std::size_t d = theta.size();
  if (d < 2) throw DimensionMismatch("landscape needs at least two parameters");
  Engine eng(mix_seed(seed, 0x1a2d));
  std::vector<double> d1(d), d2(d);
  for (auto& x : d1) x = standard_normal(eng);
  for (auto& x : d2) x = standard_normal(eng);

  const double n1 = norm2(d1);
  for (auto& x : d1) x /= n1;
  const double proj = dot(d1, d2);
  for (std::size_t j = 0; j < d; ++j) d2[j] -= proj * d1[j];
  const double n2 = norm2(d2);
  for (auto& x : d2) x /= n2;

  for (const auto& [offset, len] : row_blocks) {
    if (offset + len > d) throw DimensionMismatch("row block exceeds parameter vector");
    const auto seg_theta = theta.subspan(offset, len);
    const double target = norm2(seg_theta);
    for (auto* dir : {&d1, &d2}) {
      std::span<double> seg(dir->data() + offset, len);
      const double cur = norm2(seg);
      const double scale = cur > 0.0 ? target / cur : 0.0;
      for (auto& x : seg) x *= scale;
    }
  }
  return {std::move(d1), std::move(d2)};
}

LandscapeGrid landscape_grid(const FixedLoss& loss, std::span<const double> theta,
                             std::vector<double> dir1, std::vector<double> dir2,
                             double half_width, int resolution) {
  if (resolution < 3 || resolution % 2 == 0) throw InvalidConfig("resolution must be odd and >= 3");
  if (!(half_width > 0.0)) throw InvalidConfig("grid half-width must be positive");
  if (dir1.size() != theta.size() || dir2.size() != theta.size()) {
    throw DimensionMismatch("direction has wrong dimension");
  }
  LandscapeGrid g;
  g.dir1 = std::move(dir1);
  g.dir2 = std::move(dir2);
  const int span = resolution - 1;
  for (int k = 0; k < resolution; ++k) {
    // Exact zero at the centre index.
    const double a = half_width * static_cast<double>(2 * k - span) / static_cast<double>(span);
    g.alphas.push_back(a);
    g.betas.push_back(a);
  }
  std::vector<double> point(theta.size());
  g.values.assign(resolution, std::vector<double>(resolution, 0.0));
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      for (std::size_t j = 0; j < point.size(); ++j) {
        point[j] = theta[j] + g.alphas[r] * g.dir1[j] + g.betas[c] * g.dir2[j];
      }
      g.values[r][c] = loss.value(point);
    }
  }
  return g;
}

LandscapeGrid landscape_slice(const Objective& objective, std::span<const double> theta,
                              const SequenceDataset& ds, const FrequencyTable& table, Scope scope,
                              double half_width, int resolution, std::uint64_t seed,
                              std::span<const std::pair<std::size_t, std::size_t>> row_blocks) {
  auto loss = mean_loss(objective, scope_batch(ds, table, scope));
  auto [d1, d2] = landscape_directions(theta, seed, row_blocks);
  auto grid = landscape_grid(loss, theta, std::move(d1), std::move(d2), half_width, resolution);
  grid.scope = scope;
  return grid;
}

void write_landscape_csv(const LandscapeGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "alpha,beta,loss\n";
  char buf[96];
  for (std::size_t r = 0; r < grid.alphas.size(); ++r) {
    for (std::size_t c = 0; c < grid.betas.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", grid.alphas[r], grid.betas[c],
                    grid.values[r][c]);
      out << buf;
    }
  }
  if (!out) throw IoError("write failure on " + path.string());
}

// ---------------------------------------------------------------------------

std::map<ItemIndex, double> empirical_item_sharpness(const Objective& objective,
                                                     std::span<const double> theta,
                                                     const SequenceDataset& ds,
                                                     const ItemWeights& weights, double rho) {
  if (!(rho >= 0.0)) throw DomainError("rho must be >= 0");
  const auto batch = make_batch(ds);
  if (batch.size() == 0) throw EmptyDataset("no examples");
  const auto lw = weighted_loss(objective, batch, weights);
  const auto eps = epsilon_hat(lw.gradient(theta), rho);
  std::vector<double> shifted(theta.begin(), theta.end());
  for (std::size_t j = 0; j < shifted.size(); ++j) shifted[j] += eps[j];

  std::map<ItemIndex, std::pair<double, std::size_t>> acc;
  const std::size_t chunk = 4096;
  for (std::size_t begin = 0; begin < batch.size(); begin += chunk) {
    const std::size_t end = std::min(batch.size(), begin + chunk);
    const auto sub = sub_batch(batch, begin, end);
    const auto before = objective.losses(theta, sub);
    const auto after = objective.losses(shifted, sub);
    for (std::size_t k = 0; k < sub.size(); ++k) {
      auto& slot = acc[sub.targets[k]];
      slot.first += after[k] - before[k];
      ++slot.second;
    }
  }
  std::map<ItemIndex, double> out;
  for (const auto& [item, s] : acc) out[item] = s.first / static_cast<double>(s.second);
  return out;
}

double bw_constant(const FrequencyTable& table, const WeightingScheme& scheme, double B,
                   bool mean_one) {
  if (!(B > 0.0)) throw DomainError("loss cap B must be positive");
  const auto f = weights_for_table(scheme, table, mean_one);
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (table.freqs[i] > 0.0) acc += f[i] * table.freqs[i];
  }
  return acc * B;
}

ComplexityTerm complexity_term(const BoundInputs& in) {
  const double s = std::sqrt(in.d) + std::sqrt(2.0 * std::log(in.n));
  ComplexityTerm c;
  c.constant = 2.0 + 2.0 * in.Bw;
  c.norm_piece = 2.0 * in.d * std::log1p(in.theta_norm * in.theta_norm / (in.d * in.rho * in.rho));
  c.dim_piece = 4.0 * in.d * std::log(s);
  const double pi2 = std::numbers::pi * std::numbers::pi;
  const double inner = 1.0 + in.n * in.Bw;
  c.log_piece = 4.0 * std::log(pi2 * std::sqrt(in.n) * inner * inner / (3.0 * in.delta));
  c.total = c.constant + c.norm_piece + c.dim_piece + c.log_piece;
  return c;
}

BoundReport bound_rhs(const BoundInputs& in) {
  if (!(in.q_min > 0.0)) throw DomainError("q_min must be positive");
  if (!(in.delta > 0.0 && in.delta < 1.0)) throw DomainError("delta must lie in (0,1)");
  if (!(in.n >= 2.0)) throw DomainError("n must be >= 2");
  if (!(in.d >= 1.0)) throw DomainError("d must be >= 1");
  if (!(in.rho > 0.0)) throw DomainError("rho must be positive");
  if (!(in.lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  if (!(in.n_items >= 1.0)) throw DomainError("|I| must be >= 1");

  const double scale = 1.0 / (in.n_items * in.q_min);
  const double s = std::sqrt(in.d) + std::sqrt(2.0 * std::log(in.n));
  BoundReport r;
  r.sigma_q = in.rho / s;
  r.C = complexity_term(in);
  r.empirical = 2.0 * scale * in.J_S;
  // + 0.0 turns a signed zero (lambda = 0) into +0.
  r.curvature = -in.lambda * in.rho * in.rho * in.trace_Hw * scale / (2.0 * s * s) + 0.0;
  r.concentration = scale * 40.0 * (in.B + in.lambda * in.Bw) / (3.0 * in.n) * std::log(2.0 / in.delta);
  r.complexity = scale * in.lambda * r.C.total / in.n;
  r.total = r.empirical + r.curvature + r.concentration + r.complexity;
  r.remainder_scale = in.lambda * scale * in.d * in.rho * in.rho / (s * s);
  return r;
}

nlohmann::json to_json(const TraceEstimate& t, Scope scope) {
  return {{"estimate", t.estimate},
          {"std_error", t.std_error},
          {"n_probes", t.n_probes},
          {"scope", to_string(scope)}};
}

nlohmann::json to_json(const BoundReport& r) {
  return {{"empirical", r.empirical},
          {"curvature", r.curvature},
          {"concentration", r.concentration},
          {"complexity", r.complexity},
          {"total", r.total},
          {"sigma_q", r.sigma_q},
          {"remainder",
           {{"evaluated", false},
            {"scale", r.remainder_scale},
            {"note", "little-o remainder, reported separately and not part of total"}}},
          {"complexity_C",
           {{"constant", r.C.constant},
            {"norm_piece", r.C.norm_piece},
            {"dim_piece", r.C.dim_piece},
            {"log_piece", r.C.log_piece},
            {"total", r.C.total}}}};
}

}  // namespace eisam
