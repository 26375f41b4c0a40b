#include "eisam/optimizers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "eisam/errors.hpp"
#include "eisam/rng.hpp"

namespace eisam {

namespace {

double norm2(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc);
}

std::vector<double> add(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] + b[j];
  return out;
}

std::vector<double> uniform_weights(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

double mean(std::span<const double> x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

class StepTimer {
 public:
  StepTimer() : start_(std::chrono::steady_clock::now()) {}
  long long nanos() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                                start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void check_batch_nonempty(const Batch& batch) {
  if (batch.size() == 0) throw EmptyDataset("empty batch");
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Plain: return "Plain";
    case Variant::RW: return "RW";
    case Variant::SAM: return "SAM";
    case Variant::GroupSAM: return "GroupSAM";
    case Variant::EISAM: return "EISAM";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "plain") return Variant::Plain;
  if (s == "rw") return Variant::RW;
  if (s == "sam") return Variant::SAM;
  if (s == "groupsam" || s == "group_sam") return Variant::GroupSAM;
  if (s == "eisam") return Variant::EISAM;
  throw InvalidConfig("unknown optimizer variant '" + name + "'");
}

std::string to_string(BaseOptimizer b) { return b == BaseOptimizer::SGD ? "sgd" : "adam"; }

BaseOptimizer parse_base(const std::string& name) {
  if (name == "sgd" || name == "SGD") return BaseOptimizer::SGD;
  if (name == "adam" || name == "Adam") return BaseOptimizer::Adam;
  throw InvalidConfig("unknown base optimizer '" + name + "'");
}

std::string to_string(Estimator e) { return e == Estimator::Unbiased ? "unbiased" : "grouped"; }

Estimator parse_estimator(const std::string& name) {
  if (name == "unbiased") return Estimator::Unbiased;
  if (name == "grouped") return Estimator::Grouped;
  throw InvalidConfig("unknown estimator '" + name + "'");
}

void OptimizerConfig::validate() const {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw InvalidConfig("rho must be finite and >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidConfig("lambda must be finite and >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidConfig("lr must be > 0");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps_adam > 0.0)) {
    throw InvalidConfig("invalid Adam hyperparameters");
  }
}

ItemWeights ItemWeights::build(const FrequencyTable& table, const WeightingScheme& scheme,
                               bool mean_one) {
  ItemWeights w;
  w.f = weights_for_table(scheme, table, mean_one);
  w.q = table.freqs;
  w.is_head = table.is_head;
  return w;
}

ItemWeights ItemWeights::build(const FrequencyTable& table, const OptimizerConfig& cfg) {
  return build(table, cfg.scheme, cfg.normalize_weights);
}

std::vector<double> weighted_sample_weights(const Batch& batch, const ItemWeights& weights,
                                            Estimator estimator) {
  check_batch_nonempty(batch);
  const std::size_t b = batch.size();
  std::vector<double> w(b);
  if (estimator == Estimator::Unbiased) {
    for (std::size_t k = 0; k < b; ++k) {
      const auto i = static_cast<std::size_t>(batch.targets[k]);
      if (i >= weights.q.size()) throw IdOutOfRange("target outside frequency table");
      const double q = weights.q[i];
      if (!(q > 0.0)) throw ZeroFrequencyTarget("target item has zero training frequency");
      w[k] = weights.f[i] / q / static_cast<double>(b);
    }
  } else {
    std::vector<std::size_t> in_batch(weights.q.size(), 0);
    for (auto t : batch.targets) {
      if (static_cast<std::size_t>(t) >= in_batch.size()) throw IdOutOfRange("target outside frequency table");
      ++in_batch[t];
    }
    for (std::size_t k = 0; k < b; ++k) {
      const auto i = static_cast<std::size_t>(batch.targets[k]);
      w[k] = weights.f[i] / static_cast<double>(in_batch[i]);
    }
  }
  return w;
}

WeightedLossGrad weighted_batch_loss_and_grad(const Objective& objective,
                                              std::span<const double> theta, const Batch& batch,
                                              const ItemWeights& weights, Estimator estimator) {
  std::vector<std::vector<double>> sets{weighted_sample_weights(batch, weights, estimator)};
  auto ev = objective.evaluate(theta, batch, sets);
  WeightedLossGrad out;
  for (std::size_t k = 0; k < ev.losses.size(); ++k) out.loss += sets[0][k] * ev.losses[k];
  out.grad = std::move(ev.grads.front());
  return out;
}

std::vector<double> epsilon_hat(std::span<const double> g, double rho) {
  if (rho == 0.0) return std::vector<double>(g.size(), 0.0);
  const double n = norm2(g);
  if (!std::isfinite(n)) throw NonFiniteGradient(-1, "perturbation gradient is not finite");
  if (n < 1e-12) throw ZeroGradient("gradient norm below 1e-12, perturbation undefined");
  std::vector<double> eps(g.size());
  const double scale = rho / n;
  for (std::size_t j = 0; j < g.size(); ++j) eps[j] = scale * g[j];
  return eps;
}

void base_update(OptState& state, std::vector<double>& theta, std::span<const double> total_grad,
                 const OptimizerConfig& cfg) {
  if (total_grad.size() != theta.size()) throw DimensionMismatch("gradient/parameter size mismatch");
  const long long step = state.step_count + 1;
  for (double g : total_grad) {
    if (!std::isfinite(g)) throw NonFiniteGradient(step, "non-finite gradient entry");
  }
  if (cfg.base == BaseOptimizer::SGD) {
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= cfg.lr * total_grad[j];
  } else {
    if (state.m.size() != theta.size()) {
      state.m.assign(theta.size(), 0.0);
      state.v.assign(theta.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = total_grad[j];
      state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g;
      state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = state.m[j] / bc1;
      const double v_hat = state.v[j] / bc2;
      theta[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
    }
  }
  state.step_count = step;
  for (double x : theta) {
    if (!std::isfinite(x)) throw NonFiniteGradient(step, "parameters became non-finite");
  }
}

StepReport plain_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                      const Batch& batch, const OptimizerConfig& cfg) {
  StepTimer timer;
  check_batch_nonempty(batch);
  std::vector<std::vector<double>> sets{uniform_weights(batch.size())};
  auto ev = objective.evaluate(theta, batch, sets);
  StepReport r;
  r.loss = mean(ev.losses);
  r.clamped = ev.n_clamped > 0;
  r.forward_passes = 1;
  r.backward_evals = 1;
  r.g2_norm = norm2(ev.grads[0]);
  base_update(state, theta, ev.grads[0], cfg);
  r.wall_nanos = timer.nanos();
  return r;
}

StepReport rw_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                   const Batch& batch, const ItemWeights& weights, const OptimizerConfig& cfg) {
  StepTimer timer;
  check_batch_nonempty(batch);
  const std::size_t b = batch.size();
  std::vector<double> w(b);
  for (std::size_t k = 0; k < b; ++k) w[k] = weights.f.at(batch.targets[k]);
  const double m = mean(w);
  if (m > 0.0 && std::isfinite(m)) {
    for (auto& x : w) x /= m * static_cast<double>(b);
  } else {
    w = uniform_weights(b);
  }
  std::vector<std::vector<double>> sets{w};
  auto ev = objective.evaluate(theta, batch, sets);
  StepReport r;
  r.loss = mean(ev.losses);
  for (std::size_t k = 0; k < b; ++k) r.weighted_loss += w[k] * ev.losses[k];
  r.clamped = ev.n_clamped > 0;
  r.forward_passes = 1;
  r.backward_evals = 1;
  r.grad_w_norm = norm2(ev.grads[0]);
  r.g2_norm = r.grad_w_norm;
  base_update(state, theta, ev.grads[0], cfg);
  r.wall_nanos = timer.nanos();
  return r;
}

StepReport sam_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                    const Batch& batch, const OptimizerConfig& cfg) {
  StepTimer timer;
  check_batch_nonempty(batch);
  std::vector<std::vector<double>> sets{uniform_weights(batch.size())};
  auto ev = objective.evaluate(theta, batch, sets);
  StepReport r;
  r.loss = mean(ev.losses);
  r.clamped = ev.n_clamped > 0;
  r.forward_passes = 1;
  r.backward_evals = 1;
  const auto& g = ev.grads[0];
  r.grad_w_norm = norm2(g);

  std::vector<double> total;
  std::vector<double> eps;
  try {
    eps = epsilon_hat(g, cfg.rho);
  } catch (const ZeroGradient&) {
    r.fallback = true;
  }
  if (r.fallback || cfg.rho == 0.0) {
    total = g;
  } else {
    const auto perturbed = add(theta, eps);
    auto ev1 = objective.evaluate(perturbed, batch, sets);
    r.forward_passes += 1;
    r.backward_evals += 1;
    r.clamped = r.clamped || ev1.n_clamped > 0;
    r.eps_norm = cfg.rho;
    total = std::move(ev1.grads[0]);
  }
  r.g1_norm = norm2(total);
  base_update(state, theta, total, cfg);
  r.wall_nanos = timer.nanos();
  return r;
}

StepReport group_sam_step(const Objective& objective, std::vector<double>& theta,
                          OptState& state, const Batch& batch, const ItemWeights& weights,
                          const OptimizerConfig& cfg) {
  StepTimer timer;
  check_batch_nonempty(batch);
  const std::size_t b = batch.size();

  // Weight vectors: batch mean, then the mean over each group present.
  std::vector<std::vector<double>> sets{uniform_weights(b)};
  for (bool head : {true, false}) {
    std::size_t n_group = 0;
    for (auto t : batch.targets) n_group += weights.is_head.at(t) == head;
    if (n_group == 0) continue;
    std::vector<double> w(b, 0.0);
    for (std::size_t k = 0; k < b; ++k) {
      if (weights.is_head[batch.targets[k]] == head) w[k] = 1.0 / static_cast<double>(n_group);
    }
    sets.push_back(std::move(w));
  }

  auto ev = objective.evaluate(theta, batch, sets);
  StepReport r;
  r.loss = mean(ev.losses);
  r.clamped = ev.n_clamped > 0;
  r.forward_passes = 1;
  r.backward_evals = static_cast<int>(sets.size());
  std::vector<double> total = ev.grads[0];
  r.grad_w_norm = norm2(total);

  if (cfg.rho > 0.0) {
    for (std::size_t s = 1; s < sets.size(); ++s) {
      const auto& g_group = ev.grads[s];
      std::vector<double> eps;
      try {
        eps = epsilon_hat(g_group, cfg.rho);
      } catch (const ZeroGradient&) {
        r.fallback = true;
        continue;
      }
      const auto perturbed = add(theta, eps);
      std::vector<std::vector<double>> one{sets[s]};
      auto ev_p = objective.evaluate(perturbed, batch, one);
      r.forward_passes += 1;
      r.backward_evals += 1;
      r.clamped = r.clamped || ev_p.n_clamped > 0;
      r.eps_norm = cfg.rho;
      const auto& g_pert = ev_p.grads[0];
      for (std::size_t j = 0; j < total.size(); ++j) {
        total[j] += cfg.lambda * (g_pert[j] - g_group[j]);
      }
    }
  }
  r.g1_norm = norm2(total);
  base_update(state, theta, total, cfg);
  r.wall_nanos = timer.nanos();
  return r;
}

StepReport eisam_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                      const Batch& batch, const ItemWeights& weights, const OptimizerConfig& cfg) {
  StepTimer timer;
  check_batch_nonempty(batch);

  // One forward at theta, back-propagated with the weighted and the plain
  // sample weights.
  std::vector<std::vector<double>> sets{weighted_sample_weights(batch, weights, cfg.estimator),
                                        uniform_weights(batch.size())};
  auto ev = objective.evaluate(theta, batch, sets);
  StepReport r;
  r.loss = mean(ev.losses);
  for (std::size_t k = 0; k < batch.size(); ++k) r.weighted_loss += sets[0][k] * ev.losses[k];
  r.clamped = ev.n_clamped > 0;
  r.forward_passes = 1;
  r.backward_evals = 2;
  const auto& g_w = ev.grads[0];
  const auto& g_plain = ev.grads[1];
  r.grad_w_norm = norm2(g_w);

  std::vector<double> eps;
  try {
    eps = epsilon_hat(g_w, cfg.rho);
  } catch (const ZeroGradient&) {
    r.fallback = true;
  }

  std::vector<double> total;
  if (r.fallback || cfg.rho == 0.0) {
    // With eps = 0, g1 = g_w and lambda*g1 + (g_plain - lambda*g_w) = g_plain.
    total = g_plain;
    r.g2_norm = norm2(g_plain);
  } else {
    const auto perturbed = add(theta, eps);
    std::vector<std::vector<double>> one{sets[0]};
    auto ev1 = objective.evaluate(perturbed, batch, one);
    r.forward_passes += 1;
    r.backward_evals += 1;
    r.clamped = r.clamped || ev1.n_clamped > 0;
    r.eps_norm = cfg.rho;
    const auto& g1 = ev1.grads[0];
    std::vector<double> g2(g_plain.size());
    for (std::size_t j = 0; j < g2.size(); ++j) g2[j] = g_plain[j] - cfg.lambda * g_w[j];
    total.resize(g2.size());
    for (std::size_t j = 0; j < g2.size(); ++j) total[j] = cfg.lambda * g1[j] + g2[j];
    r.g1_norm = norm2(g1);
    r.g2_norm = norm2(g2);
  }
  base_update(state, theta, total, cfg);
  r.wall_nanos = timer.nanos();
  return r;
}

StepReport optimizer_step(const Objective& objective, std::vector<double>& theta,
                          OptState& state, const Batch& batch, const ItemWeights& weights,
                          const OptimizerConfig& cfg) {
  switch (cfg.variant) {
    case Variant::Plain: return plain_step(objective, theta, state, batch, cfg);
    case Variant::RW: return rw_step(objective, theta, state, batch, weights, cfg);
    case Variant::SAM: return sam_step(objective, theta, state, batch, cfg);
    case Variant::GroupSAM: return group_sam_step(objective, theta, state, batch, weights, cfg);
    case Variant::EISAM: return eisam_step(objective, theta, state, batch, weights, cfg);
  }
  throw InvalidConfig("unknown variant");
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const Objective& objective, const SequenceDataset& train,
                 const FrequencyTable& table, OptimizerConfig cfg, std::vector<double> theta0,
                 std::uint64_t seed)
    : objective_(objective),
      train_(train),
      cfg_(std::move(cfg)),
      weights_(ItemWeights::build(table, cfg_)),
      theta_(std::move(theta0)),
      seed_(seed) {
  cfg_.validate();
  if (train_.examples.empty()) throw EmptyDataset("training set is empty");
  if (theta_.size() != objective_.dim()) throw DimensionMismatch("initial parameters have wrong dimension");
}

EpochSummary Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = train_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine eng(mix_seed(seed_, static_cast<std::uint64_t>(epoch_)));
  for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[uniform_index(eng, k)]);

  EpochSummary s;
  s.epoch = epoch_ + 1;
  double loss_acc = 0.0;
  double wloss_acc = 0.0;
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t begin = 0; begin < n; begin += bs) {
    const std::size_t end = std::min(n, begin + bs);
    const auto batch = make_batch(train_, std::span<const std::size_t>(order).subspan(begin, end - begin));
    StepReport r;
    try {
      r = optimizer_step(objective_, theta_, state_, batch, weights_, cfg_);
    } catch (const NonFiniteGradient& e) {
      if (e.step() >= 0) throw;
      throw NonFiniteGradient(state_.step_count + 1, "perturbation gradient is not finite");
    }
    ++s.steps;
    loss_acc += r.loss * static_cast<double>(batch.size());
    wloss_acc += r.weighted_loss * static_cast<double>(batch.size());
    s.clamped_steps += r.clamped;
    s.fallback_steps += r.fallback;
    s.forward_passes += r.forward_passes;
    s.backward_evals += r.backward_evals;
  }
  s.mean_loss = loss_acc / static_cast<double>(n);
  s.mean_weighted_loss = wloss_acc / static_cast<double>(n);
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ++epoch_;
  return s;
}

TrainResult train(const Objective& objective, const SequenceDataset& dataset,
                  const FrequencyTable& table, const OptimizerConfig& cfg, int epochs,
                  std::uint64_t seed, std::vector<double> theta0) {
  if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
  Trainer trainer(objective, dataset, table, cfg, std::move(theta0), seed);
  TrainResult out;
  for (int e = 0; e < epochs; ++e) out.epochs.push_back(trainer.run_epoch());
  out.params = trainer.params();
  return out;
}

nlohmann::json to_json(const EpochSummary& s) {
  return {{"epoch", s.epoch},
          {"steps", s.steps},
          {"mean_loss", s.mean_loss},
          {"mean_weighted_loss", s.mean_weighted_loss},
          {"wall_seconds", s.wall_seconds},
          {"clamped_steps", s.clamped_steps},
          {"fallback_steps", s.fallback_steps},
          {"forward_passes", s.forward_passes},
          {"backward_evals", s.backward_evals}};
}

}  // namespace eisam
