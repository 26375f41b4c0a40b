#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eisam/data.hpp"
#include "eisam/model.hpp"
#include "eisam/weighting.hpp"

namespace eisam {

enum class Variant { Plain, RW, SAM, GroupSAM, EISAM };
enum class BaseOptimizer { SGD, Adam };
// Unbiased: per-sample weight f(q)/q with batch-mean aggregation.
// Grouped:  within-batch per-item mean losses weighted by f(q).
enum class Estimator { Unbiased, Grouped };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
std::string to_string(BaseOptimizer b);
BaseOptimizer parse_base(const std::string& name);
std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& name);

struct OptimizerConfig {
  Variant variant = Variant::EISAM;
  double rho = 0.05;
  double lambda = 0.5;
  double lr = 5e-4;
  BaseOptimizer base = BaseOptimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  WeightingScheme scheme = WeightingScheme::exponential(10.0);
  bool normalize_weights = false;  // mean-one rescaling of f over the vocabulary
  int batch_size = 64;
  Estimator estimator = Estimator::Unbiased;

  void validate() const;
};

struct OptState {
  long long step_count = 0;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment
};

struct StepReport {
  double loss = 0.0;           // plain batch mean loss at theta
  double weighted_loss = 0.0;  // L_B^w at theta (0 for variants without it)
  double grad_w_norm = 0.0;    // norm of the gradient that defines the perturbation
  double eps_norm = 0.0;       // rho, or 0 when no perturbation was applied
  double g1_norm = 0.0;
  double g2_norm = 0.0;
  bool clamped = false;
  bool fallback = false;  // zero-gradient degeneracy, plain step taken
  int forward_passes = 0;
  int backward_evals = 0;  // weight vectors back-propagated
  long long wall_nanos = 0;
};

// f(q_i), q_i and group membership for every vocabulary item, fixed for a run.
struct ItemWeights {
  std::vector<double> f;
  std::vector<double> q;
  std::vector<bool> is_head;

  static ItemWeights build(const FrequencyTable& table, const WeightingScheme& scheme,
                           bool mean_one = false);
  static ItemWeights build(const FrequencyTable& table, const OptimizerConfig& cfg);
};

// Per-sample weights w_k such that sum_k w_k loss_k = L_B^w.
std::vector<double> weighted_sample_weights(const Batch& batch, const ItemWeights& weights,
                                            Estimator estimator = Estimator::Unbiased);

struct WeightedLossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

WeightedLossGrad weighted_batch_loss_and_grad(const Objective& objective,
                                              std::span<const double> theta, const Batch& batch,
                                              const ItemWeights& weights,
                                              Estimator estimator = Estimator::Unbiased);

// rho * g / ||g||; zero vector when rho == 0. Throws ZeroGradient when rho > 0
// and ||g|| < 1e-12.
std::vector<double> epsilon_hat(std::span<const double> g, double rho);

// Applies the base optimizer to theta in place.
void base_update(OptState& state, std::vector<double>& theta, std::span<const double> total_grad,
                 const OptimizerConfig& cfg);

StepReport plain_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                      const Batch& batch, const OptimizerConfig& cfg);
StepReport rw_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                   const Batch& batch, const ItemWeights& weights, const OptimizerConfig& cfg);
StepReport sam_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                    const Batch& batch, const OptimizerConfig& cfg);
StepReport group_sam_step(const Objective& objective, std::vector<double>& theta,
                          OptState& state, const Batch& batch, const ItemWeights& weights,
                          const OptimizerConfig& cfg);
StepReport eisam_step(const Objective& objective, std::vector<double>& theta, OptState& state,
                      const Batch& batch, const ItemWeights& weights, const OptimizerConfig& cfg);

// Dispatches on cfg.variant.
StepReport optimizer_step(const Objective& objective, std::vector<double>& theta,
                          OptState& state, const Batch& batch, const ItemWeights& weights,
                          const OptimizerConfig& cfg);

struct EpochSummary {
  int epoch = 0;
  long long steps = 0;
  double mean_loss = 0.0;
  double mean_weighted_loss = 0.0;
  double wall_seconds = 0.0;
  long long clamped_steps = 0;
  long long fallback_steps = 0;
  long long forward_passes = 0;
  long long backward_evals = 0;
};

// Owns one training run: parameters, optimizer state and the shuffling RNG.
// Each epoch visits a fresh permutation of the training set derived from
// (seed, epoch); the last partial batch is kept.
class Trainer {
 public:
  Trainer(const Objective& objective, const SequenceDataset& train, const FrequencyTable& table,
          OptimizerConfig cfg, std::vector<double> theta0, std::uint64_t seed);

  EpochSummary run_epoch();

  const std::vector<double>& params() const { return theta_; }
  const OptState& state() const { return state_; }
  const OptimizerConfig& config() const { return cfg_; }
  int epochs_done() const { return epoch_; }

 private:
  const Objective& objective_;
  const SequenceDataset& train_;
  OptimizerConfig cfg_;
  ItemWeights weights_;
  std::vector<double> theta_;
  OptState state_;
  std::uint64_t seed_;
  int epoch_ = 0;
};

struct TrainResult {
  std::vector<double> params;
  std::vector<EpochSummary> epochs;
};

TrainResult train(const Objective& objective, const SequenceDataset& dataset,
                  const FrequencyTable& table, const OptimizerConfig& cfg, int epochs,
                  std::uint64_t seed, std::vector<double> theta0);

nlohmann::json to_json(const EpochSummary& s);

}  // namespace eisam
