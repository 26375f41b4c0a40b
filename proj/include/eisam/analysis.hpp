#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eisam/data.hpp"
#include "eisam/model.hpp"
#include "eisam/optimizers.hpp"
#include "eisam/weighting.hpp"

namespace eisam {

enum class Scope { Overall, Head, Tail };

std::string to_string(Scope s);
Scope parse_scope(const std::string& name);

// Examples of `ds` whose target falls in the scope's item group.
Batch scope_batch(const SequenceDataset& ds, const FrequencyTable& table, Scope scope);

// sum_k w_k loss_k over a fixed example set, evaluated in chunks so large
// datasets never materialize a full |examples| x |I| logit matrix.
class FixedLoss {
 public:
  FixedLoss(const Objective& objective, Batch batch, std::vector<double> sample_weights,
            std::size_t chunk = 4096);

  double value(std::span<const double> theta) const;
  std::vector<double> gradient(std::span<const double> theta) const;
  std::size_t dim() const { return objective_->dim(); }
  const Batch& batch() const { return batch_; }
  const std::vector<double>& sample_weights() const { return weights_; }

 private:
  const Objective* objective_;
  Batch batch_;
  std::vector<double> weights_;
  std::size_t chunk_;
};

// L^w = sum_i f(q_i) L^(i) over the examples of `batch`, L^(i) being the
// mean loss of the examples with target i.
FixedLoss weighted_loss(const Objective& objective, Batch batch, const ItemWeights& weights);
// Plain mean loss over `batch`.
FixedLoss mean_loss(const Objective& objective, Batch batch);

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

double default_hvp_step(std::span<const double> theta);

// (grad(theta + h v) - grad(theta - h v)) / 2h
std::vector<double> hvp_fd(const GradientFn& grad, std::span<const double> theta,
                           std::span<const double> v, double h);

struct TraceEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  int n_probes = 0;
  std::vector<double> samples;
};

// Mean of v^T H v over Rademacher probes; probe p draws from (seed, p), so
// the result does not depend on `jobs`.
TraceEstimate hutchinson_trace(const GradientFn& grad, std::span<const double> theta,
                               int n_probes, std::uint64_t seed, double h = 0.0, int jobs = 1);

struct LandscapeGrid {
  std::vector<double> dir1;
  std::vector<double> dir2;
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<std::vector<double>> values;  // values[r][c] at alphas[r], betas[c]
  Scope scope = Scope::Overall;
};

// Two seeded Gaussian directions, Gram-Schmidt orthonormalized. When
// `row_blocks` is non-empty every listed segment of each direction is then
// rescaled to the norm of the same segment of theta.
std::pair<std::vector<double>, std::vector<double>> landscape_directions(
    std::span<const double> theta, std::uint64_t seed,
    std::span<const std::pair<std::size_t, std::size_t>> row_blocks);

LandscapeGrid landscape_grid(const FixedLoss& loss, std::span<const double> theta,
                             std::vector<double> dir1, std::vector<double> dir2,
                             double half_width, int resolution);

// Mean scope loss on an odd resolution x resolution grid around theta.
LandscapeGrid landscape_slice(const Objective& objective, std::span<const double> theta,
                              const SequenceDataset& ds, const FrequencyTable& table, Scope scope,
                              double half_width, int resolution, std::uint64_t seed,
                              std::span<const std::pair<std::size_t, std::size_t>> row_blocks);

void write_landscape_csv(const LandscapeGrid& grid, const std::filesystem::path& path);

// IS^(i) = L^(i)(theta + eps) - L^(i)(theta) for every item with examples,
// eps being the closed-form perturbation of the dataset-level L^w.
std::map<ItemIndex, double> empirical_item_sharpness(const Objective& objective,
                                                     std::span<const double> theta,
                                                     const SequenceDataset& ds,
                                                     const ItemWeights& weights, double rho);

// B^w = sum_i f(q_i) q_i B (items with q_i = 0 contribute nothing).
double bw_constant(const FrequencyTable& table, const WeightingScheme& scheme, double B,
                   bool mean_one = false);

struct BoundInputs {
  double rho = 0.05;
  double lambda = 0.5;
  double delta = 0.05;
  double d = 1.0;  // parameter dimension
  double n = 2.0;  // training-set size
  double B = 1.0;  // loss cap
  double Bw = 1.0;
  double theta_norm = 0.0;
  double trace_Hw = 0.0;
  double q_min = 1.0;
  double n_items = 1.0;
  double J_S = 0.0;
};

struct ComplexityTerm {
  double constant = 0.0;    // 2 + 2 B^w
  double norm_piece = 0.0;  // 2 d ln(1 + ||theta||^2 / (d rho^2))
  double dim_piece = 0.0;   // 4 d ln(sqrt d + sqrt(2 ln n))
  double log_piece = 0.0;   // 4 ln(pi^2 sqrt n (1 + n B^w)^2 / (3 delta))
  double total = 0.0;
};

struct BoundReport {
  double empirical = 0.0;      // 2 J_S / (|I| q_min)
  double curvature = 0.0;      // -lambda rho^2 tr(H^w) / (2 |I| q_min s^2)
  double concentration = 0.0;  // 40 (B + lambda B^w) ln(2/delta) / (3 n |I| q_min)
  double complexity = 0.0;     // lambda C / (n |I| q_min)
  double total = 0.0;
  double sigma_q = 0.0;          // rho / s, s = sqrt d + sqrt(2 ln n)
  double remainder_scale = 0.0;  // lambda d rho^2 / (|I| q_min s^2), not part of total
  ComplexityTerm C;
};

ComplexityTerm complexity_term(const BoundInputs& in);
BoundReport bound_rhs(const BoundInputs& in);

nlohmann::json to_json(const TraceEstimate& t, Scope scope);
nlohmann::json to_json(const BoundReport& r);

}  // namespace eisam
