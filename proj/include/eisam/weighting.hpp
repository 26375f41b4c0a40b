#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "eisam/data.hpp"

namespace eisam {

// Frequency-dependent item weight f(q).
//   Normalized:      1 / (q + eps)
//   EffectiveNumber: (1 - beta) / (1 - beta^q)
//   Exponential:     (1 - q)^gamma
//   Identity:        1
//   Frequency:       q
class WeightingScheme {
 public:
  enum class Kind { Normalized, EffectiveNumber, Exponential, Identity, Frequency };

  static WeightingScheme normalized(double eps = 1e-8);
  static WeightingScheme effective_number(double beta);
  static WeightingScheme exponential(double gamma);
  static WeightingScheme identity();
  static WeightingScheme frequency();

  // kind is one of "normalized", "effective", "exponential", "identity",
  // "frequency"; `param` is eps, beta or gamma respectively.
  static WeightingScheme from_name(const std::string& kind, double param);

  Kind kind() const { return kind_; }
  double param() const { return param_; }
  std::string name() const;
  // Multiplies every weight by `c` (> 0).
  WeightingScheme scaled(double c) const;
  double scale() const { return scale_; }

  double operator()(double q) const;

 private:
  WeightingScheme(Kind kind, double param) : kind_(kind), param_(param) {}

  Kind kind_;
  double param_;
  double scale_ = 1.0;
};

double weight(const WeightingScheme& scheme, double q);

// f(q_i) for every vocabulary item. With `mean_one`, weights are rescaled so
// their mean over items with n_i > 0 is 1.
std::vector<double> weights_for_table(const WeightingScheme& scheme, const FrequencyTable& table,
                                      bool mean_one = false);

// CSV `rank,item_id,q,weight`, most frequent item first (ties to smaller id).
void emit_weight_profile(const WeightingScheme& scheme, const FrequencyTable& table,
                         const std::filesystem::path& path, bool mean_one = false);

}  // namespace eisam
