#include "eisam/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "eisam/errors.hpp"

namespace eisam {

WeightingScheme WeightingScheme::normalized(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidConfig("normalized weighting needs eps > 0");
  return {Kind::Normalized, eps};
}

WeightingScheme WeightingScheme::effective_number(double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidConfig("effective-number weighting needs beta in [0,1)");
  return {Kind::EffectiveNumber, beta};
}

WeightingScheme WeightingScheme::exponential(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidConfig("exponential weighting needs gamma > 0");
  return {Kind::Exponential, gamma};
}

WeightingScheme WeightingScheme::identity() { return {Kind::Identity, 0.0}; }

WeightingScheme WeightingScheme::frequency() { return {Kind::Frequency, 0.0}; }

WeightingScheme WeightingScheme::from_name(const std::string& kind, double param) {
  if (kind == "normalized") return normalized(param);
  if (kind == "effective") return effective_number(param);
  if (kind == "exponential") return exponential(param);
  if (kind == "identity") return identity();
  if (kind == "frequency") return frequency();
  throw InvalidConfig("unknown weighting kind '" + kind + "'");
}

std::string WeightingScheme::name() const {
  switch (kind_) {
    case Kind::Normalized: return "normalized";
    case Kind::EffectiveNumber: return "effective";
    case Kind::Exponential: return "exponential";
    case Kind::Identity: return "identity";
    case Kind::Frequency: return "frequency";
  }
  return "unknown";
}

WeightingScheme WeightingScheme::scaled(double c) const {
  if (!(c > 0.0) || !std::isfinite(c)) throw InvalidConfig("weight scale must be positive");
  WeightingScheme s = *this;
  s.scale_ *= c;
  return s;
}

double WeightingScheme::operator()(double q) const {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("frequency " + std::to_string(q) + " outside [0,1]");
  double f = 0.0;
  switch (kind_) {
    case Kind::Normalized:
      f = 1.0 / (q + param_);
      break;
    case Kind::EffectiveNumber:
      // beta = 0 gives 0^0 = 1 at q = 0; treat it as the q > 0 value 1.
      f = (param_ == 0.0) ? 1.0 : (1.0 - param_) / (1.0 - std::pow(param_, q));
      break;
    case Kind::Exponential:
      f = std::pow(1.0 - q, param_);
      break;
    case Kind::Identity:
      f = 1.0;
      break;
    case Kind::Frequency:
      f = q;
      break;
  }
  return scale_ * f;
}

double weight(const WeightingScheme& scheme, double q) { return scheme(q); }

std::vector<double> weights_for_table(const WeightingScheme& scheme, const FrequencyTable& table,
                                      bool mean_one) {
  std::vector<double> w(table.n_items());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = scheme(table.freqs[i]);
  if (mean_one) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (table.counts[i] > 0) {
        acc += w[i];
        ++n;
      }
    }
    if (n > 0 && acc > 0.0) {
      const double c = static_cast<double>(n) / acc;
      for (auto& x : w) x *= c;
    }
  }
  return w;
}

void emit_weight_profile(const WeightingScheme& scheme, const FrequencyTable& table,
                         const std::filesystem::path& path, bool mean_one) {
  const auto w = weights_for_table(scheme, table, mean_one);
  std::vector<std::size_t> order(table.n_items());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return table.counts[a] > table.counts[b]; });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "rank,item_id,q,weight\n";
  char buf[128];
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto i = order[r];
    std::snprintf(buf, sizeof buf, "%zu,%lld,%.17g,%.17g\n", r + 1,
                  static_cast<long long>(table.vocab.at(i)), table.freqs[i], w[i]);
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace eisam
