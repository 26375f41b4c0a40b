#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "eisam/errors.hpp"
#include "eisam/weighting.hpp"
#include "test_util.hpp"

namespace eisam {
namespace {

FrequencyTable table_of(std::vector<std::int64_t> counts) {
  FrequencyTable t;
  t.counts = std::move(counts);
  for (auto c : t.counts) t.total += c;
  for (auto c : t.counts) t.freqs.push_back(static_cast<double>(c) / static_cast<double>(t.total));
  for (std::size_t i = 0; i < t.counts.size(); ++i) t.vocab.push_back(static_cast<std::int64_t>(100 + i));
  return pareto_split(t);
}

TEST(Weight, ExponentialEndpoints) {
  for (double g : {0.5, 1.0, 2.0, 10.0, 100.0}) {
    const auto s = WeightingScheme::exponential(g);
    EXPECT_EQ(s(0.0), 1.0);
    EXPECT_EQ(s(1.0), 0.0);
  }
}

TEST(Weight, ExponentialHalfSquared) {
  EXPECT_NEAR(weight(WeightingScheme::exponential(2.0), 0.5), 0.25, 1e-15);
  // generic gamma against a long-double evaluation
  const long double ref = std::pow(1.0L - 0.3L, 7.5L);
  EXPECT_NEAR(weight(WeightingScheme::exponential(7.5), 0.3), static_cast<double>(ref), 1e-15);
}

TEST(Weight, NormalizedNearReciprocal) {
  EXPECT_NEAR(weight(WeightingScheme::normalized(1e-12), 0.25), 4.0, 1e-9);
  EXPECT_DOUBLE_EQ(weight(WeightingScheme::normalized(), 0.0), 1e8);
}

TEST(Weight, EffectiveNumberBetaZeroIsOne) {
  const auto s = WeightingScheme::effective_number(0.0);
  for (double q : {1e-6, 0.1, 0.5, 1.0}) EXPECT_EQ(s(q), 1.0);
}

TEST(Weight, EffectiveNumberFormula) {
  const auto s = WeightingScheme::effective_number(0.9);
  const long double ref = (1.0L - 0.9L) / (1.0L - std::pow(0.9L, 0.2L));
  EXPECT_NEAR(s(0.2), static_cast<double>(ref), 1e-12);
  EXPECT_NEAR(s(1.0), 1.0, 1e-15);
}

TEST(Weight, IdentityAndFrequency) {
  for (double q : {0.0, 0.125, 0.7, 1.0}) {
    EXPECT_EQ(WeightingScheme::identity()(q), 1.0);
    EXPECT_EQ(WeightingScheme::frequency()(q), q);
  }
}

TEST(Weight, DomainErrors) {
  const auto s = WeightingScheme::exponential(2.0);
  EXPECT_THROW(s(-0.01), DomainError);
  EXPECT_THROW(s(1.01), DomainError);
  EXPECT_THROW(s(NAN), DomainError);
}

TEST(Weight, InvalidHyperparameters) {
  EXPECT_THROW(WeightingScheme::normalized(0.0), InvalidConfig);
  EXPECT_THROW(WeightingScheme::effective_number(1.0), InvalidConfig);
  EXPECT_THROW(WeightingScheme::effective_number(-0.1), InvalidConfig);
  EXPECT_THROW(WeightingScheme::exponential(0.0), InvalidConfig);
  EXPECT_THROW(WeightingScheme::exponential(-2.0), InvalidConfig);
  EXPECT_THROW(WeightingScheme::from_name("cubic", 1.0), InvalidConfig);
  EXPECT_THROW(WeightingScheme::identity().scaled(0.0), InvalidConfig);
}

TEST(Weight, FromNameRoundTrip) {
  for (const std::string k : {"normalized", "effective", "exponential", "identity", "frequency"}) {
    const auto s = WeightingScheme::from_name(k, 0.5);
    EXPECT_EQ(s.name(), k);
  }
  EXPECT_EQ(WeightingScheme::from_name("exponential", 3.0)(0.5), 0.125);
}

TEST(Weight, ScaledMultiplies) {
  const auto s = WeightingScheme::exponential(2.0).scaled(4.0);
  EXPECT_EQ(s(0.5), 1.0);
}

TEST(Weight, MonotoneOnDenseGrid) {
  const std::vector<WeightingScheme> schemes{
      WeightingScheme::normalized(), WeightingScheme::normalized(0.1), WeightingScheme::effective_number(0.5),
      WeightingScheme::effective_number(0.999), WeightingScheme::exponential(0.5),
      WeightingScheme::exponential(10.0), WeightingScheme::exponential(200.0)};
  for (const auto& s : schemes) {
    double prev = INFINITY;
    for (int k = 0; k <= 10000; ++k) {
      const double q = k / 10000.0;
      if (s.kind() == WeightingScheme::Kind::EffectiveNumber && q == 0.0) continue;
      const double f = s(q);
      EXPECT_LE(f, prev) << s.name() << " q=" << q;
      EXPECT_GE(f, 0.0);
      if (s.kind() != WeightingScheme::Kind::Exponential || q <= 0.9) EXPECT_GT(f, 0.0) << s.name() << " q=" << q;
      prev = f;
    }
  }
}

TEST(WeightsForTable, IdentityAndFrequency) {
  const auto t = table_of({5, 3, 2, 0});
  EXPECT_EQ(weights_for_table(WeightingScheme::identity(), t), (std::vector<double>(4, 1.0)));
  EXPECT_EQ(weights_for_table(WeightingScheme::frequency(), t), t.freqs);
}

TEST(WeightsForTable, ExponentialGammaTwo) {
  const auto t = table_of({2, 1, 1});
  const auto w = weights_for_table(WeightingScheme::exponential(2.0), t);
  EXPECT_EQ(w, (std::vector<double>{0.25, 0.5625, 0.5625}));
}

TEST(WeightsForTable, MeanOneOverObservedItems) {
  const auto t = table_of({2, 1, 1, 0});
  const auto w = weights_for_table(WeightingScheme::exponential(2.0), t, true);
  EXPECT_NEAR((w[0] + w[1] + w[2]) / 3.0, 1.0, 1e-15);
  EXPECT_NEAR(w[1] / w[0], 0.5625 / 0.25, 1e-14);
}

TEST(WeightProfile, RowsSortedAndDeterministic) {
  const auto dir = testing::temp_dir("profile");
  const auto t = table_of({1, 4, 2});
  const auto s = WeightingScheme::exponential(3.0);
  emit_weight_profile(s, t, dir / "a.csv");
  emit_weight_profile(s, t, dir / "b.csv");
  const auto text = testing::read_file(dir / "a.csv");
  EXPECT_EQ(text, testing::read_file(dir / "b.csv"));
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "rank,item_id,q,weight");
  std::vector<std::string> rows;
  double prev_w = -1.0;
  while (std::getline(in, line)) {
    rows.push_back(line);
    const double w = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_GE(w, prev_w);
    prev_w = w;
  }
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].substr(0, 6), "1,101,");
  EXPECT_EQ(rows[1].substr(0, 6), "2,102,");
  EXPECT_EQ(rows[2].substr(0, 6), "3,100,");
  EXPECT_THROW(emit_weight_profile(s, t, "/nonexistent/dir/x.csv"), IoError);
}

}  // namespace
}  // namespace eisam
