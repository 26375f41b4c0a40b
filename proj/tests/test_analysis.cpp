#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "eisam/analysis.hpp"
#include "eisam/errors.hpp"
#include "test_util.hpp"

namespace eisam {
namespace {

using testing::max_abs_diff;
using testing::OwnedBatch;
using testing::random_dataset;
using testing::random_params;
using testing::random_vector;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

GradientFn gradient_of(const FixedLoss& loss) {
  return [&loss](std::span<const double> x) { return loss.gradient(x); };
}

struct ModelInstance {
  SequenceDataset ds;
  FrequencyTable table;
  Recommender model;
  std::vector<double> theta;
  ItemWeights weights;

  ModelInstance(std::size_t n_items, std::size_t n_examples, std::uint64_t seed)
      : ds(random_dataset(n_items, n_examples, seed)),
        table(frequency_table(ds)),
        model(n_items, 3),
        theta(random_params(n_items, 3, seed + 1).flatten()),
        weights(ItemWeights::build(table, WeightingScheme::exponential(3.0))) {}
};

TEST(Hvp, DiagonalQuadratic) {
  const auto obj = QuadraticSurrogate::diagonal({1.0, 2.0, 3.0});
  const OwnedBatch ob({{0}}, {0});
  const FixedLoss loss(obj, ob.batch, {1.0});
  const std::vector<double> theta{0.4, -1.0, 2.0};
  const auto hv = hvp_fd(gradient_of(loss), theta, std::vector<double>{0.0, 1.0, 0.0}, 1e-4);
  EXPECT_NEAR(hv[0], 0.0, 1e-6);
  EXPECT_NEAR(hv[1], 2.0, 1e-6);
  EXPECT_NEAR(hv[2], 0.0, 1e-6);
  const auto zero = hvp_fd(gradient_of(loss), theta, std::vector<double>(3, 0.0), 1e-4);
  EXPECT_EQ(zero, std::vector<double>(3, 0.0));
  EXPECT_THROW(hvp_fd(gradient_of(loss), theta, std::vector<double>(3, 0.0), 0.0), DomainError);
}

TEST(Hvp, SymmetricOnRealModel) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    ModelInstance in(12, 40, seed);
    const auto lw = weighted_loss(in.model, make_batch(in.ds), in.weights);
    const auto u = random_vector(in.theta.size(), seed + 10);
    const auto v = random_vector(in.theta.size(), seed + 20);
    const double h = default_hvp_step(in.theta);
    const double uhv = dot(u, hvp_fd(gradient_of(lw), in.theta, v, h));
    const double vhu = dot(v, hvp_fd(gradient_of(lw), in.theta, u, h));
    EXPECT_NEAR(uhv, vhu, 1e-5);
  }
}

TEST(Hutchinson, IdentityHessianIsExact) {
  const auto obj = QuadraticSurrogate::diagonal(std::vector<double>(17, 1.0));
  const OwnedBatch ob({{0}}, {0});
  const FixedLoss loss(obj, ob.batch, {1.0});
  const auto t = hutchinson_trace(gradient_of(loss), std::vector<double>(17, 0.0), 50, 3);
  EXPECT_EQ(t.estimate, 17.0);
  EXPECT_EQ(t.std_error, 0.0);
  EXPECT_EQ(t.n_probes, 50);
}

TEST(Hutchinson, DiagonalTrace) {
  const auto obj = QuadraticSurrogate::diagonal({1.0, 2.0, 3.0});
  const OwnedBatch ob({{0}}, {0});
  const FixedLoss loss(obj, ob.batch, {1.0});
  const auto t = hutchinson_trace(gradient_of(loss), std::vector<double>{0.1, 0.2, 0.3}, 1000, 5);
  EXPECT_NEAR(t.estimate, 6.0, 0.02 * 6.0);
}

TEST(Hutchinson, LinearLossHasZeroTrace) {
  const QuadraticSurrogate obj({{{0.0, 0.0}, {0.0, 0.0}, {1.5, -0.5}}});
  const OwnedBatch ob({{0}}, {0});
  const FixedLoss loss(obj, ob.batch, {1.0});
  const auto t = hutchinson_trace(gradient_of(loss), std::vector<double>{3.0, 1.0}, 20, 1);
  EXPECT_NEAR(t.estimate, 0.0, 1e-8);
}

TEST(Hutchinson, DeterministicAndIndependentOfJobs) {
  ModelInstance in(10, 30, 2);
  const auto lw = weighted_loss(in.model, make_batch(in.ds), in.weights);
  const auto a = hutchinson_trace(gradient_of(lw), in.theta, 24, 9, 0.0, 1);
  const auto b = hutchinson_trace(gradient_of(lw), in.theta, 24, 9, 0.0, 3);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.estimate, b.estimate);
  const auto c = hutchinson_trace(gradient_of(lw), in.theta, 24, 10, 0.0, 1);
  EXPECT_NE(a.samples, c.samples);
  EXPECT_THROW(hutchinson_trace(gradient_of(lw), in.theta, 0, 1), InvalidConfig);
}

TEST(Hutchinson, StdErrorShrinksAsInverseSqrtProbes) {
  ModelInstance in(10, 30, 4);
  const auto lw = weighted_loss(in.model, make_batch(in.ds), in.weights);
  const auto small = hutchinson_trace(gradient_of(lw), in.theta, 100, 1);
  const auto large = hutchinson_trace(gradient_of(lw), in.theta, 10000, 2);
  ASSERT_GT(large.std_error, 0.0);
  const double ratio = small.std_error / large.std_error;
  EXPECT_NEAR(ratio, 10.0, 2.0);
}

TEST(Landscape, DirectionsOrthonormalWithoutBlocks) {
  const auto theta = random_vector(50, 1);
  const auto [d1, d2] = landscape_directions(theta, 7, {});
  EXPECT_NEAR(dot(d1, d1), 1.0, 1e-10);
  EXPECT_NEAR(dot(d2, d2), 1.0, 1e-10);
  EXPECT_NEAR(dot(d1, d2), 0.0, 1e-10);
}

TEST(Landscape, FilterNormalizationMatchesRowNorms) {
  const Recommender model(6, 4);
  const auto theta = random_params(6, 4, 3).flatten();
  const auto blocks = model.row_blocks();
  const auto [d1, d2] = landscape_directions(theta, 7, blocks);
  for (const auto& [off, len] : blocks) {
    double nt = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t j = off; j < off + len; ++j) {
      nt += theta[j] * theta[j];
      n1 += d1[j] * d1[j];
      n2 += d2[j] * d2[j];
    }
    EXPECT_NEAR(std::sqrt(n1), std::sqrt(nt), 1e-12);
    EXPECT_NEAR(std::sqrt(n2), std::sqrt(nt), 1e-12);
  }
}

QuadraticSurrogate random_quadratic(std::size_t d, std::uint64_t seed) {
  return QuadraticSurrogate({{random_vector(d, seed, 0.5, 3.0), random_vector(d, seed + 1),
                              random_vector(d, seed + 2)}});
}

TEST(Landscape, CenterIsExactAndSeedDeterministic) {
  ModelInstance in(8, 25, 6);
  const auto blocks = in.model.row_blocks();
  const auto g = landscape_slice(in.model, in.theta, in.ds, in.table, Scope::Overall, 0.5, 5, 3, blocks);
  const auto loss = mean_loss(in.model, make_batch(in.ds));
  EXPECT_EQ(g.values[2][2], loss.value(in.theta));
  EXPECT_EQ(g.alphas[2], 0.0);
  const auto g2 = landscape_slice(in.model, in.theta, in.ds, in.table, Scope::Overall, 0.5, 5, 3, blocks);
  EXPECT_EQ(g.values, g2.values);
  for (const auto& row : g.values) {
    for (double v : row) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Landscape, QuadraticSurrogateFitsQuadratic) {
  const auto obj = random_quadratic(10, 4);
  const OwnedBatch ob({{0}}, {0});
  const FixedLoss loss(obj, ob.batch, {1.0});
  const auto theta = random_vector(10, 9);
  auto [d1, d2] = landscape_directions(theta, 2, {});
  const auto g = landscape_grid(loss, theta, d1, d2, 1.5, 9);
  // least squares on [1, a, b, a^2, ab, b^2]
  Eigen::MatrixXd X(81, 6);
  Eigen::VectorXd y(81);
  int row = 0;
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 9; ++c) {
      const double a = g.alphas[r], b = g.betas[c];
      X.row(row) << 1.0, a, b, a * a, a * b, b * b;
      y(row) = g.values[r][c];
      ++row;
    }
  }
  const Eigen::VectorXd coef = X.colPivHouseholderQr().solve(y);
  EXPECT_LT((X * coef - y).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Landscape, SignFlipMirrorsGrid) {
  const auto obj = random_quadratic(6, 8);
  const OwnedBatch ob({{0}}, {0});
  const FixedLoss loss(obj, ob.batch, {1.0});
  const auto theta = random_vector(6, 3);
  auto [d1, d2] = landscape_directions(theta, 5, {});
  auto n1 = d1, n2 = d2;
  for (auto& x : n1) x = -x;
  for (auto& x : n2) x = -x;
  const auto g = landscape_grid(loss, theta, d1, d2, 1.0, 7);
  const auto f = landscape_grid(loss, theta, n1, n2, 1.0, 7);
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 7; ++c) EXPECT_NEAR(f.values[r][c], g.values[6 - r][6 - c], 1e-14);
  }
}

TEST(Landscape, RejectsBadGridAndEmptyScope) {
  ModelInstance in(8, 25, 1);
  EXPECT_THROW(landscape_slice(in.model, in.theta, in.ds, in.table, Scope::Overall, 0.5, 4, 1, {}),
               InvalidConfig);
  SequenceDataset heads = in.ds;
  heads.examples.clear();
  const auto h = in.table.head.front();
  heads.examples.push_back({0, {1}, h});
  EXPECT_THROW(landscape_slice(in.model, in.theta, heads, in.table, Scope::Tail, 0.5, 3, 1, {}), EmptyScope);
}

TEST(Landscape, CsvLayout) {
  const auto dir = testing::temp_dir("landscape");
  LandscapeGrid g;
  g.alphas = {-1.0, 0.0, 1.0};
  g.betas = {-1.0, 0.0, 1.0};
  g.values = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  write_landscape_csv(g, dir / "l.csv");
  const auto text = testing::read_file(dir / "l.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "alpha,beta,loss");
  EXPECT_NE(text.find("\n-1,0,2\n"), std::string::npos);
  EXPECT_NE(text.find("\n1,1,9\n"), std::string::npos);
}

TEST(ItemSharpness, ZeroRadius) {
  ModelInstance in(8, 25, 2);
  for (const auto& [item, s] : empirical_item_sharpness(in.model, in.theta, in.ds, in.weights, 0.0)) {
    EXPECT_EQ(s, 0.0);
  }
}

TEST(ItemSharpness, OneDimensionalQuadratic) {
  const QuadraticSurrogate obj({{{2.0}, {0.0}, {0.0}}});
  SequenceDataset ds;
  ds.vocab = {0};
  ds.examples = {{0, {0}, 0}};
  ItemWeights w;
  w.f = {1.0};
  w.q = {1.0};
  w.is_head = {true};
  const auto is = empirical_item_sharpness(obj, std::vector<double>{1.0}, ds, w, 0.1);
  ASSERT_EQ(is.size(), 1u);
  EXPECT_NEAR(is.at(0), 0.21, 1e-14);
}

TEST(ItemSharpness, ClosedFormNearInnerMax) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    ModelInstance in(8, 30, seed);
    const double rho = 1e-3;
    const auto is = empirical_item_sharpness(in.model, in.theta, in.ds, in.weights, rho);
    double at_hat = 0.0;
    for (const auto& [item, s] : is) at_hat += in.weights.f[item] * s;
    const auto lw = weighted_loss(in.model, make_batch(in.ds), in.weights);
    const double base = lw.value(in.theta);
    double sampled_max = -INFINITY;
    Engine eng(seed);
    for (int k = 0; k < 300; ++k) {
      std::vector<double> e(in.theta.size());
      double n = 0.0;
      for (auto& x : e) n += (x = standard_normal(eng)) * x;
      auto p = in.theta;
      for (std::size_t j = 0; j < p.size(); ++j) p[j] += rho * e[j] / std::sqrt(n);
      sampled_max = std::max(sampled_max, lw.value(p) - base);
    }
    EXPECT_LE(sampled_max, at_hat + 10.0 * rho * rho);
    EXPECT_GT(at_hat, 0.0);
  }
}

FrequencyTable two_item_table() {
  FrequencyTable t;
  t.counts = {1, 1};
  t.total = 2;
  t.freqs = {0.5, 0.5};
  t.vocab = {0, 1};
  return pareto_split(t);
}

TEST(Bw, Constants) {
  const auto t = two_item_table();
  EXPECT_NEAR(bw_constant(t, WeightingScheme::identity(), 3.0), 3.0, 1e-15);
  EXPECT_NEAR(bw_constant(t, WeightingScheme::frequency(), 3.0), 1.5, 1e-15);
  FrequencyTable one;
  one.counts = {4};
  one.total = 4;
  one.freqs = {1.0};
  one.vocab = {0};
  one = pareto_split(one);
  const auto nrm = WeightingScheme::normalized(0.01);
  EXPECT_NEAR(bw_constant(one, nrm, 2.0), nrm(1.0) * 2.0, 1e-15);
  EXPECT_EQ(bw_constant(one, WeightingScheme::exponential(2.0), 2.0), 0.0);
  EXPECT_THROW(bw_constant(t, nrm, 0.0), DomainError);
}

BoundInputs realistic() {
  BoundInputs in;
  in.rho = 0.05;
  in.lambda = 0.5;
  in.delta = 0.05;
  in.d = 16500;
  in.n = 150000;
  in.B = std::log(500.0) + 10.0;
  in.Bw = 0.8 * in.B;
  in.theta_norm = 3.0;
  in.trace_Hw = 40.0;
  in.q_min = 1e-5;
  in.n_items = 500;
  in.J_S = 7.0;
  return in;
}

// Direct transcription of the printed bound.
double oracle_total(const BoundInputs& in) {
  const double s = std::sqrt(in.d) + std::sqrt(2.0 * std::log(in.n));
  const double iq = in.n_items * in.q_min;
  const double C = 2.0 + 2.0 * in.Bw + 2.0 * in.d * std::log(1.0 + in.theta_norm * in.theta_norm / (in.d * in.rho * in.rho)) +
                   4.0 * in.d * std::log(s) +
                   4.0 * std::log(std::numbers::pi * std::numbers::pi * std::sqrt(in.n) *
                                  std::pow(1.0 + in.n * in.Bw, 2) / (3.0 * in.delta));
  return 2.0 / iq * in.J_S - in.lambda * in.rho * in.rho / (2.0 * iq * s * s) * in.trace_Hw +
         1.0 / iq * (40.0 * (in.B + in.lambda * in.Bw) / (3.0 * in.n) * std::log(2.0 / in.delta) + in.lambda * C / in.n);
}

TEST(Bound, MatchesTranscribedFormula) {
  auto in = realistic();
  const auto r = bound_rhs(in);
  EXPECT_NEAR(r.total, oracle_total(in), 1e-9 * std::abs(r.total));
  EXPECT_NEAR(r.empirical + r.curvature + r.concentration + r.complexity, r.total, 1e-9 * std::abs(r.total));
  const double s = std::sqrt(in.d) + std::sqrt(2.0 * std::log(in.n));
  EXPECT_NEAR(r.sigma_q, in.rho / s, 1e-18);
  EXPECT_GT(r.remainder_scale, 0.0);
}

TEST(Bound, LambdaZero) {
  auto in = realistic();
  in.lambda = 0.0;
  const double L_S = 5.5;
  in.J_S = L_S;
  const auto r = bound_rhs(in);
  const double iq = in.n_items * in.q_min;
  EXPECT_EQ(r.curvature, 0.0);
  EXPECT_FALSE(std::signbit(r.curvature));
  EXPECT_EQ(r.complexity, 0.0);
  const double expect = 2.0 / iq * L_S + 1.0 / iq * (40.0 * in.B / (3.0 * in.n)) * std::log(2.0 / in.delta);
  EXPECT_NEAR(r.total, expect, 1e-12 * expect);
}

TEST(Bound, ZeroNormPieceVanishes) {
  auto in = realistic();
  in.theta_norm = 0.0;
  EXPECT_EQ(complexity_term(in).norm_piece, 0.0);
}

TEST(Bound, DoublingNShrinksCorrections) {
  for (double n : {1e3, 5e3, 1e5, 1e7}) {
    auto in = realistic();
    in.n = n;
    const auto a = bound_rhs(in);
    in.n = 2 * n;
    const auto b = bound_rhs(in);
    const double fc = a.concentration / b.concentration;
    const double fx = a.complexity / b.complexity;
    EXPECT_GE(fc, 1.6);
    EXPECT_LE(fc, 2.0);
    EXPECT_GE(fx, 1.6);
    EXPECT_LE(fx, 2.0);
    EXPECT_LE(b.total, a.total);
  }
}

TEST(Bound, MonotoneInBAndDelta) {
  auto in = realistic();
  double prev = -INFINITY;
  for (double B : {1.0, 2.0, 5.0, 20.0}) {
    in.B = B;
    const double t = bound_rhs(in).total;
    EXPECT_GE(t, prev);
    prev = t;
  }
  in = realistic();
  prev = -INFINITY;
  for (double delta : {0.5, 0.1, 0.01, 1e-4}) {
    in.delta = delta;
    const double t = bound_rhs(in).total;
    EXPECT_GE(t, prev);
    prev = t;
  }
}

TEST(Bound, CurvatureSignFollowsTrace) {
  auto in = realistic();
  for (double tr : {-5.0, 0.0, 3.0}) {
    in.trace_Hw = tr;
    const auto r = bound_rhs(in);
    if (tr > 0) EXPECT_LT(r.curvature, 0.0);
    if (tr < 0) EXPECT_GT(r.curvature, 0.0);
    if (tr == 0) EXPECT_EQ(r.curvature, 0.0);
  }
}

TEST(Bound, DomainErrors) {
  auto in = realistic();
  in.q_min = 0.0;
  EXPECT_THROW(bound_rhs(in), DomainError);
  in = realistic();
  in.delta = 1.0;
  EXPECT_THROW(bound_rhs(in), DomainError);
  in.delta = 0.0;
  EXPECT_THROW(bound_rhs(in), DomainError);
  in = realistic();
  in.n = 1;
  EXPECT_THROW(bound_rhs(in), DomainError);
}

TEST(Bound, JsonHasComponentsAndRemainder) {
  const auto j = to_json(bound_rhs(realistic()));
  for (const char* k : {"empirical", "curvature", "concentration", "complexity", "total"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["remainder"]["evaluated"], false);
  const auto t = to_json(TraceEstimate{1.5, 0.1, 10, {}}, Scope::Tail);
  EXPECT_EQ(t["scope"], "tail");
  EXPECT_EQ(t["n_probes"], 10);
}

}  // namespace
}  // namespace eisam
