#include "eisam/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "eisam/errors.hpp"
#include "eisam/rng.hpp"

namespace eisam {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Batch make_batch(const SequenceDataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.prefixes.reserve(indices.size());
  b.targets.reserve(indices.size());
  for (auto k : indices) {
    const auto& ex = ds.examples.at(k);
    b.prefixes.emplace_back(ex.prefix);
    b.targets.push_back(ex.target);
  }
  return b;
}

Batch make_batch(const SequenceDataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(ds, all);
}

Batch make_batch(const std::vector<std::vector<ItemIndex>>& prefixes,
                 const std::vector<ItemIndex>& targets) {
  if (prefixes.size() != targets.size()) {
    throw DimensionMismatch("batch needs one prefix per target");
  }
  Batch b;
  for (const auto& p : prefixes) b.prefixes.emplace_back(p);
  b.targets = targets;
  return b;
}

std::vector<double> Objective::losses(std::span<const double> theta, const Batch& batch) const {
  return evaluate(theta, batch, {}).losses;
}

double Objective::weighted_loss(std::span<const double> theta, const Batch& batch,
                                std::span<const double> weights) const {
  const auto l = losses(theta, batch);
  if (weights.size() != l.size()) throw DimensionMismatch("one weight per example required");
  double acc = 0.0;
  for (std::size_t k = 0; k < l.size(); ++k) acc += weights[k] * l[k];
  return acc;
}

std::vector<double> Objective::grad(std::span<const double> theta, const Batch& batch,
                                    std::span<const double> weights) const {
  std::vector<std::vector<double>> sets{std::vector<double>(weights.begin(), weights.end())};
  return std::move(evaluate(theta, batch, sets).grads.front());
}

// ---------------------------------------------------------------------------

ModelParams::ModelParams(std::size_t n_items, std::size_t d_emb)
    : n_items_(n_items), d_emb_(d_emb), flat_(n_items * (d_emb + 1), 0.0) {}

ModelParams ModelParams::unflatten(std::size_t n_items, std::size_t d_emb,
                                   std::vector<double> flat) {
  if (flat.size() != n_items * (d_emb + 1)) {
    throw DimensionMismatch("flat vector has " + std::to_string(flat.size()) +
                            " entries, expected " + std::to_string(n_items * (d_emb + 1)));
  }
  ModelParams p;
  p.n_items_ = n_items;
  p.d_emb_ = d_emb;
  p.flat_ = std::move(flat);
  return p;
}

ModelParams ModelParams::initialize(std::size_t n_items, std::size_t d_emb, std::uint64_t seed) {
  ModelParams p(n_items, d_emb);
  Engine eng(seed);
  for (std::size_t k = 0; k < n_items * d_emb; ++k) p.flat_[k] = uniform(eng, -0.1, 0.1);
  return p;
}

std::span<double> ModelParams::embedding(std::size_t item) {
  return std::span<double>(flat_).subspan(item * d_emb_, d_emb_);
}

std::span<const double> ModelParams::embedding(std::size_t item) const {
  return std::span<const double>(flat_).subspan(item * d_emb_, d_emb_);
}

// ---------------------------------------------------------------------------

Recommender::Recommender(std::size_t n_items, std::size_t d_emb)
    : n_items_(n_items), d_emb_(d_emb), loss_cap_(std::log(static_cast<double>(n_items)) + 10.0) {
  if (n_items == 0) throw InvalidConfig("recommender needs at least one item");
}

void Recommender::check_batch(const Batch& batch) const {
  if (batch.prefixes.size() != batch.targets.size()) {
    throw DimensionMismatch("batch needs one prefix per target");
  }
  const auto n = static_cast<ItemIndex>(n_items_);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (batch.targets[k] < 0 || batch.targets[k] >= n) {
      throw IdOutOfRange("target " + std::to_string(batch.targets[k]) + " outside vocabulary");
    }
    if (batch.prefixes[k].empty()) throw IdOutOfRange("empty prefix");
    for (auto p : batch.prefixes[k]) {
      if (p < 0 || p >= n) throw IdOutOfRange("prefix item " + std::to_string(p) + " outside vocabulary");
    }
  }
}

Evaluation Recommender::evaluate(std::span<const double> theta, const Batch& batch,
                                 std::span<const std::vector<double>> weight_sets) const {
  if (theta.size() != dim()) throw DimensionMismatch("parameter vector has wrong dimension");
  check_batch(batch);
  const auto n = static_cast<Eigen::Index>(n_items_);
  const auto de = static_cast<Eigen::Index>(d_emb_);
  const auto bsz = static_cast<Eigen::Index>(batch.size());
  for (const auto& w : weight_sets) {
    if (static_cast<Eigen::Index>(w.size()) != bsz) throw DimensionMismatch("one weight per example required");
    for (double x : w) {
      if (!std::isfinite(x)) throw NonFiniteWeight("sample weight is not finite");
    }
  }

  Eigen::Map<const RowMatrix> emb(theta.data(), n, de);
  Eigen::Map<const Eigen::VectorXd> bias(theta.data() + n * de, n);

  RowMatrix hidden = RowMatrix::Zero(bsz, de);
  for (Eigen::Index k = 0; k < bsz; ++k) {
    const auto& prefix = batch.prefixes[k];
    for (auto p : prefix) hidden.row(k) += emb.row(p);
    hidden.row(k) /= static_cast<double>(prefix.size());
  }

  RowMatrix logits = hidden * emb.transpose();
  logits.rowwise() += bias.transpose();

  Evaluation out;
  out.losses.resize(batch.size());
  std::vector<bool> clamped(batch.size(), false);
  // logits becomes softmax(z) - onehot(target) in place.
  for (Eigen::Index k = 0; k < bsz; ++k) {
    auto row = logits.row(k);
    const auto t = batch.targets[k];
    const double m = row.maxCoeff();
    const double target_shifted = row(t) - m;
    row.array() = (row.array() - m).exp();
    const double z = row.sum();
    double loss = std::log(z) - target_shifted;
    if (!(loss >= 0.0)) loss = 0.0;
    if (loss > loss_cap_) {
      loss = loss_cap_;
      clamped[k] = true;
      ++out.n_clamped;
    }
    out.losses[k] = loss;
    row /= z;
    row(t) -= 1.0;
  }

  out.grads.reserve(weight_sets.size());
  for (const auto& w : weight_sets) {
    Eigen::VectorXd wk(bsz);
    for (Eigen::Index k = 0; k < bsz; ++k) wk(k) = clamped[k] ? 0.0 : w[k];
    const RowMatrix weighted = wk.asDiagonal() * logits;  // B x |I|

    std::vector<double> g(dim(), 0.0);
    Eigen::Map<RowMatrix> g_emb(g.data(), n, de);
    Eigen::Map<Eigen::VectorXd> g_bias(g.data() + n * de, n);

    g_emb.noalias() = weighted.transpose() * hidden;
    g_bias.noalias() = weighted.transpose() * Eigen::VectorXd::Ones(bsz);
    const RowMatrix d_hidden = weighted * emb;
    for (Eigen::Index k = 0; k < bsz; ++k) {
      const auto& prefix = batch.prefixes[k];
      const double scale = 1.0 / static_cast<double>(prefix.size());
      for (auto p : prefix) g_emb.row(p) += scale * d_hidden.row(k);
    }
    out.grads.push_back(std::move(g));
  }
  return out;
}

std::vector<double> Recommender::score_all(std::span<const double> theta,
                                           std::span<const ItemIndex> prefix) const {
  if (theta.size() != dim()) throw DimensionMismatch("parameter vector has wrong dimension");
  if (prefix.empty()) throw IdOutOfRange("empty prefix");
  const auto n = static_cast<Eigen::Index>(n_items_);
  const auto de = static_cast<Eigen::Index>(d_emb_);
  Eigen::Map<const RowMatrix> emb(theta.data(), n, de);
  Eigen::Map<const Eigen::VectorXd> bias(theta.data() + n * de, n);
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(de);
  for (auto p : prefix) {
    if (p < 0 || p >= n) throw IdOutOfRange("prefix item " + std::to_string(p) + " outside vocabulary");
    h += emb.row(p);
  }
  h /= static_cast<double>(prefix.size());
  std::vector<double> out(n_items_);
  Eigen::Map<Eigen::VectorXd>(out.data(), n) = emb * h.transpose() + bias;
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> Recommender::row_blocks() const {
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t i = 0; i < n_items_; ++i) blocks.emplace_back(i * d_emb_, d_emb_);
  blocks.emplace_back(n_items_ * d_emb_, n_items_);
  return blocks;
}

// ---------------------------------------------------------------------------

QuadraticSurrogate::QuadraticSurrogate(std::vector<Item> items) : items_(std::move(items)) {
  if (items_.empty()) throw InvalidConfig("surrogate needs at least one item");
  dim_ = items_.front().curvature.size();
  for (auto& it : items_) {
    if (it.center.empty()) it.center.assign(dim_, 0.0);
    if (it.linear.empty()) it.linear.assign(dim_, 0.0);
    if (it.curvature.size() != dim_ || it.center.size() != dim_ || it.linear.size() != dim_) {
      throw DimensionMismatch("surrogate item coefficients disagree in dimension");
    }
  }
}

QuadraticSurrogate QuadraticSurrogate::diagonal(std::vector<double> a) {
  return QuadraticSurrogate({Item{std::move(a), {}, {}}});
}

const QuadraticSurrogate::Item& QuadraticSurrogate::item(ItemIndex i) const {
  if (i < 0) throw IdOutOfRange("negative item");
  return static_cast<std::size_t>(i) < items_.size() ? items_[i] : items_.front();
}

Evaluation QuadraticSurrogate::evaluate(std::span<const double> theta, const Batch& batch,
                                        std::span<const std::vector<double>> weight_sets) const {
  if (theta.size() != dim_) throw DimensionMismatch("parameter vector has wrong dimension");
  Evaluation out;
  out.losses.resize(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& it = item(batch.targets[k]);
    double l = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double r = theta[j] - it.center[j];
      l += 0.5 * it.curvature[j] * r * r + it.linear[j] * theta[j];
    }
    out.losses[k] = l;
  }
  for (const auto& w : weight_sets) {
    if (w.size() != batch.size()) throw DimensionMismatch("one weight per example required");
    std::vector<double> g(dim_, 0.0);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      if (!std::isfinite(w[k])) throw NonFiniteWeight("sample weight is not finite");
      const auto& it = item(batch.targets[k]);
      for (std::size_t j = 0; j < dim_; ++j) {
        g[j] += w[k] * (it.curvature[j] * (theta[j] - it.center[j]) + it.linear[j]);
      }
    }
    out.grads.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> forward_losses(const ModelParams& params, const Batch& batch) {
  return Recommender(params.n_items(), params.d_emb()).losses(params.flatten(), batch);
}

std::vector<double> score_all(const ModelParams& params, std::span<const ItemIndex> prefix) {
  return Recommender(params.n_items(), params.d_emb()).score_all(params.flatten(), prefix);
}

std::vector<double> grad(const ModelParams& params, const Batch& batch,
                         std::span<const double> sample_weights) {
  return Recommender(params.n_items(), params.d_emb()).grad(params.flatten(), batch, sample_weights);
}

std::vector<double> finite_diff_grad(const Objective& objective, std::span<const double> theta,
                                     const Batch& batch, std::span<const double> sample_weights,
                                     double step) {
  if (!(step > 0.0)) throw DomainError("finite-difference step must be positive");
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + step;
    const double up = objective.weighted_loss(x, batch, sample_weights);
    x[j] = orig - step;
    const double down = objective.weighted_loss(x, batch, sample_weights);
    x[j] = orig;
    g[j] = (up - down) / (2.0 * step);
  }
  return g;
}

std::vector<double> finite_diff_grad(const ModelParams& params, const Batch& batch,
                                     std::span<const double> sample_weights, double step) {
  return finite_diff_grad(Recommender(params.n_items(), params.d_emb()), params.flatten(), batch,
                          sample_weights, step);
}

ModelParams perturb(const ModelParams& params, std::span<const double> delta) {
  if (delta.size() != params.dim()) {
    throw DimensionMismatch("perturbation has " + std::to_string(delta.size()) +
                            " entries, expected " + std::to_string(params.dim()));
  }
  ModelParams out = params;
  auto& flat = out.flat();
  for (std::size_t j = 0; j < flat.size(); ++j) flat[j] += delta[j];
  return out;
}

std::vector<ItemIndex> rank_items(std::span<const double> logits) {
  std::vector<ItemIndex> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](ItemIndex a, ItemIndex b) { return logits[a] > logits[b]; });
  return order;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json j;
  j["n_items"] = ckpt.params.n_items();
  j["d_emb"] = ckpt.params.d_emb();
  j["init_seed"] = ckpt.init_seed;
  j["vocab"] = ckpt.vocab;
  j["params"] = ckpt.params.flatten();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Checkpoint c;
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.vocab = j.at("vocab").get<std::vector<std::int64_t>>();
    c.params = ModelParams::unflatten(j.at("n_items").get<std::size_t>(),
                                      j.at("d_emb").get<std::size_t>(),
                                      j.at("params").get<std::vector<double>>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace eisam
