#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "eisam/data.hpp"

namespace eisam {

// A minibatch of (prefix, target) pairs. Prefixes are views into storage owned
// elsewhere (usually a SequenceDataset).
struct Batch {
  std::vector<std::span<const ItemIndex>> prefixes;
  std::vector<ItemIndex> targets;

  std::size_t size() const { return targets.size(); }
};

Batch make_batch(const SequenceDataset& ds, std::span<const std::size_t> indices);
Batch make_batch(const SequenceDataset& ds);
Batch make_batch(SequenceDataset&&, std::span<const std::size_t>) = delete;
Batch make_batch(SequenceDataset&&) = delete;
Batch make_batch(const std::vector<std::vector<ItemIndex>>& prefixes,
                 const std::vector<ItemIndex>& targets);
Batch make_batch(std::vector<std::vector<ItemIndex>>&& prefixes,
                 const std::vector<ItemIndex>& targets) = delete;

// One forward pass plus one backward pass per requested weight vector.
struct Evaluation {
  std::vector<double> losses;              // per example
  std::vector<std::vector<double>> grads;  // grads[s] = d/dtheta sum_k w_s[k] * loss_k
  std::size_t n_clamped = 0;
};

// Per-example differentiable loss over a flat parameter vector.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dim() const = 0;
  virtual Evaluation evaluate(std::span<const double> theta, const Batch& batch,
                              std::span<const std::vector<double>> weight_sets) const = 0;

  std::vector<double> losses(std::span<const double> theta, const Batch& batch) const;
  double weighted_loss(std::span<const double> theta, const Batch& batch,
                       std::span<const double> weights) const;
  std::vector<double> grad(std::span<const double> theta, const Batch& batch,
                           std::span<const double> weights) const;
};

// Item embeddings (row-major |I| x d_emb) followed by the item bias, stored
// as one flat vector so flatten/unflatten are exact.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(std::size_t n_items, std::size_t d_emb);  // all zeros
  static ModelParams unflatten(std::size_t n_items, std::size_t d_emb, std::vector<double> flat);
  // Embeddings ~ U(-0.1, 0.1), bias = 0.
  static ModelParams initialize(std::size_t n_items, std::size_t d_emb, std::uint64_t seed);

  std::size_t n_items() const { return n_items_; }
  std::size_t d_emb() const { return d_emb_; }
  std::size_t dim() const { return flat_.size(); }

  std::span<double> embedding(std::size_t item);
  std::span<const double> embedding(std::size_t item) const;
  double& bias(std::size_t item) { return flat_[n_items_ * d_emb_ + item]; }
  double bias(std::size_t item) const { return flat_[n_items_ * d_emb_ + item]; }

  const std::vector<double>& flatten() const { return flat_; }
  std::vector<double>& flat() { return flat_; }

  bool operator==(const ModelParams&) const = default;

 private:
  std::size_t n_items_ = 0;
  std::size_t d_emb_ = 0;
  std::vector<double> flat_;
};

// Mean-pooled prefix embedding, dot-product logits against every item
// embedding plus item bias, softmax cross-entropy clamped to [0, ln|I| + 10].
// A clamped example contributes no gradient.
class Recommender final : public Objective {
 public:
  Recommender(std::size_t n_items, std::size_t d_emb);

  std::size_t dim() const override { return n_items_ * (d_emb_ + 1); }
  std::size_t n_items() const { return n_items_; }
  std::size_t d_emb() const { return d_emb_; }
  double loss_cap() const { return loss_cap_; }

  Evaluation evaluate(std::span<const double> theta, const Batch& batch,
                      std::span<const std::vector<double>> weight_sets) const override;

  std::vector<double> score_all(std::span<const double> theta,
                                std::span<const ItemIndex> prefix) const;

  // Segments (offset, length) of theta holding one embedding row each, then
  // the bias block.
  std::vector<std::pair<std::size_t, std::size_t>> row_blocks() const;

 private:
  void check_batch(const Batch& batch) const;

  std::size_t n_items_;
  std::size_t d_emb_;
  double loss_cap_;
};

// Separable quadratic-plus-linear test surrogate:
//   loss(theta; item i) = 1/2 sum_j a_ij (theta_j - c_ij)^2 + sum_j b_ij theta_j.
// Prefixes are ignored. Items without their own coefficients use item 0's.
class QuadraticSurrogate final : public Objective {
 public:
  struct Item {
    std::vector<double> curvature;
    std::vector<double> center;
    std::vector<double> linear;
  };

  explicit QuadraticSurrogate(std::vector<Item> items);
  // Every item shares curvature diag(a), zero center, no linear term.
  static QuadraticSurrogate diagonal(std::vector<double> a);

  std::size_t dim() const override { return dim_; }
  Evaluation evaluate(std::span<const double> theta, const Batch& batch,
                      std::span<const std::vector<double>> weight_sets) const override;

 private:
  const Item& item(ItemIndex i) const;

  std::vector<Item> items_;
  std::size_t dim_;
};

std::vector<double> forward_losses(const ModelParams& params, const Batch& batch);
std::vector<double> score_all(const ModelParams& params, std::span<const ItemIndex> prefix);
std::vector<double> grad(const ModelParams& params, const Batch& batch,
                         std::span<const double> sample_weights);

// Central differences of sum_k w_k loss_k, one coordinate at a time.
std::vector<double> finite_diff_grad(const Objective& objective, std::span<const double> theta,
                                     const Batch& batch, std::span<const double> sample_weights,
                                     double step);
std::vector<double> finite_diff_grad(const ModelParams& params, const Batch& batch,
                                     std::span<const double> sample_weights, double step);

ModelParams perturb(const ModelParams& params, std::span<const double> delta);

// Descending logit, ties to the smaller item id.
std::vector<ItemIndex> rank_items(std::span<const double> logits);

struct Checkpoint {
  ModelParams params;
  std::uint64_t init_seed = 0;
  std::vector<std::int64_t> vocab;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eisam
