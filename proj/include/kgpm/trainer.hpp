#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"
#include "kgpm/model.hpp"
#include "kgpm/rng.hpp"

namespace kgpm {

inline constexpr std::size_t kBatchSize = 128;
inline constexpr double kAdagradEpsilon = 1e-10;

// max(0, γ - M(tr) + M(tr⁻)) for one (positive, negative) pair.
inline double margin_pair_loss(double margin, double positive_score, double negative_score) {
  return std::max(0.0, margin - positive_score + negative_score);
}

// log(1 + exp(-y · M(tr))) for a labeled triple, y ∈ {-1, +1}; overflow-safe.
inline double cross_entropy_loss(double label, double score) {
  const double x = -label * score;
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// k corruptions of `positive`. Each flips a fair coin for the head or tail
/// slot and draws a replacement uniformly from the other |E|-1 entities.
/// With `filtered`, corruptions that are known true are redrawn (bounded).
inline std::vector<Triple> sample_negatives(Xoshiro256& rng, const Triple& positive, const KnowledgeGraph& graph,
                                            int k, bool filtered = false) {
  if (k < 1) throw ConfigError("number of negatives must be >= 1");
  const std::size_t n = graph.num_entities();
  if (n < 2) throw ConfigError("cannot corrupt triples of a graph with fewer than 2 entities");
  std::vector<Triple> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Triple neg = positive;
    for (int attempt = 0; attempt < 32; ++attempt) {
      neg = positive;
      const bool corrupt_head = rng.coin();
      EntityId& slot = corrupt_head ? neg.head : neg.tail;
      auto draw = static_cast<EntityId>(rng.below(n - 1));
      if (draw >= slot) ++draw;
      slot = draw;
      if (!filtered || !graph.is_known(neg)) break;
    }
    out.push_back(neg);
  }
  return out;
}

/// Dense gradient tables plus the list of rows touched since the last reset.
class GradientBuffer {
 public:
  explicit GradientBuffer(const EmbeddingModel& m)
      : entities_(m.entities.rows(), m.entities.cols()),
        relations_(m.relations.rows(), m.relations.cols()),
        entity_touched_(m.entities.rows(), 0),
        relation_touched_(m.relations.rows(), 0) {}

  std::span<double> entity(EntityId e) {
    if (!entity_touched_[e]) {
      entity_touched_[e] = 1;
      entity_rows_.push_back(e);
    }
    return entities_.row(e);
  }

  std::span<double> relation(RelationId r) {
    if (!relation_touched_[r]) {
      relation_touched_[r] = 1;
      relation_rows_.push_back(r);
    }
    return relations_.row(r);
  }

  const Matrix& entities() const { return entities_; }
  const Matrix& relations() const { return relations_; }
  const std::vector<EntityId>& entity_rows() const { return entity_rows_; }
  const std::vector<RelationId>& relation_rows() const { return relation_rows_; }

  void reset() {
    for (auto e : entity_rows_) {
      std::fill(entities_.row(e).begin(), entities_.row(e).end(), 0.0);
      entity_touched_[e] = 0;
    }
    for (auto r : relation_rows_) {
      std::fill(relations_.row(r).begin(), relations_.row(r).end(), 0.0);
      relation_touched_[r] = 0;
    }
    entity_rows_.clear();
    relation_rows_.clear();
  }

 private:
  Matrix entities_;
  Matrix relations_;
  std::vector<char> entity_touched_;
  std::vector<char> relation_touched_;
  std::vector<EntityId> entity_rows_;
  std::vector<RelationId> relation_rows_;
};

namespace detail {

inline double l2_term(const EmbeddingModel& m, const Triple& t, double weight, GradientBuffer* grad, double scale) {
  if (weight == 0.0) return 0.0;
  double loss = 0.0;
  auto add = [&](std::span<const double> row, std::span<double> g) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      loss += weight * row[i] * row[i];
      if (!g.empty()) g[i] += scale * 2.0 * weight * row[i];
    }
  };
  const bool with_grad = grad != nullptr;
  add(m.entities.row(t.head), with_grad ? grad->entity(t.head) : std::span<double>{});
  add(m.entities.row(t.tail), with_grad ? grad->entity(t.tail) : std::span<double>{});
  // RotatE phases are angles; an L2 pull toward 0 has no meaning for them.
  if (m.config.method != Method::kRotatE) {
    add(m.relations.row(t.relation), with_grad ? grad->relation(t.relation) : std::span<double>{});
  }
  return loss;
}

inline void add_score_gradient(const EmbeddingModel& m, const Triple& t, double upstream, GradientBuffer& grad) {
  if (upstream == 0.0) return;
  auto gh = grad.entity(t.head);
  auto gr = grad.relation(t.relation);
  auto gt = grad.entity(t.tail);
  if (t.head == t.tail) {
    // gh and gt alias; accumulate through a scratch row.
    std::vector<double> scratch_h(gh.size(), 0.0), scratch_t(gt.size(), 0.0);
    kernel::score_gradient(m.config.method, m.entities.row(t.head), m.relations.row(t.relation),
                           m.entities.row(t.tail), upstream, scratch_h, gr, scratch_t);
    for (std::size_t i = 0; i < gh.size(); ++i) gh[i] += scratch_h[i] + scratch_t[i];
    return;
  }
  kernel::score_gradient(m.config.method, m.entities.row(t.head), m.relations.row(t.relation),
                         m.entities.row(t.tail), upstream, gh, gr, gt);
}

}  // namespace detail

/// Loss of one positive with its negatives under the model's configured
/// loss, including the L2 term on every scored triple. When `grad` is given,
/// scale · ∂loss/∂θ is accumulated into it.
inline double example_loss(const EmbeddingModel& m, const Triple& positive, std::span<const Triple> negatives,
                           GradientBuffer* grad = nullptr, double scale = 1.0) {
  const auto& c = m.config;
  const double pos = score(m, positive);
  double loss = 0.0;
  if (c.loss == LossKind::kMarginRanking) {
    double pos_upstream = 0.0;
    for (const auto& neg : negatives) {
      const double ns = score(m, neg);
      const double l = margin_pair_loss(c.margin, pos, ns);
      loss += l;
      if (l > 0.0 && grad) {
        pos_upstream -= scale;
        detail::add_score_gradient(m, neg, scale, *grad);
      }
    }
    if (grad) detail::add_score_gradient(m, positive, pos_upstream, *grad);
  } else {
    loss += cross_entropy_loss(1.0, pos);
    if (grad) detail::add_score_gradient(m, positive, -scale * sigmoid(-pos), *grad);
    for (const auto& neg : negatives) {
      const double ns = score(m, neg);
      loss += cross_entropy_loss(-1.0, ns);
      if (grad) detail::add_score_gradient(m, neg, scale * sigmoid(ns), *grad);
    }
  }
  loss += detail::l2_term(m, positive, c.l2_weight, grad, scale);
  for (const auto& neg : negatives) loss += detail::l2_term(m, neg, c.l2_weight, grad, scale);
  return loss;
}

// U(-s/√d, s/√d) for every stored entry, drawn from the init stream.
inline EmbeddingModel initialize_model(const KnowledgeGraph& graph, const ModelConfig& config) {
  auto m = make_zero_model(config, graph.num_entities(), graph.num_relations());
  m.dataset_hash = graph.content_hash_hex();
  auto rng = make_stream(config.seed, Stream::kInit);
  const double bound = config.init_scale / std::sqrt(static_cast<double>(config.embedding_dim));
  for (auto& v : m.entities.data()) v = rng.uniform(-bound, bound);
  for (auto& v : m.relations.data()) v = rng.uniform(-bound, bound);
  return m;
}

struct TrainRun {
  ModelConfig config;
  std::vector<double> epoch_losses;  // mean loss per positive, per epoch
  EmbeddingModel model;
};

/// Seeded single-threaded training. The result is a pure function of the
/// graph and the config (seed included).
inline TrainRun train_run(const KnowledgeGraph& graph, const ModelConfig& config) {
  config.validate();
  if (graph.num_entities() < 2) throw ConfigError("graph needs at least 2 entities to sample negatives");
  const auto start = std::chrono::steady_clock::now();

  TrainRun run{config, {}, initialize_model(graph, config)};
  auto& model = run.model;
  auto shuffle_rng = make_stream(config.seed, Stream::kShuffle);
  auto negative_rng = make_stream(config.seed, Stream::kNegatives);

  GradientBuffer grad(model);
  Matrix entity_accum(model.entities.rows(), model.entities.cols());
  Matrix relation_accum(model.relations.rows(), model.relations.cols());
  const bool adagrad = config.optimizer == Optimizer::kAdagrad;
  const bool rotate = config.method == Method::kRotatE;

  std::vector<std::size_t> order(graph.train().size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto apply = [&](std::span<double> param, std::span<const double> g, std::span<double> accum, bool phases) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      if (adagrad) {
        accum[i] += g[i] * g[i];
        param[i] -= config.learning_rate * g[i] / (std::sqrt(accum[i]) + kAdagradEpsilon);
      } else {
        param[i] -= config.learning_rate * g[i];
      }
      if (phases) param[i] = wrap_phase(param[i]);
    }
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += kBatchSize) {
      const std::size_t end = std::min(order.size(), begin + kBatchSize);
      const double scale = 1.0 / static_cast<double>(end - begin);
      grad.reset();
      double batch_loss = 0.0;
      for (std::size_t b = begin; b < end; ++b) {
        const Triple& pos = graph.train()[order[b]];
        const auto negs =
            sample_negatives(negative_rng, pos, graph, config.negatives_per_positive, config.filtered_negatives);
        batch_loss += example_loss(model, pos, negs, &grad, scale);
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("non-finite loss in epoch " + std::to_string(epoch + 1) + " (method " +
                            std::string(to_string(config.method)) + ", learning_rate " +
                            std::to_string(config.learning_rate) + "); the learning rate is likely too high");
      }
      epoch_loss += batch_loss;
      for (auto e : grad.entity_rows()) apply(model.entities.row(e), grad.entities().row(e), entity_accum.row(e), false);
      for (auto r : grad.relation_rows())
        apply(model.relations.row(r), grad.relations().row(r), relation_accum.row(r), rotate);
    }
    run.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  if (!model.all_finite()) throw TrainingError("training produced non-finite parameters; lower the learning rate");
  model.trained_epochs = config.epochs;
  model.final_loss = run.epoch_losses.back();
  model.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

inline EmbeddingModel train(const KnowledgeGraph& graph, const ModelConfig& config) {
  return train_run(graph, config).model;
}

}  // namespace kgpm
