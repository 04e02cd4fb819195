#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"

namespace kgpm {

enum class Method { kTransE, kRotatE, kRescal, kDistMult, kComplEx };
enum class LossKind { kMarginRanking, kCrossEntropy };
enum class Optimizer { kSgd, kAdagrad };

inline constexpr Method kAllMethods[] = {Method::kTransE, Method::kRotatE, Method::kRescal, Method::kDistMult,
                                         Method::kComplEx};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kTransE: return "TransE";
    case Method::kRotatE: return "RotatE";
    case Method::kRescal: return "RESCAL";
    case Method::kDistMult: return "DistMult";
    case Method::kComplEx: return "ComplEx";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (auto m : kAllMethods) {
    std::string a(to_string(m)), b(s);
    for (auto* str : {&a, &b})
      for (auto& c : *str) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (a == b) return m;
  }
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

inline std::string_view to_string(LossKind l) {
  return l == LossKind::kMarginRanking ? "margin_ranking" : "cross_entropy";
}

inline LossKind parse_loss(std::string_view s) {
  if (s == "margin_ranking" || s == "margin") return LossKind::kMarginRanking;
  if (s == "cross_entropy" || s == "ce") return LossKind::kCrossEntropy;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

inline std::string_view to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adagrad"; }

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adagrad") return Optimizer::kAdagrad;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

// Every parameter that determines a trained model, seed included.
struct ModelConfig {
  Method method = Method::kComplEx;
  int embedding_dim = 16;
  LossKind loss = LossKind::kCrossEntropy;
  double margin = 1.0;  // γ of the margin ranking loss
  int negatives_per_positive = 10;
  double learning_rate = 0.1;
  int epochs = 50;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdagrad;
  double l2_weight = 0.0;
  double init_scale = 0.5;  // entries ~ U(-init_scale/sqrt(d), init_scale/sqrt(d))
  bool filtered_negatives = false;

  void validate() const {
    if (embedding_dim <= 0) throw ConfigError("embedding_dim must be positive");
    if (loss == LossKind::kMarginRanking && !(margin > 0)) throw ConfigError("margin must be > 0");
    if (negatives_per_positive <= 0) throw ConfigError("negatives_per_positive must be positive");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (!(l2_weight >= 0) || !std::isfinite(l2_weight)) throw ConfigError("l2_weight must be >= 0");
    if (!(init_scale > 0)) throw ConfigError("init_scale must be > 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Stored row width. Complex methods interleave (re, im) pairs.
inline std::size_t entity_width(Method m, std::size_t dim) {
  return (m == Method::kComplEx || m == Method::kRotatE) ? 2 * dim : dim;
}

inline std::size_t relation_width(Method m, std::size_t dim) {
  switch (m) {
    case Method::kComplEx: return 2 * dim;
    case Method::kRescal: return dim * dim;
    default: return dim;  // TransE, DistMult vectors; RotatE phases
  }
}

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// One trained scorer M(h, r, t). Immutable once training returns.
struct EmbeddingModel {
  ModelConfig config;
  Matrix entities;
  Matrix relations;
  int trained_epochs = 0;
  std::string dataset_hash;
  double final_loss = 0.0;
  double wall_clock_seconds = 0.0;  // informational; not serialized

  std::size_t num_entities() const noexcept { return entities.rows(); }
  std::size_t num_relations() const noexcept { return relations.rows(); }

  void check_triple(const Triple& t) const {
    if (t.head >= num_entities() || t.tail >= num_entities()) throw BoundsError("entity id out of range");
    if (t.relation >= num_relations()) throw BoundsError("relation id out of range");
  }

  bool all_finite() const {
    for (const auto* m : {&entities, &relations})
      for (double v : m->data())
        if (!std::isfinite(v)) return false;
    return true;
  }
};

// Shape-checked zero model for the given graph sizes.
inline EmbeddingModel make_zero_model(const ModelConfig& config, std::size_t n_entities, std::size_t n_relations) {
  config.validate();
  EmbeddingModel m;
  m.config = config;
  const auto d = static_cast<std::size_t>(config.embedding_dim);
  m.entities = Matrix(n_entities, entity_width(config.method, d));
  m.relations = Matrix(n_relations, relation_width(config.method, d));
  return m;
}

namespace kernel {

// All kernels take the three parameter rows of a triple. The evaluation
// order is fixed so that batch scoring reproduces single calls bit for bit.

inline double transe(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  double sq = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double v = (h[i] + r[i]) - t[i];
    sq += v * v;
  }
  return -std::sqrt(sq);
}

inline double distmult(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += (h[i] * r[i]) * t[i];
  return s;
}

// Re(<h, r, conj(t)>) over interleaved (re, im) pairs.
inline double complex_trilinear(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < h.size(); i += 2) {
    const double a = h[i], b = h[i + 1], c = r[i], d = r[i + 1], e = t[i], f = t[i + 1];
    s += (a * c - b * d) * e + (a * d + b * c) * f;
  }
  return s;
}

// -|| h ∘ e^{iφ} - t ||_2 with r holding the phases φ.
inline double rotate(std::span<const double> h, std::span<const double> phase, std::span<const double> t) {
  double sq = 0.0;
  for (std::size_t k = 0; k < phase.size(); ++k) {
    const double a = h[2 * k], b = h[2 * k + 1];
    const double c = std::cos(phase[k]), s = std::sin(phase[k]);
    const double re = (a * c - b * s) - t[2 * k];
    const double im = (a * s + b * c) - t[2 * k + 1];
    sq += re * re + im * im;
  }
  return -std::sqrt(sq);
}

// hᵀ W t, evaluated as Σ_j (Σ_i h_i W_ij) t_j.
inline double rescal(std::span<const double> h, std::span<const double> w, std::span<const double> t) {
  const std::size_t d = h.size();
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double hw = 0.0;
    for (std::size_t i = 0; i < d; ++i) hw += h[i] * w[i * d + j];
    s += hw * t[j];
  }
  return s;
}

inline double score(Method m, std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  switch (m) {
    case Method::kTransE: return transe(h, r, t);
    case Method::kRotatE: return rotate(h, r, t);
    case Method::kRescal: return rescal(h, r, t);
    case Method::kDistMult: return distmult(h, r, t);
    case Method::kComplEx: return complex_trilinear(h, r, t);
  }
  return 0.0;
}

/// Adds upstream * ∂score/∂{h, r, t} into gh, gr, gt.
inline void score_gradient(Method m, std::span<const double> h, std::span<const double> r,
                           std::span<const double> t, double upstream, std::span<double> gh, std::span<double> gr,
                           std::span<double> gt) {
  switch (m) {
    case Method::kTransE: {
      double sq = 0.0;
      for (std::size_t i = 0; i < h.size(); ++i) {
        const double v = (h[i] + r[i]) - t[i];
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      if (norm == 0.0) return;  // subgradient 0 at the apex
      for (std::size_t i = 0; i < h.size(); ++i) {
        const double g = -upstream * ((h[i] + r[i]) - t[i]) / norm;
        gh[i] += g;
        gr[i] += g;
        gt[i] -= g;
      }
      return;
    }
    case Method::kDistMult:
      for (std::size_t i = 0; i < h.size(); ++i) {
        gh[i] += upstream * r[i] * t[i];
        gr[i] += upstream * h[i] * t[i];
        gt[i] += upstream * h[i] * r[i];
      }
      return;
    case Method::kComplEx:
      for (std::size_t i = 0; i + 1 < h.size(); i += 2) {
        const double a = h[i], b = h[i + 1], c = r[i], d = r[i + 1], e = t[i], f = t[i + 1];
        gh[i] += upstream * (c * e + d * f);
        gh[i + 1] += upstream * (c * f - d * e);
        gr[i] += upstream * (a * e + b * f);
        gr[i + 1] += upstream * (a * f - b * e);
        gt[i] += upstream * (a * c - b * d);
        gt[i + 1] += upstream * (a * d + b * c);
      }
      return;
    case Method::kRotatE: {
      const std::size_t d = r.size();
      std::vector<double> re(d), im(d), cs(d), sn(d);
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        cs[k] = std::cos(r[k]);
        sn[k] = std::sin(r[k]);
        const double a = h[2 * k], b = h[2 * k + 1];
        re[k] = (a * cs[k] - b * sn[k]) - t[2 * k];
        im[k] = (a * sn[k] + b * cs[k]) - t[2 * k + 1];
        sq += re[k] * re[k] + im[k] * im[k];
      }
      const double norm = std::sqrt(sq);
      if (norm == 0.0) return;
      for (std::size_t k = 0; k < d; ++k) {
        const double a = h[2 * k], b = h[2 * k + 1];
        const double gre = -upstream * re[k] / norm;
        const double gim = -upstream * im[k] / norm;
        gh[2 * k] += gre * cs[k] + gim * sn[k];
        gh[2 * k + 1] += -gre * sn[k] + gim * cs[k];
        gr[k] += gre * (-a * sn[k] - b * cs[k]) + gim * (a * cs[k] - b * sn[k]);
        gt[2 * k] -= gre;
        gt[2 * k + 1] -= gim;
      }
      return;
    }
    case Method::kRescal: {
      const std::size_t d = h.size();
      for (std::size_t i = 0; i < d; ++i) {
        double wt = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          wt += r[i * d + j] * t[j];
          gr[i * d + j] += upstream * h[i] * t[j];
        }
        gh[i] += upstream * wt;
      }
      for (std::size_t j = 0; j < d; ++j) {
        double hw = 0.0;
        for (std::size_t i = 0; i < d; ++i) hw += h[i] * r[i * d + j];
        gt[j] += upstream * hw;
      }
      return;
    }
  }
}

}  // namespace kernel

/// Plausibility M(h, r, t); higher is more plausible.
inline double score(const EmbeddingModel& model, const Triple& t) {
  model.check_triple(t);
  return kernel::score(model.config.method, model.entities.row(t.head), model.relations.row(t.relation),
                       model.entities.row(t.tail));
}

/// Scores of every candidate for the query's open slot; entry e equals
/// score(model, q.complete(e)) exactly.
inline std::vector<double> score_all_candidates(const EmbeddingModel& model, const Query& q) {
  model.check_triple(q.complete(0));
  const std::size_t n = model.num_entities();
  if (q.fixed >= n) throw BoundsError("entity id out of range");
  std::vector<double> out(n);
  const auto method = model.config.method;
  const auto fixed = model.entities.row(q.fixed);
  const auto rel = model.relations.row(q.relation);
  if (q.direction == Direction::kTail) {
    for (std::size_t e = 0; e < n; ++e) out[e] = kernel::score(method, fixed, rel, model.entities.row(e));
  } else {
    for (std::size_t e = 0; e < n; ++e) out[e] = kernel::score(method, model.entities.row(e), rel, fixed);
  }
  return out;
}

// Wraps a phase into [-π, π).
inline double wrap_phase(double phi) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double w = std::fmod(phi + std::numbers::pi, kTwoPi);
  if (w < 0) w += kTwoPi;
  w -= std::numbers::pi;
  if (w >= std::numbers::pi) w = -std::numbers::pi;
  return w;
}

// Same graph dictionaries and same stored table shapes.
inline void check_compatible(const EmbeddingModel& a, const EmbeddingModel& b) {
  if (a.dataset_hash != b.dataset_hash) throw IncompatibleError("models were trained on different graphs");
  if (a.num_entities() != b.num_entities() || a.num_relations() != b.num_relations()) {
    throw IncompatibleError("models have different entity/relation dictionaries");
  }
}

inline void check_compatible(const EmbeddingModel& m, const KnowledgeGraph& g) {
  if (m.num_entities() != g.num_entities() || m.num_relations() != g.num_relations()) {
    throw IncompatibleError("model dictionaries do not match the graph");
  }
  if (!m.dataset_hash.empty() && m.dataset_hash != g.content_hash_hex()) {
    throw IncompatibleError("model was trained on a different graph (hash " + m.dataset_hash + " vs " +
                            g.content_hash_hex() + ")");
  }
}

}  // namespace kgpm
