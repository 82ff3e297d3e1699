#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "okdd/model.hpp"
#include "okdd/ops.hpp"
#include "okdd/rng.hpp"
#include "okdd/tensor.hpp"

namespace okdd {

// The two learned projections shared by all auxiliary peers. Handles alias the
// group-owned parameter tensors.
struct AttentionProjector {
  Tensor W_L;  // [feature_dim, proj_dim]
  Tensor W_E;
};

// Per-sample aggregation weights. rows[a](i, b) is the weight with which peer
// a attends peer b for sample i; every row is stochastic with positive entries.
struct AttentionMatrix {
  std::vector<Tensor> rows;  // each [batch, peers]

  int peers() const { return static_cast<int>(rows.size()); }
  int batch() const { return rows.empty() ? 0 : rows[0].shape()[0]; }
};

namespace detail {

inline void require_finite_features(std::span<const Tensor> features) {
  for (const Tensor& h : features)
    for (double v : h.values())
      if (!std::isfinite(v)) throw std::invalid_argument("attention: non-finite feature value");
}

inline AttentionMatrix embedded_gaussian_weights(std::span<const Tensor> peer_features,
                                                 const Tensor* wl, const Tensor* we) {
  const int peers = static_cast<int>(peer_features.size());
  if (peers < 2)
    throw std::invalid_argument("attention needs at least 2 peers, got " + std::to_string(peers));
  require_finite_features(peer_features);
  std::vector<Tensor> projected_l(peers), projected_e(peers);
  for (int a = 0; a < peers; ++a) {
    projected_l[a] = wl ? matmul(peer_features[a], *wl) : peer_features[a];
    projected_e[a] = we ? matmul(peer_features[a], *we) : peer_features[a];
  }
  AttentionMatrix alpha;
  alpha.rows.reserve(peers);
  for (int a = 0; a < peers; ++a) {
    std::vector<Tensor> score_cols;
    score_cols.reserve(peers);
    for (int b = 0; b < peers; ++b)
      score_cols.push_back(sum_axis(mul(projected_l[a], projected_e[b]), 1));
    alpha.rows.push_back(softmax(concat_cols(score_cols), 1.0));
  }
  return alpha;
}

}  // namespace detail

// alpha_ab = exp(L(h_a) . E(h_b)) / sum_f exp(L(h_a) . E(h_f)), per sample.
// Differentiable with respect to the features and both projections.
inline AttentionMatrix attention_weights(std::span<const Tensor> peer_features,
                                         const AttentionProjector& proj) {
  return detail::embedded_gaussian_weights(peer_features, &proj.W_L, &proj.W_E);
}

enum class AblationKind { random, mean, identity_asymmetry, self_only };

inline AblationKind ablation_kind_from_string(const std::string& s) {
  if (s == "random") return AblationKind::random;
  if (s == "mean") return AblationKind::mean;
  if (s == "identity_asymmetry") return AblationKind::identity_asymmetry;
  if (s == "self_only") return AblationKind::self_only;
  throw std::invalid_argument("unknown ablation kind '" + s + "'");
}

inline std::string to_string(AblationKind k) {
  switch (k) {
    case AblationKind::random: return "random";
    case AblationKind::mean: return "mean";
    case AblationKind::identity_asymmetry: return "identity_asymmetry";
    case AblationKind::self_only: return "self_only";
  }
  return "?";
}

// Replacement weight generators for the attention ablations. `rng` is consumed
// only by `random` (one matrix per batch, shared across samples); `features`
// are read only by `identity_asymmetry`.
inline AttentionMatrix ablation_weights(AblationKind kind, int peers, int batch, Rng* rng,
                                        std::span<const Tensor> features = {}) {
  if (peers < 2)
    throw std::invalid_argument("ablation weights need at least 2 peers, got " +
                                std::to_string(peers));
  AttentionMatrix alpha;
  switch (kind) {
    case AblationKind::mean: {
      for (int a = 0; a < peers; ++a)
        alpha.rows.push_back(Tensor::filled({batch, peers}, 1.0 / peers));
      break;
    }
    case AblationKind::self_only: {
      for (int a = 0; a < peers; ++a) {
        std::vector<double> row(static_cast<std::size_t>(batch) * peers, 0.0);
        for (int i = 0; i < batch; ++i) row[static_cast<std::size_t>(i) * peers + a] = 1.0;
        alpha.rows.push_back(Tensor::of({batch, peers}, std::move(row)));
      }
      break;
    }
    case AblationKind::random: {
      if (!rng) throw std::invalid_argument("random ablation needs an rng");
      for (int a = 0; a < peers; ++a) {
        std::vector<double> w(static_cast<std::size_t>(peers));
        double s = 0.0;
        for (double& v : w) {
          v = 1.0 - rng->uniform01();  // (0, 1]
          s += v;
        }
        std::vector<double> row(static_cast<std::size_t>(batch) * peers);
        for (int i = 0; i < batch; ++i)
          for (int b = 0; b < peers; ++b) row[static_cast<std::size_t>(i) * peers + b] = w[b] / s;
        alpha.rows.push_back(Tensor::of({batch, peers}, std::move(row)));
      }
      break;
    }
    case AblationKind::identity_asymmetry: {
      if (features.size() != static_cast<std::size_t>(peers))
        throw std::invalid_argument("identity_asymmetry ablation needs the peer features");
      return detail::embedded_gaussian_weights(features, nullptr, nullptr);
    }
  }
  return alpha;
}

// t_a = sum_b alpha_ab * q'_b. Peer predictions entering the sum are constants
// when detach_targets is set; alpha stays differentiable either way.
inline std::vector<Tensor> derive_peer_targets(const AttentionMatrix& alpha,
                                               std::span<const Tensor> q_prime_peers,
                                               bool detach_targets = true) {
  const int peers = alpha.peers();
  if (static_cast<int>(q_prime_peers.size()) != peers)
    throw ShapeError("derive_peer_targets: " + std::to_string(q_prime_peers.size()) +
                     " peer predictions for " + std::to_string(peers) + " attention rows");
  std::vector<Tensor> sources;
  sources.reserve(peers);
  for (const Tensor& q : q_prime_peers)
    sources.push_back(detach_targets ? detach(q) : q);
  std::vector<Tensor> targets;
  targets.reserve(peers);
  for (int a = 0; a < peers; ++a) {
    Tensor t = scale_rows(select_col(alpha.rows[a], 0), sources[0]);
    for (int b = 1; b < peers; ++b)
      t = add(t, scale_rows(select_col(alpha.rows[a], b), sources[b]));
    targets.push_back(std::move(t));
  }
  return targets;
}

// Figure-style variant: aggregate logits, then soften the weighted sum.
inline std::vector<Tensor> derive_peer_targets_from_logits(const AttentionMatrix& alpha,
                                                           std::span<const Tensor> peer_logits,
                                                           double temperature,
                                                           bool detach_targets = true) {
  const int peers = alpha.peers();
  if (static_cast<int>(peer_logits.size()) != peers)
    throw ShapeError("derive_peer_targets_from_logits: " + std::to_string(peer_logits.size()) +
                     " peer logits for " + std::to_string(peers) + " attention rows");
  std::vector<Tensor> sources;
  sources.reserve(peers);
  for (const Tensor& g : peer_logits) sources.push_back(detach_targets ? detach(g) : g);
  std::vector<Tensor> targets;
  targets.reserve(peers);
  for (int a = 0; a < peers; ++a) {
    Tensor z = scale_rows(select_col(alpha.rows[a], 0), sources[0]);
    for (int b = 1; b < peers; ++b)
      z = add(z, scale_rows(select_col(alpha.rows[a], b), sources[b]));
    targets.push_back(softmax(z, temperature));
  }
  return targets;
}

// First-level distillation: sum over auxiliary peers of KL(t_a, q'_a),
// each term batch-averaged.
inline Tensor dis1_loss(std::span<const Tensor> targets, std::span<const Tensor> q_prime_peers) {
  if (targets.size() != q_prime_peers.size() || targets.size() < 2)
    throw std::invalid_argument("dis1_loss: needs matching targets/predictions for >= 2 peers");
  Tensor loss = kl_divergence(targets[0], q_prime_peers[0]);
  for (std::size_t a = 1; a < targets.size(); ++a)
    loss = add(loss, kl_divergence(targets[a], q_prime_peers[a]));
  return loss;
}

// Leader target: the plain average of the auxiliary peers' soft predictions.
inline Tensor leader_target(std::span<const Tensor> q_prime_peers, bool detach_targets = true) {
  if (q_prime_peers.empty()) throw std::invalid_argument("leader_target: no peers");
  Tensor acc = detach_targets ? detach(q_prime_peers[0]) : q_prime_peers[0];
  for (std::size_t b = 1; b < q_prime_peers.size(); ++b)
    acc = add(acc, detach_targets ? detach(q_prime_peers[b]) : q_prime_peers[b]);
  return scale(acc, 1.0 / static_cast<double>(q_prime_peers.size()));
}

inline Tensor leader_target_from_logits(std::span<const Tensor> peer_logits, double temperature,
                                        bool detach_targets = true) {
  if (peer_logits.empty()) throw std::invalid_argument("leader_target: no peers");
  Tensor acc = detach_targets ? detach(peer_logits[0]) : peer_logits[0];
  for (std::size_t b = 1; b < peer_logits.size(); ++b)
    acc = add(acc, detach_targets ? detach(peer_logits[b]) : peer_logits[b]);
  return softmax(scale(acc, 1.0 / static_cast<double>(peer_logits.size())), temperature);
}

// Second-level distillation: KL(t_m, q'_m) against the peer-average target.
inline Tensor dis2_loss(std::span<const Tensor> q_prime_peers, const Tensor& q_prime_leader,
                        bool detach_targets = true) {
  return kl_divergence(leader_target(q_prime_peers, detach_targets), q_prime_leader);
}

struct DistillOptions {
  double temperature = 3.0;
  bool detach_targets = true;
  bool aggregate_logits = false;
};

struct LossBreakdown {
  std::vector<double> ce;  // per student, leader last
  double dis1 = 0.0;
  double dis2 = 0.0;
  double kd = 0.0;
  double total = 0.0;
};

// Total objective: sum_a CE(q_a, labels) + rampup * T^2 * (dis1 + dis2).
// Hard-label terms use the T=1 predictions, distillation the softened ones.
inline std::pair<Tensor, LossBreakdown> okddip_total_loss(const GroupForwardOutput& out,
                                                          std::span<const int> labels,
                                                          const AttentionMatrix& alpha,
                                                          const DistillOptions& opts,
                                                          double rampup) {
  if (!(rampup >= 0.0 && rampup <= 1.0))
    throw std::invalid_argument("rampup must lie in [0,1], got " + std::to_string(rampup));
  const int m = out.m();
  LossBreakdown bd;
  Tensor ce_total;
  for (int a = 0; a < m; ++a) {
    Tensor ce = cross_entropy(out.q[a], labels);
    bd.ce.push_back(ce.item());
    ce_total = a == 0 ? ce : add(ce_total, ce);
  }
  std::span<const Tensor> peers_q(out.q_prime.data(), static_cast<std::size_t>(m - 1));
  std::span<const Tensor> peers_g(out.logits.data(), static_cast<std::size_t>(m - 1));
  const std::vector<Tensor> targets =
      opts.aggregate_logits
          ? derive_peer_targets_from_logits(alpha, peers_g, opts.temperature, opts.detach_targets)
          : derive_peer_targets(alpha, peers_q, opts.detach_targets);
  Tensor d1 = dis1_loss(targets, peers_q);
  Tensor tm = opts.aggregate_logits
                  ? leader_target_from_logits(peers_g, opts.temperature, opts.detach_targets)
                  : leader_target(peers_q, opts.detach_targets);
  Tensor d2 = kl_divergence(tm, out.q_prime[m - 1]);
  bd.dis1 = d1.item();
  bd.dis2 = d2.item();
  const double w = rampup * opts.temperature * opts.temperature;
  Tensor total = add(ce_total, scale(add(d1, d2), w));
  bd.total = total.item();
  return {total, bd};
}

// T^2-scaled KL against a frozen teacher's softened prediction.
inline Tensor kd_teacher_kl(const Tensor& q_prime, const Tensor& teacher_logits,
                            double temperature) {
  Tensor t = softmax(detach(teacher_logits), temperature);
  return scale(kl_divergence(t, q_prime), temperature * temperature);
}

// Classic teacher-guided distillation loss: CE + T^2 * KL(teacher, student).
inline Tensor kd_teacher_loss(const Tensor& q, const Tensor& q_prime,
                              const Tensor& teacher_logits, std::span<const int> labels,
                              double temperature) {
  return add(cross_entropy(q, labels), kd_teacher_kl(q_prime, teacher_logits, temperature));
}

// Verification probe for the high-temperature MSE view of the KL loss: the
// gradient of T^2 * KL(t, q') with respect to the student logits, taken through
// the tape, is compared against the matching-logits limit (z - v) / classes.
// Returns the relative L2 gap. Both logit sets are zero-meaned per row first.
inline double mse_approximation_gap(const Tensor& student_logits, const Tensor& target_logits,
                                    double temperature) {
  detail::require_same_shape("mse_approximation_gap", student_logits, target_logits);
  detail::require_rank("mse_approximation_gap", student_logits, 2);
  const int rows = student_logits.shape()[0], cols = student_logits.shape()[1];
  auto zero_meaned = [&](const Tensor& t) {
    std::vector<double> v(t.values().begin(), t.values().end());
    for (int i = 0; i < rows; ++i) {
      double mean = 0.0;
      for (int j = 0; j < cols; ++j) mean += v[static_cast<std::size_t>(i) * cols + j];
      mean /= cols;
      for (int j = 0; j < cols; ++j) v[static_cast<std::size_t>(i) * cols + j] -= mean;
    }
    return v;
  };
  const std::vector<double> zv = zero_meaned(student_logits);
  const std::vector<double> vv = zero_meaned(target_logits);
  Tensor z = Tensor::of({rows, cols}, zv, true);
  Tensor v = Tensor::of({rows, cols}, vv, false);

  std::vector<double> grad_kl;
  {
    Tape tape;
    Tensor t = softmax(v, temperature);
    Tensor loss = scale(kl_divergence(t, softmax(z, temperature)),
                        temperature * temperature);
    tape.backward(loss);
    grad_kl.assign(z.grad().begin(), z.grad().end());
  }
  double num = 0.0, den = 0.0, kl_norm = 0.0;
  for (std::size_t i = 0; i < grad_kl.size(); ++i) {
    const double g_mse = (zv[i] - vv[i]) / (static_cast<double>(cols) * rows);
    num += (grad_kl[i] - g_mse) * (grad_kl[i] - g_mse);
    den += g_mse * g_mse;
    kl_norm += grad_kl[i] * grad_kl[i];
  }
  // both routes numerically zero means a perfect match (identical logits)
  if (std::sqrt(den) < 1e-12) return std::sqrt(kl_norm) < 1e-12 ? 0.0 : 1.0;
  return std::sqrt(num) / std::sqrt(den);
}

}  // namespace okdd
