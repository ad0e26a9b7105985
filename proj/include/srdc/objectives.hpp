#pragma once

// Clustering objectives and auxiliary quantities: the discriminative
// KL-clustering loss with its closed-form auxiliary update, weighted source
// cross-entropy with soft selection, Student-t soft assignments for the
// generative route, k-means pseudo-labeling, and the hybrid loss bookkeeping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "srdc/errors.hpp"
#include "srdc/tensor.hpp"

namespace srdc {

namespace detail {
inline void check_row_stochastic(const Tensor& p, const char* who, double tol = 1e-8) {
  require(p.ndim() == 2 && p.cols() >= 1, std::string(who) + ": (n x K) matrix required");
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.cols(); ++k) {
      const double v = p.at(i, k);
      require(v >= -tol && v <= 1.0 + tol, std::string(who) + ": entry outside [0,1]");
      s += v;
    }
    require(std::abs(s - 1.0) <= tol, std::string(who) + ": row " + std::to_string(i) +
                                          " does not sum to 1");
  }
}

inline void check_labels(const std::vector<int>& labels, std::size_t k, const char* who) {
  for (int y : labels)
    require(y >= 1 && y <= static_cast<int>(k),
            std::string(who) + ": label " + std::to_string(y) + " outside [1," +
                std::to_string(k) + "]");
}

// x*log(x) with the 0*log(0) = 0 convention.
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }
}  // namespace detail

// Closed-form auxiliary update: q_{i,k} proportional to p_{i,k} divided by
// the square root of the k-th column sum, renormalized per row. The
// balance_weight generalizes the exponent to bw/(1+bw); 1 recovers the
// standard form.
inline Tensor auxiliary_update(const Tensor& p, double balance_weight = 1.0) {
  detail::check_row_stochastic(p, "auxiliary_update");
  detail::require(balance_weight >= 0.0, "auxiliary_update: balance weight must be >= 0");
  const std::size_t n = p.rows(), k = p.cols();
  const double expo = balance_weight / (1.0 + balance_weight);
  std::vector<double> colscale(k);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p.at(i, j);
    detail::require(s > 0.0, "auxiliary_update: zero column sum");
    colscale[j] = std::pow(s, expo);
  }
  std::vector<double> q(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double rowsum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      q[i * k + j] = p.at(i, j) / colscale[j];
      rowsum += q[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) q[i * k + j] /= rowsum;
  }
  return Tensor::constant({n, k}, std::move(q));
}

// KL(Q||P) + balance_weight * sum_k rho_k log rho_k, with rho the column
// means of Q. Q enters as a constant; gradients flow through P only.
inline Tensor discriminative_clustering_loss(const Tensor& p, const Tensor& q,
                                             double balance_weight = 1.0) {
  detail::check_row_stochastic(p, "discriminative_clustering_loss: P");
  detail::check_row_stochastic(q, "discriminative_clustering_loss: Q");
  detail::require(p.shape() == q.shape(), "discriminative_clustering_loss: P/Q shapes differ");
  const std::size_t n = p.rows(), k = p.cols();
  const Tensor q_const = q.detach();
  const Tensor kl =
      scale(sum(mul(q_const, sub(log(q_const), log(p)))), 1.0 / static_cast<double>(n));
  double balance = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double rho = 0.0;
    for (std::size_t i = 0; i < n; ++i) rho += q.at(i, j);
    balance += detail::xlogx(rho / static_cast<double>(n));
  }
  return add_scalar(kl, balance_weight * balance);
}

// The network-update form: plain cross-entropy against Q as soft labels.
// Identical gradient to the full clustering loss (the extra terms are
// constant in P).
inline Tensor target_network_loss(const Tensor& p, const Tensor& q) {
  detail::check_row_stochastic(p, "target_network_loss: P");
  detail::check_row_stochastic(q, "target_network_loss: Q");
  detail::require(p.shape() == q.shape(), "target_network_loss: P/Q shapes differ");
  return scale(sum(mul(q.detach(), log(p))), -1.0 / static_cast<double>(p.rows()));
}

// -(1/rows) * sum(W .* log P) for an arbitrary nonnegative weight matrix W.
// Covers the weighted source CE, the generative variants, and the
// segmentation weighted-combination loss.
inline Tensor soft_weighted_ce(const Tensor& p, const Tensor& weights) {
  detail::require(p.shape() == weights.shape(), "soft_weighted_ce: shape mismatch");
  return scale(sum(mul(weights.detach(), log(p))), -1.0 / static_cast<double>(p.rows()));
}

// One-hot rows scaled per instance; the weight matrix behind Eqs. of the
// weighted source losses.
inline Tensor label_weight_matrix(const std::vector<int>& labels, std::size_t k,
                                  const std::vector<double>& w) {
  detail::check_labels(labels, k, "label_weight_matrix");
  detail::require(labels.size() == w.size(), "label_weight_matrix: weight count mismatch");
  std::vector<double> m(labels.size() * k, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    m[i * k + static_cast<std::size_t>(labels[i] - 1)] = w[i];
  return Tensor::constant({labels.size(), k}, std::move(m));
}

// -(1/n_s) sum_i w_i log p_{i, y_i}.
inline Tensor weighted_source_ce(const Tensor& p_src, const std::vector<int>& labels,
                                 const std::vector<double>& w) {
  detail::check_row_stochastic(p_src, "weighted_source_ce: P");
  detail::require(labels.size() == p_src.rows(), "weighted_source_ce: label count mismatch");
  return soft_weighted_ce(p_src, label_weight_matrix(labels, p_src.cols(), w));
}

// Cosine-similarity soft selection: w = (1 + cos(mu_{y}, z)) / 2.
inline std::vector<double> soft_selection_weights(const std::vector<double>& z, std::size_t d,
                                                  std::size_t n, const std::vector<int>& labels,
                                                  const std::vector<double>& centroids,
                                                  std::size_t k) {
  detail::require(z.size() == d * n, "soft_selection_weights: feature buffer size mismatch");
  detail::require(centroids.size() == d * k, "soft_selection_weights: centroid buffer mismatch");
  detail::require(labels.size() == n, "soft_selection_weights: label count mismatch");
  detail::check_labels(labels, k, "soft_selection_weights");
  std::vector<double> cnorm(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < d; ++r) s += centroids[r * k + j] * centroids[r * k + j];
    cnorm[j] = std::sqrt(s);
    detail::require(cnorm[j] > 0.0, "soft_selection_weights: zero-norm centroid");
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(labels[i] - 1);
    double dot = 0.0, zn = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      dot += z[r * n + i] * centroids[r * k + j];
      zn += z[r * n + i] * z[r * n + i];
    }
    detail::require(zn > 0.0, "soft_selection_weights: zero-norm feature");
    w[i] = 0.5 * (1.0 + dot / (std::sqrt(zn) * cnorm[j]));
    w[i] = std::min(std::max(w[i], 0.0), 1.0);
  }
  return w;
}

// Student-t style soft assignment (n x K): softmax over exp((1+||z-c||^2)^-1).
// Differentiable in both the features and the centroids.
inline Tensor student_t_assignment(const Tensor& z, const Tensor& c) {
  detail::check_finite(z, "student_t_assignment");
  detail::check_finite(c, "student_t_assignment");
  return softmax_rows(recip(add_scalar(pairwise_sqdist(z, c), 1.0)));
}

// Same functional form as the discriminative objective, applied to the
// generative assignments and their auxiliary distribution.
inline Tensor generative_clustering_loss(const Tensor& p_tilde, const Tensor& q_tilde,
                                         double balance_weight = 1.0) {
  return discriminative_clustering_loss(p_tilde, q_tilde, balance_weight);
}

inline Tensor generative_source_loss(const Tensor& p_tilde_src, const std::vector<int>& labels,
                                     const std::vector<double>& w) {
  return weighted_source_ce(p_tilde_src, labels, w);
}

// ---------------------------------------------------------------------------
// k-means pseudo-labeling
// ---------------------------------------------------------------------------

struct KmeansResult {
  std::vector<double> centroids;  // (d x K) row-major
  std::vector<int> labels;        // 1-based assignments
  int iterations = 0;
  double sse = 0.0;
};

// Lloyd iterations from prediction-initialized assignments. Stops at an
// assignment fixpoint or after max_iter rounds. Empty clusters are re-seeded
// to the point farthest from its nearest seeded centroid.
inline KmeansResult kmeans_pseudolabel(const std::vector<double>& z, std::size_t d, std::size_t n,
                                       std::vector<int> assignments, std::size_t k,
                                       int max_iter = 100) {
  detail::require(z.size() == d * n, "kmeans: feature buffer size mismatch");
  detail::require(n >= k && k >= 1, "kmeans: need at least K points");
  detail::require(assignments.size() == n, "kmeans: assignment count mismatch");
  detail::check_labels(assignments, k, "kmeans");

  KmeansResult res;
  res.centroids.assign(d * k, 0.0);
  std::vector<std::size_t> counts(k, 0);
  auto sqdist_to = [&](std::size_t i, const std::vector<double>& cent, std::size_t j) {
    double s = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      const double diff = z[r * n + i] - cent[r * k + j];
      s += diff * diff;
    }
    return s;
  };

  for (int it = 0; it < max_iter; ++it) {
    // centroid update
    std::fill(res.centroids.begin(), res.centroids.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = static_cast<std::size_t>(assignments[i] - 1);
      ++counts[j];
      for (std::size_t r = 0; r < d; ++r) res.centroids[r * k + j] += z[r * n + i];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (counts[j] > 0)
        for (std::size_t r = 0; r < d; ++r)
          res.centroids[r * k + j] /= static_cast<double>(counts[j]);
    // re-seed empties to the point farthest from its nearest seeded centroid
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) continue;
      std::size_t pick = 0;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t jj = 0; jj < k; ++jj) {
          if (jj == j || counts[jj] == 0) continue;  // only seeded clusters count
          nearest = std::min(nearest, sqdist_to(i, res.centroids, jj));
        }
        if (std::isfinite(nearest) && nearest > best) {
          best = nearest;
          pick = i;
        }
      }
      for (std::size_t r = 0; r < d; ++r) res.centroids[r * k + j] = z[r * n + pick];
      counts[j] = 1;  // mark seeded
    }
    // assignment update
    bool changed = false;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = sqdist_to(i, res.centroids, 0);
      for (std::size_t j = 1; j < k; ++j) {
        const double dist = sqdist_to(i, res.centroids, j);
        if (dist < bd) {
          bd = dist;
          best = j;
        }
      }
      sse += bd;
      const int lab = static_cast<int>(best) + 1;
      if (assignments[i] != lab) {
        assignments[i] = lab;
        changed = true;
      }
    }
    res.sse = sse;
    res.iterations = it + 1;
    if (!changed) break;
  }
  res.labels = std::move(assignments);
  return res;
}

// ---------------------------------------------------------------------------
// Hybrid loss bookkeeping
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double l_fphi_t = 0.0;    // discriminative target clustering
  double l_fphi_s = 0.0;    // weighted source CE
  double l_srdisc = 0.0;    // l_fphi_t + lambda * l_fphi_s
  double l_phiphi_t = 0.0;  // generative target clustering
  double l_phiphi_s = 0.0;  // weighted generative source loss
  double l_srgenc = 0.0;    // l_phiphi_t + lambda * l_phiphi_s
  double l_total = 0.0;
  double lambda = 0.0;
};

inline LossBreakdown hybrid_loss(double l_fphi_t, double l_fphi_s, double l_phiphi_t,
                                 double l_phiphi_s, double lambda) {
  detail::require(lambda >= 0.0, "hybrid_loss: lambda must be >= 0");
  LossBreakdown b;
  b.l_fphi_t = l_fphi_t;
  b.l_fphi_s = l_fphi_s;
  b.l_phiphi_t = l_phiphi_t;
  b.l_phiphi_s = l_phiphi_s;
  b.lambda = lambda;
  b.l_srdisc = l_fphi_t + lambda * l_fphi_s;
  b.l_srgenc = l_phiphi_t + lambda * l_phiphi_s;
  b.l_total = b.l_srdisc + b.l_srgenc;
  return b;
}

}  // namespace srdc
