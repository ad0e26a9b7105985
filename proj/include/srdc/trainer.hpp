#pragma once

// End-to-end training: alternating auxiliary/network updates over the hybrid
// discriminative + generative clustering objective with structural source
// regularization, per-epoch soft-selection refresh, ablation switches, and a
// gradient-reversal domain-alignment baseline for comparison runs.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "srdc/centroids.hpp"
#include "srdc/data.hpp"
#include "srdc/errors.hpp"
#include "srdc/evalkit.hpp"
#include "srdc/nn.hpp"
#include "srdc/objectives.hpp"
#include "srdc/optim.hpp"
#include "srdc/rng.hpp"
#include "srdc/schedules.hpp"
#include "srdc/tensor.hpp"

namespace srdc {

struct TrainConfig {
  // architecture
  std::size_t feat_dim = 32;                    // d
  std::vector<std::size_t> phi_hidden = {64, 64};
  std::size_t clf_hidden = 32;                  // h
  std::size_t heads = 4;                        // m
  // loop
  int epochs = 100;
  int warmup_epochs = 0;  // plain source-CE epochs before the clustering phase
  std::size_t batch = 64;
  std::size_t iters_per_epoch = 0;  // 0: ceil(max(n_s, n_t) / batch)
  // schedules
  double lambda_fixed = -1.0;  // >= 0 pins lambda instead of the ramp
  double lambda_gamma = 10.0;
  enum class LambdaOn { source, target } lambda_on = LambdaOn::source;
  double eta0 = 0.01, lr_alpha = 10.0, lr_gamma = 0.75;
  double momentum = 0.9, weight_decay = 1e-4;
  double adam_lr = 1e-3;
  // ablation switches
  bool use_disc = true;
  bool use_genc = true;
  bool use_source_reg = true;
  bool use_soft_selection = true;
  // knobs
  double balance_weight = 1.0;
  double whiten_floor = kWhitenFloor;
  std::uint64_t seed = 1;
  // gradient-reversal baseline (replaces the clustering objective entirely)
  bool grl_mode = false;
  double grl_coef_max = 1.0;

  void validate() const {
    detail::require(epochs >= 0 && warmup_epochs >= 0, "config: epochs must be >= 0");
    detail::require(batch >= 2, "config: batch size must be >= 2");
    detail::require(eta0 > 0.0 && adam_lr > 0.0, "config: learning rates must be positive");
    detail::require(feat_dim >= 1 && heads >= 1 && feat_dim % heads == 0,
                    "config: feature dim must be divisible by the head count");
    detail::require(balance_weight >= 0.0, "config: balance weight must be >= 0");
  }

  bool source_only() const { return !use_disc && !use_genc && !grl_mode; }
};

// Fixed RunMetrics schema; one row per completed epoch.
inline std::vector<std::string> run_metric_columns() {
  return {"epoch",
          "lambda",
          "eta",
          "l_fphi_t",
          "l_fphi_s",
          "l_srdisc",
          "l_phiphi_t",
          "l_phiphi_s",
          "l_srgenc",
          "l_total",
          "l_domain",
          "acc_train_t",
          "acc_test_t",
          "cluster_entropy_t",
          "instance_to_centroid_src",
          "instance_to_centroid_tgt",
          "insmean_to_centroid_src",
          "insmean_to_centroid_tgt",
          "srcinsmean_to_tgtinsmean",
          "instance_to_center_src",
          "instance_to_center_tgt",
          "insmean_to_center_src",
          "insmean_to_center_tgt",
          "instance_to_insmean_src",
          "instance_to_insmean_tgt"};
}

namespace detail {

// Independent cyclic shuffle per domain; reshuffles whenever the index pool
// is exhausted.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, Rng rng) : rng_(std::move(rng)) {
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

inline Tensor gather_cols(const LabeledSet& set, const std::vector<std::size_t>& idx) {
  std::vector<double> v(set.dim * idx.size());
  for (std::size_t r = 0; r < set.dim; ++r)
    for (std::size_t j = 0; j < idx.size(); ++j) v[r * idx.size() + j] = set.feature(r, idx[j]);
  return Tensor::constant({set.dim, idx.size()}, std::move(v));
}

inline Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& idx) {
  std::vector<double> v(idx.size() * m.cols());
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (std::size_t c = 0; c < m.cols(); ++c) v[j * m.cols() + c] = m.at(idx[j], c);
  return Tensor::constant({idx.size(), m.cols()}, std::move(v));
}

inline std::vector<std::vector<double>> snapshot_params(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> s;
  s.reserve(params.size());
  for (const Tensor& p : params) s.push_back(p.values());
  return s;
}

inline void restore_params(std::vector<Tensor>& params,
                           const std::vector<std::vector<double>>& snap) {
  require(params.size() == snap.size(), "restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_values() = snap[i];
}

inline double label_entropy(const std::vector<int>& labels, std::size_t k) {
  std::vector<std::size_t> counts(k, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y - 1)];
  double h = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (!counts[j]) continue;
    const double p = static_cast<double>(counts[j]) / static_cast<double>(labels.size());
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace detail

// Training driver for one run. The target set enters unlabeled; evaluation
// against held labels happens outside this class.
class Trainer {
 public:
  struct EpochStats {
    LossBreakdown losses;      // epoch means, bookkeeping per the hybrid split
    double domain_loss = 0.0;  // gradient-reversal baseline only
    double lambda = 0.0;
    double eta = 0.0;
  };

  // Called once per iteration with the per-batch losses; used by tests.
  using IterationHook =
      std::function<void(int epoch, std::size_t iter, const LossBreakdown&, const Tensor& q_batch)>;

  Trainer(TrainConfig config, LabeledSet source, LabeledSet target)
      : cfg_(std::move(config)), source_(std::move(source)), target_(std::move(target)) {
    cfg_.validate();
    detail::require(source_.labeled(), "trainer: source set must be labeled");
    detail::require(!target_.labeled(), "trainer: target set must arrive unlabeled");
    detail::require(source_.dim == target_.dim, "trainer: domain dimensions differ");
    int max_label = 0;
    for (int y : source_.labels) max_label = std::max(max_label, y);
    k_ = static_cast<std::size_t>(max_label);
    detail::check_labels(source_.labels, k_, "trainer: source labels");

    Rng master(cfg_.seed);
    Rng model_rng = master.fork(0x01);
    Rng learner_rng = master.fork(0x02);
    Rng dom_rng = master.fork(0x05);
    std::vector<std::size_t> widths{source_.dim};
    widths.insert(widths.end(), cfg_.phi_hidden.begin(), cfg_.phi_hidden.end());
    widths.push_back(cfg_.feat_dim);
    net_ = build_network(widths, cfg_.clf_hidden, k_, model_rng);
    learner_ = CentroidLearner(cfg_.feat_dim, k_, cfg_.heads, learner_rng);
    if (cfg_.grl_mode)
      domain_head_ = Mlp(std::vector<std::size_t>{cfg_.feat_dim, 32, 1}, dom_rng);

    cycler_src_ = std::make_unique<detail::BatchCycler>(source_.count, master.fork(0x03));
    cycler_tgt_ = std::make_unique<detail::BatchCycler>(target_.count, master.fork(0x04));

    std::vector<Tensor> sgd_params = net_.parameters();
    if (cfg_.grl_mode) domain_head_.collect(sgd_params);
    sgd_ = std::make_unique<SgdMomentum>(sgd_params, cfg_.eta0, cfg_.momentum,
                                         cfg_.weight_decay);
    adam_ = std::make_unique<Adam>(learner_.parameters(), cfg_.adam_lr);

    weights_.assign(source_.count, 1.0);
  }

  std::size_t num_classes() const { return k_; }
  const Network& network() const { return net_; }
  const CentroidLearner& learner() const { return learner_; }
  const std::vector<int>& pseudo_labels() const { return pseudo_labels_; }
  const std::vector<double>& source_weights() const { return weights_; }
  int epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }

  void set_iteration_hook(IterationHook hook) { hook_ = std::move(hook); }

  std::size_t iterations_per_epoch() const {
    if (cfg_.iters_per_epoch > 0) return cfg_.iters_per_epoch;
    const std::size_t n = std::max(source_.count, target_.count);
    return (n + cfg_.batch - 1) / cfg_.batch;
  }

  // One full epoch. The optional warmup phase runs plain source CE; the
  // clustering phase then starts with the one-hot k-means initialization of
  // the auxiliary distributions and follows the alternating scheme.
  EpochStats run_epoch() {
    const bool warm = warmup_done_ < cfg_.warmup_epochs;
    double lam = 0.0, eta = cfg_.eta0;
    if (warm) {
      ++warmup_done_;
    } else {
      if (epoch_ == 0) init_auxiliaries();  // step 1, in the warmed feature space
      ++epoch_;
      const double i = normalized_epoch(epoch_, std::max(epoch_, cfg_.epochs));
      lam = cfg_.lambda_fixed >= 0.0 ? cfg_.lambda_fixed
                                     : lambda_schedule(i, cfg_.lambda_gamma);
      if (cfg_.source_only()) lam = 1.0;  // plain supervised CE baseline
      eta = lr_schedule(i, cfg_.eta0, cfg_.lr_alpha, cfg_.lr_gamma);
    }
    sgd_->set_lr(eta);

    EpochStats stats;
    stats.lambda = lam;
    stats.eta = eta;
    const std::size_t iters = iterations_per_epoch();
    for (std::size_t it = 0; it < iters; ++it) {
      const auto batch = warm ? run_warmup_iteration(it) : run_iteration(it, lam);
      stats.losses.l_fphi_t += batch.first.l_fphi_t;
      stats.losses.l_fphi_s += batch.first.l_fphi_s;
      stats.losses.l_phiphi_t += batch.first.l_phiphi_t;
      stats.losses.l_phiphi_s += batch.first.l_phiphi_s;
      stats.domain_loss += batch.second;
    }
    const double inv = 1.0 / static_cast<double>(iters);
    stats.losses = hybrid_loss(stats.losses.l_fphi_t * inv, stats.losses.l_fphi_s * inv,
                               stats.losses.l_phiphi_t * inv, stats.losses.l_phiphi_s * inv, lam);
    stats.domain_loss *= inv;
    refresh_weights_and_pseudolabels(warm);
    return stats;
  }

  int total_epochs() const { return cfg_.warmup_epochs + cfg_.epochs; }

  // Forward passes without recording gradients (parameters detached).
  Tensor infer_features(const LabeledSet& set) const {
    return net_.features(set.feature_tensor()).detach();
  }
  Tensor infer_probabilities(const Tensor& features) const {
    return net_.probabilities(features).detach();
  }

  // Generative route: assignments of whitened features to learner centroids.
  Tensor infer_assignments(const Tensor& raw_features) const {
    const Tensor zw = batch_whiten(raw_features, cfg_.whiten_floor).detach();
    const Tensor c = current_centroids();
    return student_t_assignment(zw, c).detach();
  }

  // Centroids from whitened features of both domains. Attention is quadratic
  // in the column count, so the learner sees an evenly strided subsample of
  // at most 256 columns per domain (centroid generation is batch-level during
  // training as well).
  Tensor current_centroids() const {
    auto strided = [](const LabeledSet& set, std::size_t cap) {
      std::vector<std::size_t> idx;
      const std::size_t n = std::min(set.count, cap);
      idx.reserve(n);
      for (std::size_t j = 0; j < n; ++j) idx.push_back(j * set.count / n);
      return idx;
    };
    const Tensor xs = detail::gather_cols(source_, strided(source_, 256));
    const Tensor xt = detail::gather_cols(target_, strided(target_, 256));
    const Tensor zs = net_.features(xs).detach();
    const Tensor zt = net_.features(xt).detach();
    return learner_(whiten_and_concat(zs, zt, cfg_.whiten_floor)).detach();
  }

  std::vector<Tensor> all_parameters() const {
    std::vector<Tensor> p = net_.parameters();
    auto lp = learner_.parameters();
    p.insert(p.end(), lp.begin(), lp.end());
    if (cfg_.grl_mode) domain_head_.collect(p);
    return p;
  }

 private:
  void init_auxiliaries() {
    const Tensor z = infer_features(target_);
    const Tensor p = infer_probabilities(z);
    const auto km = kmeans_pseudolabel(z.values(), cfg_.feat_dim, target_.count,
                                       argmax_rows(p), k_);
    pseudo_labels_ = km.labels;
    target_centroids_ = km.centroids;
    std::vector<double> onehot(target_.count * k_, 0.0);
    for (std::size_t i = 0; i < target_.count; ++i)
      onehot[i * k_ + static_cast<std::size_t>(pseudo_labels_[i] - 1)] = 1.0;
    q_init_ = Tensor::constant({target_.count, k_}, onehot);
  }

  // Algorithm step 14: k-means refresh in the current feature space, then
  // new cosine soft-selection weights. Weights change only at epoch
  // boundaries and never during warmup.
  void refresh_weights_and_pseudolabels(bool warm) {
    const Tensor zt = infer_features(target_);
    const Tensor pt = infer_probabilities(zt);
    const auto km = kmeans_pseudolabel(zt.values(), cfg_.feat_dim, target_.count,
                                       argmax_rows(pt), k_);
    pseudo_labels_ = km.labels;
    target_centroids_ = km.centroids;
    if (!warm && cfg_.use_soft_selection && cfg_.use_source_reg && !cfg_.source_only() &&
        !cfg_.grl_mode) {
      const Tensor zs = infer_features(source_);
      weights_ = soft_selection_weights(zs.values(), cfg_.feat_dim, source_.count,
                                        source_.labels, target_centroids_, k_);
    }
  }

  std::pair<LossBreakdown, double> run_warmup_iteration(std::size_t it) {
    const auto idx_s = cycler_src_->next(cfg_.batch);
    cycler_tgt_->next(cfg_.batch);  // keep domain cursors aligned across phases
    const Tensor x_s = detail::gather_cols(source_, idx_s);
    std::vector<int> y_s(idx_s.size());
    for (std::size_t j = 0; j < idx_s.size(); ++j) y_s[j] = source_.labels[idx_s[j]];
    const Tensor p_s = net_.probabilities(net_.features(x_s));
    const Tensor ce = weighted_source_ce(p_s, y_s, std::vector<double>(y_s.size(), 1.0));
    if (!std::isfinite(ce.item()))
      throw numerical_error("trainer: non-finite warmup loss at iteration " + std::to_string(it));
    backward(ce);
    sgd_->step();
    LossBreakdown batch;
    batch.l_fphi_s = ce.item();
    return {batch, 0.0};
  }

  std::pair<LossBreakdown, double> run_iteration(std::size_t it, double lam) {
    const auto idx_s = cycler_src_->next(cfg_.batch);
    const auto idx_t = cycler_tgt_->next(cfg_.batch);
    const Tensor x_s = detail::gather_cols(source_, idx_s);
    const Tensor x_t = detail::gather_cols(target_, idx_t);
    std::vector<int> y_s(idx_s.size());
    std::vector<double> w_s(idx_s.size());
    for (std::size_t j = 0; j < idx_s.size(); ++j) {
      y_s[j] = source_.labels[idx_s[j]];
      w_s[j] = weights_[idx_s[j]];
    }

    const Tensor z_s = net_.features(x_s);
    const Tensor z_t = net_.features(x_t);

    if (cfg_.grl_mode) return run_grl_iteration(it, lam, z_s, z_t, y_s);

    const Tensor p_s = net_.probabilities(z_s);
    const Tensor p_t = net_.probabilities(z_t);

    const double lam_src = cfg_.lambda_on == TrainConfig::LambdaOn::source ? lam : 1.0;
    const double lam_tgt = cfg_.lambda_on == TrainConfig::LambdaOn::source ? 1.0 : lam;

    Tensor q_t = epoch_ == 1 ? detail::gather_rows(q_init_, idx_t)
                             : auxiliary_update(p_t.detach(), cfg_.balance_weight);

    Tensor objective = Tensor::scalar(0.0);
    LossBreakdown batch;
    batch.lambda = lam;

    const Tensor l_disc_t = discriminative_clustering_loss(p_t, q_t, cfg_.balance_weight);
    batch.l_fphi_t = l_disc_t.item();
    if (cfg_.use_disc) objective = add(objective, scale(l_disc_t, lam_tgt));

    if (cfg_.source_only()) {
      const Tensor ce = weighted_source_ce(p_s, y_s, std::vector<double>(y_s.size(), 1.0));
      batch.l_fphi_s = ce.item();
      objective = add(objective, ce);
    } else if (cfg_.use_source_reg && cfg_.use_disc) {
      // the classifier-route source term; belongs to the discriminative branch
      const Tensor ce = weighted_source_ce(p_s, y_s, w_s);
      batch.l_fphi_s = ce.item();
      objective = add(objective, scale(ce, lam_src));
    }

    if (cfg_.use_genc) {
      const Tensor zw_s = batch_whiten(z_s, cfg_.whiten_floor);
      const Tensor zw_t = batch_whiten(z_t, cfg_.whiten_floor);
      const Tensor c = learner_(concat_cols(zw_s, zw_t));
      const Tensor pt_t = student_t_assignment(zw_t, c);
      const Tensor qt_t = epoch_ == 1 ? detail::gather_rows(q_init_, idx_t)
                                      : auxiliary_update(pt_t.detach(), cfg_.balance_weight);
      const Tensor l_gen_t = generative_clustering_loss(pt_t, qt_t, cfg_.balance_weight);
      batch.l_phiphi_t = l_gen_t.item();
      objective = add(objective, scale(l_gen_t, lam_tgt));
      if (cfg_.use_source_reg) {
        const Tensor pt_s = student_t_assignment(zw_s, c);
        const Tensor l_gen_s = generative_source_loss(pt_s, y_s, w_s);
        batch.l_phiphi_s = l_gen_s.item();
        objective = add(objective, scale(l_gen_s, lam_src));
      }
    }

    if (!std::isfinite(objective.item()))
      throw numerical_error("trainer: non-finite loss at epoch " + std::to_string(epoch_) +
                            " iteration " + std::to_string(it));
    backward(objective);
    sgd_->step();
    if (cfg_.use_genc) adam_->step();

    if (hook_) hook_(epoch_, it, hybrid_loss(batch.l_fphi_t, batch.l_fphi_s, batch.l_phiphi_t,
                                             batch.l_phiphi_s, lam),
                     q_t);
    return {batch, 0.0};
  }

  // Domain-adversarial baseline: source CE plus a domain discriminator fed
  // through gradient reversal, the standard feature-alignment recipe.
  std::pair<LossBreakdown, double> run_grl_iteration(std::size_t it, double lam,
                                                     const Tensor& z_s, const Tensor& z_t,
                                                     const std::vector<int>& y_s) {
    const Tensor p_s = net_.probabilities(z_s);
    const Tensor ce = weighted_source_ce(p_s, y_s, std::vector<double>(y_s.size(), 1.0));
    const double coef = lam * cfg_.grl_coef_max;
    const Tensor dom_s = sigmoid(domain_head_(grad_reverse(z_s, coef)));
    const Tensor dom_t = sigmoid(domain_head_(grad_reverse(z_t, coef)));
    const Tensor l_dom = neg(add(mean(log(dom_s)),
                                 mean(log(sub(Tensor::full(dom_t.shape(), 1.0), dom_t)))));
    const Tensor objective = add(ce, l_dom);
    if (!std::isfinite(objective.item()))
      throw numerical_error("trainer: non-finite loss at epoch " + std::to_string(epoch_) +
                            " iteration " + std::to_string(it));
    backward(objective);
    sgd_->step();
    LossBreakdown batch;
    batch.l_fphi_s = ce.item();
    batch.lambda = lam;
    if (hook_) hook_(epoch_, it, batch, Tensor());
    return {batch, l_dom.item()};
  }

  TrainConfig cfg_;
  LabeledSet source_;
  LabeledSet target_;  // unlabeled view
  std::size_t k_ = 0;
  Network net_;
  CentroidLearner learner_;
  Mlp domain_head_;
  std::unique_ptr<detail::BatchCycler> cycler_src_, cycler_tgt_;
  std::unique_ptr<SgdMomentum> sgd_;
  std::unique_ptr<Adam> adam_;
  std::vector<double> weights_;
  std::vector<int> pseudo_labels_;
  std::vector<double> target_centroids_;  // k-means centroids, raw feature space
  Tensor q_init_;
  int epoch_ = 0;        // clustering-phase epoch counter (Algorithm E)
  int warmup_done_ = 0;
  IterationHook hook_;
};

// argmax of f(phi(x)); ties resolve to the lowest class index.
inline std::vector<int> infer(const Network& net, const Tensor& instances) {
  return argmax_rows(net.probabilities(net.features(instances)).detach());
}

struct TrainResult {
  TrainConfig config;
  MetricsTable metrics;
  std::vector<std::vector<double>> final_params;
  std::vector<std::vector<double>> best_params;  // lowest target clustering loss
  int best_epoch = 0;
  bool aborted = false;
  std::string abort_reason;
};

// Runs the configured number of epochs, evaluating against the held labels
// after each one. Label access stays outside the Trainer.
inline TrainResult train(const TrainConfig& cfg, const DomainPair& pair,
                         Trainer* out_trainer = nullptr) {
  TrainResult result;
  result.config = cfg;
  result.metrics.columns = run_metric_columns();

  Trainer trainer(cfg, pair.source, pair.target_train_unlabeled());
  auto params = trainer.all_parameters();
  result.final_params = detail::snapshot_params(params);
  result.best_params = result.final_params;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int e = 1; e <= trainer.total_epochs(); ++e) {
    Trainer::EpochStats stats;
    try {
      stats = trainer.run_epoch();
    } catch (const numerical_error& err) {
      result.aborted = true;
      result.abort_reason = err.what();
      detail::restore_params(params, result.final_params);  // last good checkpoint
      break;
    }

    // evaluation + diagnostics on full sets
    const Tensor z_t = trainer.infer_features(pair.target_train);
    const Tensor p_t = trainer.infer_probabilities(z_t);
    const auto pred_t = argmax_rows(p_t);
    double acc_train = 0.0, acc_test = 0.0;
    if (pair.target_train.labeled()) acc_train = accuracy(pred_t, pair.target_train.labels);
    if (pair.target_test.count > 0 && pair.target_test.labeled())
      acc_test = accuracy(infer(trainer.network(), pair.target_test.feature_tensor()),
                          pair.target_test.labels);

    const Tensor z_s = trainer.infer_features(pair.source);
    DistanceDiagnostics diag_raw = compute_diagnostics(
        z_s.values(), pair.source.count, pair.source.labels, z_t.values(),
        pair.target_train.count, trainer.pseudo_labels(),
        std::vector<double>(cfg.feat_dim * trainer.num_classes(), 0.0), cfg.feat_dim,
        trainer.num_classes());
    DistanceDiagnostics diag_whitened = diag_raw;
    if (cfg.use_genc) {
      const Tensor zw_s = batch_whiten(z_s, cfg.whiten_floor).detach();
      const Tensor zw_t = batch_whiten(z_t, cfg.whiten_floor).detach();
      const Tensor c = trainer.current_centroids();
      diag_whitened = compute_diagnostics(zw_s.values(), pair.source.count, pair.source.labels,
                                          zw_t.values(), pair.target_train.count,
                                          trainer.pseudo_labels(), c.values(), cfg.feat_dim,
                                          trainer.num_classes());
    }

    result.metrics.add_row({static_cast<double>(e),
                            stats.lambda,
                            stats.eta,
                            stats.losses.l_fphi_t,
                            stats.losses.l_fphi_s,
                            stats.losses.l_srdisc,
                            stats.losses.l_phiphi_t,
                            stats.losses.l_phiphi_s,
                            stats.losses.l_srgenc,
                            stats.losses.l_total,
                            stats.domain_loss,
                            acc_train,
                            acc_test,
                            detail::label_entropy(pred_t, trainer.num_classes()),
                            diag_whitened.instance_to_centroid_src,
                            diag_whitened.instance_to_centroid_tgt,
                            diag_whitened.insmean_to_centroid_src,
                            diag_whitened.insmean_to_centroid_tgt,
                            diag_raw.srcinsmean_to_tgtinsmean,
                            diag_raw.instance_to_center_src,
                            diag_raw.instance_to_center_tgt,
                            diag_raw.insmean_to_center_src,
                            diag_raw.insmean_to_center_tgt,
                            diag_raw.instance_to_insmean_src,
                            diag_raw.instance_to_insmean_tgt});

    result.final_params = detail::snapshot_params(params);
    const double cluster_loss = cfg.use_disc ? stats.losses.l_fphi_t : stats.losses.l_total;
    if (cluster_loss < best_loss) {
      best_loss = cluster_loss;
      result.best_params = result.final_params;
      result.best_epoch = e;
    }
  }

  if (out_trainer) *out_trainer = std::move(trainer);
  return result;
}

}  // namespace srdc
