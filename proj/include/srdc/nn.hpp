#pragma once

// Network building blocks: column-wise affine layers, MLPs, ZCA batch
// whitening, and the feature-extractor + classifier pair used everywhere.

#include <cmath>
#include <string>
#include <vector>

#include "srdc/errors.hpp"
#include "srdc/rng.hpp"
#include "srdc/tensor.hpp"

namespace srdc {

// Kaiming-uniform weight, zero bias. W stored as (in, out) so the layer
// computes W^T X + b on column-major feature batches.
struct Affine {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out, 1)

  Affine() = default;
  Affine(std::size_t in, std::size_t out, Rng& rng) {
    detail::require(in > 0 && out > 0, "affine: layer widths must be positive");
    std::vector<double> w(in * out);
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (double& x : w) x = rng.uniform(-bound, bound);
    weight = Tensor::param({in, out}, std::move(w));
    bias = Tensor::param({out, 1}, std::vector<double>(out, 0.0));
  }

  Tensor operator()(const Tensor& x) const {
    return add_colvec(matmul(transpose(weight), x), bias);
  }

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  void collect(std::vector<Tensor>& params) const {
    params.push_back(weight);
    params.push_back(bias);
  }
};

// Column-wise MLP with ReLU between layers; the last layer is linear.
struct Mlp {
  std::vector<Affine> layers;

  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Rng& rng) {
    detail::require(widths.size() >= 2, "mlp: need at least input and output width");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers.emplace_back(widths[i], widths[i + 1], rng);
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i](h);
      if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
  }

  void collect(std::vector<Tensor>& params) const {
    for (const auto& l : layers) l.collect(params);
  }
};

inline constexpr double kWhitenFloor = 1e-5;

// ZCA batch whitening of a (d x b) feature batch: zero column mean,
// covariance mapped to the identity through the floored inverse square root.
// Fully differentiable; statistics are batch-local.
inline Tensor batch_whiten(const Tensor& features, double eig_floor = kWhitenFloor) {
  detail::require(features.ndim() == 2, "batch_whiten: (d x b) matrix required");
  const std::size_t b = features.cols();
  detail::require(b >= 2, "batch_whiten: batch size must be >= 2");
  const Tensor ones_b = Tensor::full({b, 1}, 1.0 / static_cast<double>(b));
  const Tensor mean_col = matmul(features, ones_b);                     // d x 1
  const Tensor centered = sub(features, matmul(mean_col, Tensor::full({1, b}, 1.0)));
  const Tensor cov = scale(matmul(centered, transpose(centered)), 1.0 / static_cast<double>(b));
  return matmul(sym_inv_sqrt(cov, eig_floor), centered);
}

// Per-domain whitening followed by column concatenation; the input the
// centroid learner consumes.
inline Tensor whiten_and_concat(const Tensor& z_src, const Tensor& z_tgt,
                                double eig_floor = kWhitenFloor) {
  detail::require(z_src.rows() == z_tgt.rows(), "whiten_and_concat: feature dims differ");
  return concat_cols(batch_whiten(z_src, eig_floor), batch_whiten(z_tgt, eig_floor));
}

// Feature extractor phi (MLP into the d-dimensional feature space) plus the
// classifier f (two affine layers with softmax output).
struct Network {
  Mlp phi;
  Affine clf_hidden;
  Affine clf_out;
  std::size_t feat_dim = 0;
  std::size_t num_classes = 0;

  Network() = default;

  // widths: input..feature-space sizes for phi; h: classifier hidden width.
  Network(const std::vector<std::size_t>& phi_widths, std::size_t h, std::size_t classes,
          Rng& rng) {
    detail::require(!phi_widths.empty(), "network: empty layer spec");
    for (std::size_t w : phi_widths)
      detail::require(w > 0, "network: layer widths must be positive");
    detail::require(h > 0 && classes > 0, "network: classifier widths must be positive");
    phi = Mlp(phi_widths, rng);
    clf_hidden = Affine(phi_widths.back(), h, rng);
    clf_out = Affine(h, classes, rng);
    feat_dim = phi_widths.back();
    num_classes = classes;
  }

  // x: (input_dim x n) columns of instances -> (d x n) features.
  Tensor features(const Tensor& x) const { return phi(x); }

  // z: (d x n) -> (n x K) row-stochastic class probabilities.
  Tensor probabilities(const Tensor& z) const {
    return softmax_rows(transpose(clf_out(relu(clf_hidden(z)))));
  }

  Tensor forward(const Tensor& x) const { return probabilities(features(x)); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> p;
    phi.collect(p);
    clf_hidden.collect(p);
    clf_out.collect(p);
    return p;
  }
};

inline Network build_network(const std::vector<std::size_t>& phi_widths, std::size_t clf_hidden,
                             std::size_t classes, Rng& rng) {
  return Network(phi_widths, clf_hidden, classes, rng);
}

// Argmax per row, ties to the lowest index; returns 1-based labels.
inline std::vector<int> argmax_rows(const Tensor& probs) {
  detail::require(probs.ndim() == 2 && probs.cols() >= 1, "argmax_rows: matrix required");
  std::vector<int> labels(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.cols(); ++k)
      if (probs.at(i, k) > probs.at(i, best)) best = k;
    labels[i] = static_cast<int>(best) + 1;
  }
  return labels;
}

}  // namespace srdc
