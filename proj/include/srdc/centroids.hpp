#pragma once

// Feed-forward cluster-centroid learner: a stack of multihead attention
// blocks pools a batch of whitened instance features into K centroids,
// starting from trainable seed vectors.

#include <cmath>
#include <string>
#include <vector>

#include "srdc/errors.hpp"
#include "srdc/nn.hpp"
#include "srdc/rng.hpp"
#include "srdc/tensor.hpp"

namespace srdc {

// One multihead-attention mapping. Queries, keys and values arrive as d-row
// column matrices; each head projects to d/m rows, attends with row-wise
// softmax over keys, and the concatenated heads are mixed by W4.
struct MultiheadAttention {
  std::vector<Tensor> w1, w2, w3;  // (d x d/m) per head
  Tensor w4;                       // (d x d)
  std::size_t dim = 0;
  std::size_t heads = 0;

  MultiheadAttention() = default;
  MultiheadAttention(std::size_t d, std::size_t m, Rng& rng) : dim(d), heads(m) {
    detail::require(m >= 1 && d % m == 0, "multihead_attention: d must be divisible by m");
    const std::size_t dh = d / m;
    const double bound = std::sqrt(6.0 / static_cast<double>(d));
    auto make = [&](std::size_t rows, std::size_t cols) {
      std::vector<double> v(rows * cols);
      for (double& x : v) x = rng.uniform(-bound, bound);
      return Tensor::param({rows, cols}, std::move(v));
    };
    for (std::size_t i = 0; i < m; ++i) {
      w1.push_back(make(d, dh));
      w2.push_back(make(d, dh));
      w3.push_back(make(d, dh));
    }
    // Zero mixing matrix: the attention path contributes nothing at
    // initialization, so residual blocks start as the identity and the
    // learner output stays at the scale of its seeds.
    w4 = Tensor::param({d, d}, std::vector<double>(d * d, 0.0));
  }

  Tensor operator()(const Tensor& z1, const Tensor& z2, const Tensor& z3) const {
    detail::require(z1.rows() == dim && z2.rows() == dim && z3.rows() == dim,
                    "multihead_attention: inputs must have d rows");
    detail::require(z2.cols() == z3.cols(),
                    "multihead_attention: key/value column counts differ");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
    Tensor stacked;
    for (std::size_t i = 0; i < heads; ++i) {
      const Tensor q = matmul(transpose(w1[i]), z1);  // (d/m x a)
      const Tensor k = matmul(transpose(w2[i]), z2);  // (d/m x b)
      const Tensor v = matmul(transpose(w3[i]), z3);  // (d/m x b)
      const Tensor att = softmax_rows(scale(matmul(transpose(q), k), inv_sqrt_d));  // (a x b)
      const Tensor head = matmul(v, transpose(att));  // (d/m x a)
      stacked = i == 0 ? head : concat_rows(stacked, head);
    }
    return matmul(transpose(w4), stacked);
  }

  void collect(std::vector<Tensor>& params) const {
    for (std::size_t i = 0; i < heads; ++i) {
      params.push_back(w1[i]);
      params.push_back(w2[i]);
      params.push_back(w3[i]);
    }
    params.push_back(w4);
  }
};

// Multihead attention block: Z' = Z1 + MA(Z1, Z2, Z2); out = Z' + MLP(Z').
// The MLP is applied column-wise with three affine layers.
struct Mab {
  MultiheadAttention attention;
  Mlp mlp;

  Mab() = default;
  Mab(std::size_t d, std::size_t m, Rng& rng)
      : attention(d, m, rng), mlp(std::vector<std::size_t>{d, d, d, d}, rng) {
    // Zero final MLP layer: the block starts as the identity map.
    auto& last = mlp.layers.back().weight.mutable_values();
    std::fill(last.begin(), last.end(), 0.0);
  }

  Tensor operator()(const Tensor& z1, const Tensor& z2) const {
    const Tensor zp = add(z1, attention(z1, z2, z2));
    return add(zp, mlp(zp));
  }

  void collect(std::vector<Tensor>& params) const {
    attention.collect(params);
    mlp.collect(params);
  }
};

// C = MAB3(C', C') with C' = MAB2(C0, MLP-hat(MAB1(Z, Z))). The K seed
// columns C0 are trainable, drawn once from a standard normal.
struct CentroidLearner {
  Mab mab1, mab2, mab3;
  Mlp mlp_hat;
  Tensor seeds;  // (d x K)
  std::size_t dim = 0;
  std::size_t clusters = 0;

  CentroidLearner() = default;
  CentroidLearner(std::size_t d, std::size_t k, std::size_t m, Rng& rng)
      : mab1(d, m, rng),
        mab2(d, m, rng),
        mab3(d, m, rng),
        mlp_hat(std::vector<std::size_t>{d, d, d, d}, rng),
        dim(d),
        clusters(k) {
    detail::require(k >= 1, "centroid_learner: need at least one cluster");
    std::vector<double> s(d * k);
    for (double& x : s) x = rng.normal();
    seeds = Tensor::param({d, k}, std::move(s));
  }

  // z: (d x n) whitened batch features -> (d x K) centroids.
  Tensor operator()(const Tensor& z) const {
    detail::require(z.rows() == dim && z.cols() >= 1,
                    "centroid_learner: (d x n) input with n >= 1 required");
    const Tensor encoded = mlp_hat(mab1(z, z));
    const Tensor c_prime = mab2(seeds, encoded);
    return mab3(c_prime, c_prime);
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> p;
    mab1.collect(p);
    mab2.collect(p);
    mab3.collect(p);
    mlp_hat.collect(p);
    p.push_back(seeds);
    return p;
  }
};

}  // namespace srdc
