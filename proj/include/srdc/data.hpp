#pragma once

// Synthetic domain-pair generation, CSV ingestion, and inductive split
// management. Labels are 1-based throughout. Target training labels are kept
// for evaluation only; training code receives an unlabeled view.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "srdc/errors.hpp"
#include "srdc/rng.hpp"
#include "srdc/tensor.hpp"

namespace srdc {

struct LabeledSet {
  std::vector<double> features;  // (dim x n) row-major, matching Tensor layout
  std::vector<int> labels;       // empty when unlabeled
  std::size_t dim = 0;
  std::size_t count = 0;

  bool labeled() const { return !labels.empty(); }

  Tensor feature_tensor() const { return Tensor::constant({dim, count}, features); }

  double feature(std::size_t r, std::size_t i) const { return features[r * count + i]; }

  LabeledSet select(const std::vector<std::size_t>& idx) const {
    LabeledSet out;
    out.dim = dim;
    out.count = idx.size();
    out.features.resize(dim * idx.size());
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t j = 0; j < idx.size(); ++j)
        out.features[r * idx.size() + j] = feature(r, idx[j]);
    if (labeled())
      for (std::size_t j : idx) out.labels.push_back(labels[j]);
    return out;
  }
};

// Labeled source + unlabeled-view target with held-out test split.
struct DomainPair {
  LabeledSet source;
  LabeledSet target_train;  // labels stored but reserved for evaluation
  LabeledSet target_test;
  std::size_t num_classes = 0;
  std::map<std::string, std::string> metadata;

  // The view handed to training code: features only.
  LabeledSet target_train_unlabeled() const {
    LabeledSet t = target_train;
    t.labels.clear();
    return t;
  }
};

namespace detail {
inline void rotate2d(std::vector<double>& features, std::size_t n, double theta_deg) {
  const double th = theta_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = features[i];
    const double y = features[n + i];
    features[i] = c * x - s * y;
    features[n + i] = s * x + c * y;
  }
}
}  // namespace detail

// Standard two-moons, rotated by theta about the origin after sampling. With
// theta = 0 and equal seeds the output is bit-identical to the unrotated set.
inline LabeledSet gen_two_moons(std::size_t n, double noise, double theta_deg,
                                std::uint64_t seed) {
  detail::require(n >= 2 && n % 2 == 0, "gen_two_moons: n must be even and >= 2");
  detail::require(noise >= 0.0, "gen_two_moons: noise must be >= 0");
  Rng rng(seed);
  LabeledSet set;
  set.dim = 2;
  set.count = n;
  set.features.assign(2 * n, 0.0);
  set.labels.assign(n, 0);
  const std::size_t half = n / 2;
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i) {
    const bool outer = i < half;
    const double t = pi * rng.uniform();
    double x = outer ? std::cos(t) : 1.0 - std::cos(t);
    double y = outer ? std::sin(t) : 0.5 - std::sin(t);
    x += noise * rng.normal();
    y += noise * rng.normal();
    set.features[i] = x;
    set.features[n + i] = y;
    set.labels[i] = outer ? 1 : 2;
  }
  detail::rotate2d(set.features, n, theta_deg);
  return set;
}

// K spherical Gaussians; the target reuses the class means shifted by a
// common vector with rescaled covariance.
inline DomainPair gen_gaussian_shift(std::size_t k, std::size_t dim, std::size_t n_per_class,
                                     double class_sep, const std::vector<double>& shift,
                                     double cov_scale, std::uint64_t seed) {
  detail::require(k >= 2, "gen_gaussian_shift: need K >= 2");
  detail::require(dim >= 1 && n_per_class >= 2, "gen_gaussian_shift: bad sizes");
  detail::require(shift.size() == dim, "gen_gaussian_shift: shift dimension mismatch");
  detail::require(cov_scale > 0.0, "gen_gaussian_shift: covariance scale must be positive");
  Rng master(seed);
  Rng mean_rng = master.fork(0x6d65616e);
  Rng src_rng = master.fork(0x73726300);
  Rng tgt_rng = master.fork(0x74677400);

  // class means: random directions scaled to class_sep
  std::vector<double> means(dim * k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double norm = 0.0;
    std::vector<double> v(dim);
    for (std::size_t r = 0; r < dim; ++r) {
      v[r] = mean_rng.normal();
      norm += v[r] * v[r];
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (std::size_t r = 0; r < dim; ++r) means[r * k + j] = class_sep * v[r] / norm;
  }

  auto sample = [&](Rng& rng, bool shifted, double sigma) {
    LabeledSet set;
    const std::size_t n = n_per_class * k;
    set.dim = dim;
    set.count = n;
    set.features.assign(dim * n, 0.0);
    set.labels.assign(n, 0);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t i = 0; i < n_per_class; ++i) {
        const std::size_t col = j * n_per_class + i;
        for (std::size_t r = 0; r < dim; ++r) {
          double v = means[r * k + j] + sigma * rng.normal();
          if (shifted) v += shift[r];
          set.features[r * n + col] = v;
        }
        set.labels[col] = static_cast<int>(j) + 1;
      }
    return set;
  };

  DomainPair pair;
  pair.num_classes = k;
  pair.source = sample(src_rng, false, 1.0);
  LabeledSet target = sample(tgt_rng, true, cov_scale);
  pair.target_train = std::move(target);
  return pair;
}

// Random half-half split per class; the train half receives the ceiling of
// odd counts. Deterministic under the seed.
inline std::pair<LabeledSet, LabeledSet> split_inductive(const LabeledSet& set,
                                                         std::uint64_t seed) {
  detail::require(set.labeled(), "split_inductive: labeled set required");
  Rng rng(seed);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < set.count; ++i) by_class[set.labels[i]].push_back(i);
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [label, idx] : by_class) {
    detail::require(idx.size() >= 2, "split_inductive: class " + std::to_string(label) +
                                         " has fewer than 2 instances");
    rng.shuffle(idx);
    const std::size_t n_train = (idx.size() + 1) / 2;
    for (std::size_t j = 0; j < idx.size(); ++j)
      (j < n_train ? train_idx : test_idx).push_back(idx[j]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {set.select(train_idx), set.select(test_idx)};
}

// Class-wise closeness surrogate: mean same-class source/target centroid
// distance must stay below the mean cross-class distance.
inline bool classwise_closeness_holds(const LabeledSet& src, const LabeledSet& tgt,
                                      std::size_t k) {
  detail::require(src.labeled() && tgt.labeled(), "classwise_closeness: labels required");
  detail::require(src.dim == tgt.dim, "classwise_closeness: dims differ");
  const std::size_t d = src.dim;
  auto class_means = [&](const LabeledSet& s) {
    std::vector<double> mu(d * k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < s.count; ++i) {
      const std::size_t j = static_cast<std::size_t>(s.labels[i] - 1);
      ++cnt[j];
      for (std::size_t r = 0; r < d; ++r) mu[r * k + j] += s.feature(r, i);
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cnt[j])
        for (std::size_t r = 0; r < d; ++r) mu[r * k + j] /= static_cast<double>(cnt[j]);
    return mu;
  };
  const auto mu_s = class_means(src);
  const auto mu_t = class_means(tgt);
  auto dist = [&](const std::vector<double>& a, std::size_t i, const std::vector<double>& b,
                  std::size_t j) {
    double s = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      const double diff = a[r * k + i] - b[r * k + j];
      s += diff * diff;
    }
    return std::sqrt(s);
  };
  double same = 0.0, cross = 0.0;
  std::size_t n_cross = 0;
  for (std::size_t i = 0; i < k; ++i) {
    same += dist(mu_s, i, mu_t, i);
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) {
        cross += dist(mu_s, i, mu_t, j);
        ++n_cross;
      }
  }
  return same / static_cast<double>(k) < cross / static_cast<double>(n_cross);
}

// ---------------------------------------------------------------------------
// CSV serialization. First line is a header; a trailing `label` column marks
// a labeled set. Features use full precision so write/read round-trips are
// exact.
// ---------------------------------------------------------------------------

inline void save_csv(const LabeledSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("save_csv: cannot open " + path);
  for (std::size_t r = 0; r < set.dim; ++r) out << (r ? "," : "") << "f" << r;
  if (set.labeled()) out << ",label";
  out << "\n";
  char buf[40];
  for (std::size_t i = 0; i < set.count; ++i) {
    for (std::size_t r = 0; r < set.dim; ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", set.feature(r, i));
      out << (r ? "," : "") << buf;
    }
    if (set.labeled()) out << "," << set.labels[i];
    out << "\n";
  }
  if (!out) throw io_error("save_csv: write failed for " + path);
}

inline LabeledSet load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error("load_csv: " + path + ": empty file");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  };
  const auto header = split(line);
  detail::require(!header.empty(), "load_csv: empty header");
  const bool labeled = header.back() == "label";
  const std::size_t dim = labeled ? header.size() - 1 : header.size();
  if (dim == 0) throw data_error("load_csv: " + path + ": no feature columns");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw data_error("load_csv: " + path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    std::vector<double> row(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      try {
        std::size_t used = 0;
        row[c] = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw data_error("load_csv: " + path + ":" + std::to_string(lineno) +
                         ": non-numeric cell '" + cells[c] + "'");
      }
    }
    if (labeled) {
      try {
        labels.push_back(std::stoi(cells.back()));
      } catch (const std::exception&) {
        throw data_error("load_csv: " + path + ":" + std::to_string(lineno) +
                         ": non-integer label '" + cells.back() + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  LabeledSet set;
  set.dim = dim;
  set.count = rows.size();
  set.features.assign(dim * rows.size(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t r = 0; r < dim; ++r) set.features[r * rows.size() + i] = rows[i][r];
  set.labels = std::move(labels);
  return set;
}

}  // namespace srdc
