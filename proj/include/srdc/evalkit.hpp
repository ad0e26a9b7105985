#pragma once

// Metrics (accuracy, per-class mean accuracy, IoU) plus the distance
// diagnostics tracked per epoch, and deterministic CSV / SVG emission.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "srdc/errors.hpp"
#include "srdc/objectives.hpp"

namespace srdc {

inline std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  detail::require(!predictions.empty() && predictions.size() == labels.size(),
                  "accuracy: prediction/label lengths differ or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

// Mean of per-class recalls; classes absent from the labels are skipped.
inline double per_class_mean_accuracy(const std::vector<int>& predictions,
                                      const std::vector<int>& labels) {
  detail::require(!predictions.empty() && predictions.size() == labels.size(),
                  "per_class_mean_accuracy: prediction/label lengths differ or empty");
  std::map<int, std::pair<std::size_t, std::size_t>> per;  // label -> (hits, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hits, total] = per[labels[i]];
    ++total;
    if (predictions[i] == labels[i]) ++hits;
  }
  double acc = 0.0;
  for (const auto& [label, ht] : per)
    acc += static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return acc / static_cast<double>(per.size());
}

struct IouResult {
  std::vector<double> per_class;  // NaN for classes absent from both grids
  double miou = 0.0;
};

// Intersection over union per class; classes absent from both grids are
// excluded from the mean.
inline IouResult iou_per_class(const std::vector<int>& pred, const std::vector<int>& label,
                               std::size_t k) {
  detail::require(pred.size() == label.size() && !pred.empty(), "iou: grid sizes differ");
  std::vector<std::size_t> inter(k, 0), uni(k, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::require(pred[i] >= 1 && pred[i] <= static_cast<int>(k) && label[i] >= 1 &&
                        label[i] <= static_cast<int>(k),
                    "iou: label outside [1,K]");
    if (pred[i] == label[i]) ++inter[pred[i] - 1];
    ++uni[pred[i] - 1];
    if (pred[i] != label[i]) ++uni[label[i] - 1];
  }
  IouResult res;
  res.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (uni[j] == 0) continue;
    res.per_class[j] = static_cast<double>(inter[j]) / static_cast<double>(uni[j]);
    sum += res.per_class[j];
    ++present;
  }
  res.miou = present ? sum / static_cast<double>(present) : 0.0;
  return res;
}

// The six mean-distance diagnostics, per domain where applicable. Distances
// involving the learned centroids live in the (whitened) space the centroid
// learner operates in; the caller supplies matching features.
struct DistanceDiagnostics {
  double instance_to_centroid_src = 0.0;
  double instance_to_centroid_tgt = 0.0;
  double insmean_to_centroid_src = 0.0;
  double insmean_to_centroid_tgt = 0.0;
  double srcinsmean_to_tgtinsmean = 0.0;
  double instance_to_center_src = 0.0;
  double instance_to_center_tgt = 0.0;
  double insmean_to_center_src = 0.0;
  double insmean_to_center_tgt = 0.0;
  double instance_to_insmean_src = 0.0;
  double instance_to_insmean_tgt = 0.0;
};

namespace detail {
struct ClassStats {
  std::vector<double> means;       // (d x K)
  std::vector<std::size_t> count;  // per class
};

inline ClassStats class_means(const std::vector<double>& z, std::size_t d, std::size_t n,
                              const std::vector<int>& labels, std::size_t k) {
  ClassStats st;
  st.means.assign(d * k, 0.0);
  st.count.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(labels[i] - 1);
    ++st.count[j];
    for (std::size_t r = 0; r < d; ++r) st.means[r * k + j] += z[r * n + i];
  }
  for (std::size_t j = 0; j < k; ++j)
    if (st.count[j])
      for (std::size_t r = 0; r < d; ++r) st.means[r * k + j] /= static_cast<double>(st.count[j]);
  return st;
}

inline double col_dist(const std::vector<double>& a, std::size_t ka, std::size_t ia,
                       const std::vector<double>& b, std::size_t kb, std::size_t ib,
                       std::size_t d) {
  double s = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    const double diff = a[r * ka + ia] - b[r * kb + ib];
    s += diff * diff;
  }
  return std::sqrt(s);
}

// mean over instances of the distance to the class-indexed reference column
inline double mean_instance_to_ref(const std::vector<double>& z, std::size_t d, std::size_t n,
                                   const std::vector<int>& labels,
                                   const std::vector<double>& ref, std::size_t k) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += col_dist(z, n, i, ref, k, static_cast<std::size_t>(labels[i] - 1), d);
  return n ? acc / static_cast<double>(n) : 0.0;
}

// mean over classes present in both stats of the distance between columns
inline double mean_class_to_class(const ClassStats& a, const ClassStats& b, std::size_t d,
                                  std::size_t k, std::size_t* skipped = nullptr) {
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (a.count[j] == 0 || b.count[j] == 0) {
      if (skipped) ++*skipped;
      continue;
    }
    acc += col_dist(a.means, k, j, b.means, k, j, d);
    ++used;
  }
  return used ? acc / static_cast<double>(used) : 0.0;
}
}  // namespace detail

// All six diagnostic families from one snapshot. Target class assignments
// come from their pseudo labels. Empty classes are skipped from
// class-averaged quantities; `skipped_classes` reports how many.
inline DistanceDiagnostics compute_diagnostics(const std::vector<double>& z_src, std::size_t n_src,
                                               const std::vector<int>& labels_src,
                                               const std::vector<double>& z_tgt, std::size_t n_tgt,
                                               const std::vector<int>& pseudo_tgt,
                                               const std::vector<double>& centroids, std::size_t d,
                                               std::size_t k,
                                               std::size_t* skipped_classes = nullptr) {
  detail::require(z_src.size() == d * n_src && z_tgt.size() == d * n_tgt,
                  "compute_diagnostics: feature buffer sizes mismatch");
  detail::require(centroids.size() == d * k, "compute_diagnostics: centroid buffer mismatch");
  detail::require(labels_src.size() == n_src && pseudo_tgt.size() == n_tgt,
                  "compute_diagnostics: label counts mismatch");
  detail::check_labels(labels_src, k, "compute_diagnostics: source labels");
  detail::check_labels(pseudo_tgt, k, "compute_diagnostics: target pseudo labels");

  const auto stat_s = detail::class_means(z_src, d, n_src, labels_src, k);
  const auto stat_t = detail::class_means(z_tgt, d, n_tgt, pseudo_tgt, k);

  // combined-domain class centers
  detail::ClassStats center;
  center.means.assign(d * k, 0.0);
  center.count.assign(k, 0);
  for (std::size_t j = 0; j < k; ++j) {
    center.count[j] = stat_s.count[j] + stat_t.count[j];
    if (!center.count[j]) continue;
    for (std::size_t r = 0; r < d; ++r)
      center.means[r * k + j] =
          (stat_s.means[r * k + j] * static_cast<double>(stat_s.count[j]) +
           stat_t.means[r * k + j] * static_cast<double>(stat_t.count[j])) /
          static_cast<double>(center.count[j]);
  }

  detail::ClassStats centroid_stat;
  centroid_stat.means = centroids;
  centroid_stat.count.assign(k, 1);

  DistanceDiagnostics out;
  out.instance_to_centroid_src =
      detail::mean_instance_to_ref(z_src, d, n_src, labels_src, centroids, k);
  out.instance_to_centroid_tgt =
      detail::mean_instance_to_ref(z_tgt, d, n_tgt, pseudo_tgt, centroids, k);
  out.insmean_to_centroid_src = detail::mean_class_to_class(stat_s, centroid_stat, d, k);
  out.insmean_to_centroid_tgt = detail::mean_class_to_class(stat_t, centroid_stat, d, k);
  out.srcinsmean_to_tgtinsmean =
      detail::mean_class_to_class(stat_s, stat_t, d, k, skipped_classes);
  out.instance_to_center_src =
      detail::mean_instance_to_ref(z_src, d, n_src, labels_src, center.means, k);
  out.instance_to_center_tgt =
      detail::mean_instance_to_ref(z_tgt, d, n_tgt, pseudo_tgt, center.means, k);
  out.insmean_to_center_src = detail::mean_class_to_class(stat_s, center, d, k);
  out.insmean_to_center_tgt = detail::mean_class_to_class(stat_t, center, d, k);
  out.instance_to_insmean_src =
      detail::mean_instance_to_ref(z_src, d, n_src, labels_src, stat_s.means, k);
  out.instance_to_insmean_tgt =
      detail::mean_instance_to_ref(z_tgt, d, n_tgt, pseudo_tgt, stat_t.means, k);
  return out;
}

// ---------------------------------------------------------------------------
// CSV / SVG emission
// ---------------------------------------------------------------------------

// One table: fixed column order, %.6g formatting, one row per epoch.
struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(const std::vector<double>& row) {
    detail::require(row.size() == columns.size(), "metrics: row width mismatch");
    rows.push_back(row);
  }

  double value(std::size_t row, const std::string& col) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == col) return rows.at(row)[c];
    throw contract_error("metrics: unknown column " + col);
  }

  std::vector<double> series(const std::string& col) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out.push_back(value(r, col));
    return out;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw io_error("write_csv: cannot open " + path);
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << "\n";
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << fmt6(row[c]);
      out << "\n";
    }
    if (!out) throw io_error("write_csv: write failed for " + path);
  }
};

inline MetricsTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("read_csv_table: cannot open " + path);
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) throw data_error("read_csv_table: empty file " + path);
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      t.columns.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  t.columns.push_back(cur);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    cur.clear();
    for (char ch : line + ",") {
      if (ch == ',') {
        try {
          row.push_back(std::stod(cur));
        } catch (const std::exception&) {
          throw data_error("read_csv_table: " + path + ":" + std::to_string(lineno) +
                           ": non-numeric cell '" + cur + "'");
        }
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    t.add_row(row);
  }
  return t;
}

// Minimal line chart: one polyline per named series against the epoch index.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  detail::require(!series.empty() && !series[0].second.empty(),
                  "write_svg_chart: at least one non-empty series required");
  const double width = 640.0, height = 400.0, ml = 60.0, mr = 140.0, mt = 40.0, mb = 40.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n = 0;
  for (const auto& [name, vals] : series) {
    n = std::max(n, vals.size());
    for (double v : vals) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw io_error("write_svg_chart: cannot open " + path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
      << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"#444\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"#444\"/>\n";
  out << "<text x=\"8\" y=\"" << mt + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt6(hi) << "</text>\n";
  out << "<text x=\"8\" y=\"" << height - mb << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt6(lo) << "</text>\n";
  const double px = (width - ml - mr) / static_cast<double>(n > 1 ? n - 1 : 1);
  const double py = (height - mt - mb) / (hi - lo);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& vals = series[s].second;
    out << "<polyline fill=\"none\" stroke=\"" << palette[s % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (!std::isfinite(vals[i])) continue;
      out << ml + px * static_cast<double>(i) << "," << height - mb - py * (vals[i] - lo) << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << width - mr + 8 << "\" y=\"" << mt + 16.0 * static_cast<double>(s + 1)
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << palette[s % 6] << "\">"
        << series[s].first << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw io_error("write_svg_chart: write failed for " + path);
}

}  // namespace srdc
