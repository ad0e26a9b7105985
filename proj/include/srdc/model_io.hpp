#pragma once

// Text serialization of trained models: architecture line, then one line per
// parameter tensor with full-precision values. Enough structure to rebuild
// the network for evaluation and diagnostics.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "srdc/centroids.hpp"
#include "srdc/errors.hpp"
#include "srdc/nn.hpp"
#include "srdc/trainer.hpp"

namespace srdc {

struct ModelBundle {
  TrainConfig config;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  Network net;
  CentroidLearner learner;
  bool eval_by_assignment = false;  // generative-route evaluation (GenC/SRGenC)

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> p = net.parameters();
    auto lp = learner.parameters();
    p.insert(p.end(), lp.begin(), lp.end());
    return p;
  }
};

inline ModelBundle make_bundle(const TrainConfig& cfg, std::size_t input_dim,
                               std::size_t num_classes) {
  ModelBundle b;
  b.config = cfg;
  b.input_dim = input_dim;
  b.num_classes = num_classes;
  Rng master(cfg.seed);
  Rng model_rng = master.fork(0x01);
  Rng learner_rng = master.fork(0x02);
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), cfg.phi_hidden.begin(), cfg.phi_hidden.end());
  widths.push_back(cfg.feat_dim);
  b.net = build_network(widths, cfg.clf_hidden, num_classes, model_rng);
  b.learner = CentroidLearner(cfg.feat_dim, num_classes, cfg.heads, learner_rng);
  return b;
}

inline void save_model(const ModelBundle& bundle, const std::vector<std::vector<double>>& values,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("save_model: cannot open " + path);
  out << "srdc-model 1\n";
  out << "input_dim " << bundle.input_dim << "\n";
  out << "feat_dim " << bundle.config.feat_dim << "\n";
  out << "clf_hidden " << bundle.config.clf_hidden << "\n";
  out << "heads " << bundle.config.heads << "\n";
  out << "classes " << bundle.num_classes << "\n";
  out << "whiten_floor " << bundle.config.whiten_floor << "\n";
  out << "eval_route " << (bundle.eval_by_assignment ? "assignment" : "classifier") << "\n";
  out << "phi_hidden";
  for (std::size_t w : bundle.config.phi_hidden) out << " " << w;
  out << "\n";
  const auto params = bundle.parameters();
  detail::require(params.size() == values.size(), "save_model: parameter count mismatch");
  char buf[40];
  out << "params " << params.size() << "\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::require(params[i].size() == values[i].size(), "save_model: parameter size mismatch");
    out << "param " << values[i].size();
    for (double v : values[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << " " << buf;
    }
    out << "\n";
  }
  if (!out) throw io_error("save_model: write failed for " + path);
}

inline void save_model(const ModelBundle& bundle, const std::string& path) {
  std::vector<std::vector<double>> values;
  for (const Tensor& p : bundle.parameters()) values.push_back(p.values());
  save_model(bundle, values, path);
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_model: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "srdc-model 1")
    throw data_error("load_model: " + path + " is not a model file");
  TrainConfig cfg;
  std::size_t input_dim = 0, classes = 0, n_params = 0;
  bool by_assignment = false;
  cfg.phi_hidden.clear();
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "input_dim") ss >> input_dim;
    else if (key == "feat_dim") ss >> cfg.feat_dim;
    else if (key == "clf_hidden") ss >> cfg.clf_hidden;
    else if (key == "heads") ss >> cfg.heads;
    else if (key == "classes") ss >> classes;
    else if (key == "whiten_floor") ss >> cfg.whiten_floor;
    else if (key == "eval_route") {
      std::string route;
      ss >> route;
      by_assignment = route == "assignment";
    } else if (key == "phi_hidden") {
      std::size_t w;
      while (ss >> w) cfg.phi_hidden.push_back(w);
    } else if (key == "params") {
      ss >> n_params;
      break;
    } else {
      throw data_error("load_model: unknown key '" + key + "' in " + path);
    }
  }
  detail::require(input_dim > 0 && classes > 0, "load_model: incomplete header in " + path);
  ModelBundle bundle = make_bundle(cfg, input_dim, classes);
  bundle.eval_by_assignment = by_assignment;
  auto params = bundle.parameters();
  if (params.size() != n_params)
    throw data_error("load_model: " + path + ": expected " + std::to_string(params.size()) +
                     " parameters, file has " + std::to_string(n_params));
  for (std::size_t i = 0; i < n_params; ++i) {
    if (!std::getline(in, line)) throw data_error("load_model: truncated file " + path);
    std::istringstream ss(line);
    std::string key;
    std::size_t count = 0;
    ss >> key >> count;
    if (key != "param" || count != params[i].size())
      throw data_error("load_model: parameter " + std::to_string(i) + " size mismatch in " + path);
    auto& vals = params[i].mutable_values();
    for (std::size_t j = 0; j < count; ++j)
      if (!(ss >> vals[j])) throw data_error("load_model: truncated parameter in " + path);
  }
  return bundle;
}

}  // namespace srdc
