#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "aghmm/core.hpp"
#include "aghmm/learning.hpp"
#include "aghmm/model.hpp"

namespace aghmm {

using nlohmann::json;

inline json to_json(const Vec& v) { return json(v); }

inline json to_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows; ++i) rows.push_back(m.row(i));
  return rows;
}

inline Vec vec_from_json(const json& j) { return j.get<Vec>(); }

inline Mat mat_from_json(const json& j) {
  Mat m;
  m.rows = int(j.size());
  m.cols = m.rows > 0 ? int(j[0].size()) : 0;
  m.a.reserve(size_t(m.rows) * m.cols);
  for (const auto& row : j) {
    if (int(row.size()) != m.cols)
      throw std::invalid_argument("ragged matrix in JSON");
    for (const auto& x : row) m.a.push_back(x.get<double>());
  }
  return m;
}

/// Model file: {"d", "T", "pi", "A", "emission": {"kind": ...}}.
inline json to_json(const HmmParams& p) {
  json j;
  j["d"] = p.num_states;
  j["T"] = p.horizon;
  j["pi"] = to_json(p.pi);
  j["A"] = to_json(p.trans);
  if (p.is_discrete()) {
    j["emission"] = {{"kind", "discrete"}, {"B", to_json(p.discrete().B)}};
  } else {
    json means = json::array(), covs = json::array();
    for (const auto& m : p.gaussian().means) means.push_back(m);
    for (const auto& c : p.gaussian().covs) covs.push_back(to_json(c));
    j["emission"] = {{"kind", "gaussian"}, {"means", means}, {"covs", covs}};
  }
  return j;
}

inline HmmParams params_from_json(const json& j) {
  HmmParams p;
  p.num_states = j.at("d").get<int>();
  p.horizon = j.at("T").get<int>();
  p.pi = vec_from_json(j.at("pi"));
  p.trans = mat_from_json(j.at("A"));
  const json& e = j.at("emission");
  const std::string kind = e.at("kind").get<std::string>();
  if (kind == "discrete") {
    DiscreteEmission d;
    d.B = mat_from_json(e.at("B"));
    d.num_symbols = d.B.cols;
    p.emission = std::move(d);
  } else if (kind == "gaussian") {
    GaussianEmission g;
    for (const auto& m : e.at("means")) g.means.push_back(vec_from_json(m));
    for (const auto& c : e.at("covs")) g.covs.push_back(mat_from_json(c));
    g.dim = g.means.empty() ? 0 : int(g.means.front().size());
    p.emission = std::move(g);
  } else {
    throw std::invalid_argument("unknown emission kind: " + kind);
  }
  return p;
}

/// Aggregate sequence file: {"M", "y"}.
inline json to_json(const AggregateSequence& s) {
  json y = json::array();
  for (const auto& h : s.hist) y.push_back(h);
  return json{{"M", s.population}, {"y", y}};
}

inline AggregateSequence sequence_from_json(const json& j) {
  AggregateSequence s;
  s.population = j.at("M").get<int>();
  for (const auto& h : j.at("y")) s.hist.push_back(vec_from_json(h));
  return s;
}

/// Trajectory files hold one JSON object per line: {"x": [...], "o": [...]}
/// with symbol or vector observations.
inline void write_trajectories(const TrajectorySet& t, std::ostream& os) {
  for (int m = 0; m < t.size(); ++m) {
    json line;
    line["x"] = t.hidden.empty() ? std::vector<int>{} : t.hidden[m];
    if (t.kind == TrajectorySet::Kind::Discrete)
      line["o"] = t.obs_sym[m];
    else
      line["o"] = t.obs_real[m];
    os << line.dump() << '\n';
  }
}

inline TrajectorySet read_trajectories(std::istream& is) {
  TrajectorySet t;
  bool first = true;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const json& o = j.at("o");
    if (first) {
      t.kind = (!o.empty() && o[0].is_array()) ? TrajectorySet::Kind::Continuous
                                               : TrajectorySet::Kind::Discrete;
      first = false;
    }
    if (j.contains("x")) t.hidden.push_back(j["x"].get<std::vector<int>>());
    if (t.kind == TrajectorySet::Kind::Discrete) {
      auto path = o.get<std::vector<int>>();
      for (int sym : path) t.num_symbols = std::max(t.num_symbols, sym + 1);
      t.obs_sym.push_back(std::move(path));
    } else {
      std::vector<Vec> path;
      for (const auto& v : o) path.push_back(v.get<Vec>());
      t.obs_real.push_back(std::move(path));
    }
  }
  return t;
}

/// Options block: {"tol", "max_iters", "estimate_cov", "freeze", "seed"}.
inline EmOptions options_from_json(const json& j) {
  EmOptions o;
  if (j.contains("tol")) o.tol = j["tol"].get<double>();
  if (j.contains("max_iters")) o.max_iters = j["max_iters"].get<int>();
  if (j.contains("estimate_cov")) o.estimate_cov = j["estimate_cov"].get<bool>();
  if (j.contains("seed")) o.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("freeze")) {
    for (const auto& f : j["freeze"]) {
      const std::string name = f.get<std::string>();
      if (name == "pi")
        o.freeze_pi = true;
      else if (name == "A")
        o.freeze_trans = true;
      else if (name == "B")
        o.freeze_emit = true;
      else if (name == "mu")
        o.freeze_mean = true;
      else if (name == "cov")
        o.freeze_cov = true;
      else
        throw std::invalid_argument("unknown freeze group: " + name);
    }
  }
  return o;
}

inline json to_json(const EmOptions& o) {
  json freeze = json::array();
  if (o.freeze_pi) freeze.push_back("pi");
  if (o.freeze_trans) freeze.push_back("A");
  if (o.freeze_emit) freeze.push_back("B");
  if (o.freeze_mean) freeze.push_back("mu");
  if (o.freeze_cov) freeze.push_back("cov");
  return json{{"tol", o.tol},
              {"max_iters", o.max_iters},
              {"estimate_cov", o.estimate_cov},
              {"freeze", freeze},
              {"seed", o.seed}};
}

inline json to_json(const MarginalSet& m) {
  json j;
  json node = json::array(), edge = json::array();
  for (const auto& n : m.node) node.push_back(n);
  for (const auto& e : m.edge) edge.push_back(to_json(e));
  j["node"] = node;
  j["edge"] = edge;
  if (!m.obs.empty()) {
    json obs = json::array();
    for (const auto& o : m.obs) obs.push_back(to_json(o));
    j["obs"] = obs;
  }
  if (!m.sample_weight.empty()) {
    json w = json::array();
    for (const auto& o : m.sample_weight) w.push_back(to_json(o));
    j["sample_weight"] = w;
  }
  return j;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  json j;
  in >> j;
  return j;
}

}  // namespace aghmm
