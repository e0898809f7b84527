#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flowuq/core.hpp"
#include "flowuq/eb.hpp"
#include "flowuq/gravity.hpp"
#include "flowuq/intervals.hpp"

namespace flowuq::io {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;  // source line of each row
  std::string source;

  std::size_t column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    throw Error(ErrorKind::ParseError, source + ": missing column '" + name + "'");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cur += '"';
        ++k;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::string where(const CsvTable& t, std::size_t r) {
  return t.source + ":" + std::to_string(t.line[r]);
}

inline double parse_number(const std::string& s, const std::string& at) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty())
    throw Error(ErrorKind::ParseError, at + ": not a number: '" + s + "'");
  return v;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  CsvTable t;
  t.source = path.string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> fields = detail::split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw Error(ErrorKind::ParseError, t.source + ":" + std::to_string(lineno) + ": expected " +
                                             std::to_string(t.header.size()) + " fields, got " +
                                             std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line.push_back(lineno);
  }
  if (t.header.empty()) throw Error(ErrorKind::ParseError, t.source + ": empty file");
  return t;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

/// Label -> index map in first-appearance order of origin, then destination.
class LabelIndex {
 public:
  LabelIndex() = default;
  explicit LabelIndex(const std::vector<std::string>& labels) {
    for (const auto& l : labels) add(l);
  }

  Eigen::Index add(const std::string& label) {
    const auto [it, inserted] = index_.try_emplace(label, static_cast<Eigen::Index>(labels_.size()));
    if (inserted) labels_.push_back(label);
    return it->second;
  }
  std::optional<Eigen::Index> find(const std::string& label) const {
    const auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(labels_.size()); }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

namespace detail {

// Reads a dyadic value column into an n x n matrix over the given labels;
// unseen labels are an error, repeated dyads too. Absent dyads get `fill`.
inline Matrix read_dyadic(const CsvTable& t, const LabelIndex& idx, const std::string& value_col, double fill) {
  const std::size_t co = t.column("origin"), cd = t.column("destination"), cv = t.column(value_col);
  const Eigen::Index n = idx.size();
  Matrix m = Matrix::Constant(n, n, fill);
  Mask seen = Mask::Constant(n, n, false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto i = idx.find(row[co]);
    const auto j = idx.find(row[cd]);
    if (!i || !j) throw Error(ErrorKind::ParseError, where(t, r) + ": unknown location in '" + row[co] + "," + row[cd] + "'");
    if (seen(*i, *j)) throw Error(ErrorKind::ParseError, where(t, r) + ": duplicate dyad " + row[co] + "->" + row[cd]);
    seen(*i, *j) = true;
    m(*i, *j) = parse_number(row[cv], where(t, r));
  }
  return m;
}

inline LabelIndex labels_of(const CsvTable& t) {
  const std::size_t co = t.column("origin"), cd = t.column("destination");
  LabelIndex idx;
  for (const auto& row : t.rows) {
    idx.add(row[co]);
    idx.add(row[cd]);
  }
  return idx;
}

}  // namespace detail

/// `origin,destination,flow`; dyads not listed are zero.
inline FlowMatrix read_flows(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const LabelIndex idx = detail::labels_of(t);
  require(idx.size() > 0, ErrorKind::ParseError, path.string() + ": no rows");
  const Matrix m = detail::read_dyadic(t, idx, "flow", 0.0);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double v = detail::parse_number(t.rows[r][t.column("flow")], detail::where(t, r));
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error(ErrorKind::ParseError, detail::where(t, r) + ": flow must be finite and non-negative");
  }
  return FlowMatrix(idx.labels(), m);
}

/// `origin,destination,distance` over the given labels; the diagonal may be
/// omitted.
inline DistanceMatrix read_distances(const std::filesystem::path& path, const std::vector<std::string>& labels) {
  const CsvTable t = read_csv(path);
  const LabelIndex idx(labels);
  Matrix m = detail::read_dyadic(t, idx, "distance", std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (std::isnan(m(i, i))) m(i, i) = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (i != j && std::isnan(m(i, j)))
        throw Error(ErrorKind::ParseError,
                    path.string() + ": missing distance " + labels[static_cast<std::size_t>(i)] + "->" +
                        labels[static_cast<std::size_t>(j)]);
  }
  return DistanceMatrix(std::move(m));
}

/// `origin,destination,cost` (cost levels); returns log costs, NaN where a
/// dyad is absent.
inline Matrix read_log_costs(const std::filesystem::path& path, const std::vector<std::string>& labels) {
  const CsvTable t = read_csv(path);
  const Matrix m = detail::read_dyadic(t, LabelIndex(labels), "cost", std::numeric_limits<double>::quiet_NaN());
  require((m.array().isNaN() || m.array() > 0.0).all(), ErrorKind::ParseError, path.string() + ": costs must be positive");
  return m.array().log().matrix();
}

/// `origin,destination,tau_change`; absent dyads keep their cost (1).
inline CounterfactualSpec read_cf_spec(const std::filesystem::path& path, const std::vector<std::string>& labels) {
  const CsvTable t = read_csv(path);
  return CounterfactualSpec(detail::read_dyadic(t, LabelIndex(labels), "tau_change", 1.0));
}

/// `origin,destination,year,flow_report1,flow_report2`; empty fields are
/// missing reports, as are dyad-years not listed. Missing reports are then
/// resolved (see eb::resolve_missing).
inline eb::MirrorPanel read_mirror(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t co = t.column("origin"), cd = t.column("destination"), cy = t.column("year"),
                    c1 = t.column("flow_report1"), c2 = t.column("flow_report2");
  const LabelIndex idx = detail::labels_of(t);
  require(idx.size() > 0, ErrorKind::ParseError, path.string() + ": no rows");
  std::map<std::string, std::size_t> period_of;
  for (const auto& row : t.rows) period_of.try_emplace(row[cy], 0);
  eb::MirrorPanel panel;
  panel.labels = idx.labels();
  for (auto& [label, k] : period_of) {
    k = panel.periods.size();
    panel.periods.push_back(label);
  }
  const Eigen::Index n = idx.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  panel.report1.assign(panel.periods.size(), Matrix::Constant(n, n, nan));
  panel.report2.assign(panel.periods.size(), Matrix::Constant(n, n, nan));
  std::vector<Mask> seen(panel.periods.size(), Mask::Constant(n, n, false));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const Eigen::Index i = *idx.find(row[co]);
    const Eigen::Index j = *idx.find(row[cd]);
    const std::size_t p = period_of.at(row[cy]);
    if (seen[p](i, j))
      throw Error(ErrorKind::ParseError, detail::where(t, r) + ": duplicate dyad-year " + row[co] + "->" + row[cd]);
    seen[p](i, j) = true;
    auto value = [&](std::size_t c) {
      if (row[c].empty() || row[c] == "NA") return nan;
      const double v = detail::parse_number(row[c], detail::where(t, r));
      if (!(v >= 0.0) || !std::isfinite(v))
        throw Error(ErrorKind::ParseError, detail::where(t, r) + ": flow must be finite and non-negative");
      return v;
    };
    panel.report1[p](i, j) = value(c1);
    panel.report2[p](i, j) = value(c2);
  }
  eb::resolve_missing(panel);
  return panel;
}

inline std::string flows_csv(const FlowMatrix& f) {
  std::string s = "origin,destination,flow\n";
  for (Eigen::Index i = 0; i < f.size(); ++i)
    for (Eigen::Index j = 0; j < f.size(); ++j)
      s += f.labels()[static_cast<std::size_t>(i)] + "," + f.labels()[static_cast<std::size_t>(j)] + "," +
           detail::fmt(f(i, j)) + "\n";
  return s;
}

inline std::string distances_csv(const DistanceMatrix& d, const std::vector<std::string>& labels) {
  std::string s = "origin,destination,distance\n";
  for (Eigen::Index i = 0; i < d.size(); ++i)
    for (Eigen::Index j = 0; j < d.size(); ++j)
      if (i != j)
        s += labels[static_cast<std::size_t>(i)] + "," + labels[static_cast<std::size_t>(j)] + "," +
             detail::fmt(d(i, j)) + "\n";
  return s;
}

inline std::string mirror_csv(const eb::MirrorPanel& panel) {
  std::string s = "origin,destination,year,flow_report1,flow_report2\n";
  auto cell = [](double v) { return std::isnan(v) ? std::string() : detail::fmt(v); };
  for (std::size_t t = 0; t < panel.period_count(); ++t)
    for (Eigen::Index i = 0; i < panel.size(); ++i)
      for (Eigen::Index j = 0; j < panel.size(); ++j)
        s += panel.labels[static_cast<std::size_t>(i)] + "," + panel.labels[static_cast<std::size_t>(j)] + "," +
             panel.periods[t] + "," + cell(panel.report1[t](i, j)) + "," + cell(panel.report2[t](i, j)) + "\n";
  return s;
}

/// One row per successful draw: draw index, then one column per outcome.
inline std::string draws_csv(const DrawSet& ds) {
  std::string s = "draw";
  for (const auto& l : ds.outcome_labels) s += "," + l;
  s += "\n";
  for (Eigen::Index b = 0; b < ds.draws.rows(); ++b) {
    s += std::to_string(ds.draw_index[static_cast<std::size_t>(b)]);
    for (Eigen::Index q = 0; q < ds.draws.cols(); ++q) s += "," + detail::fmt(ds.draws(b, q));
    s += "\n";
  }
  return s;
}

/// Reads a draws file written by draws_csv back into a DrawSet.
inline DrawSet read_draws(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  require(t.header.size() >= 2 && t.header[0] == "draw", ErrorKind::ParseError,
          path.string() + ": expected a 'draw' column followed by outcomes");
  DrawSet ds;
  ds.outcome_labels.assign(t.header.begin() + 1, t.header.end());
  ds.draws.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size() - 1));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ds.draw_index.push_back(static_cast<std::size_t>(detail::parse_number(t.rows[r][0], detail::where(t, r))));
    for (std::size_t c = 1; c < t.header.size(); ++c)
      ds.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) =
          detail::parse_number(t.rows[r][c], detail::where(t, r));
  }
  ds.requested = t.rows.size();
  return ds;
}

// ---------------------------------------------------------------------------
// JSON

inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double number_of(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(number(v(k)));
  return a;
}

inline Vector vector_of(const Json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k) v(static_cast<Eigen::Index>(k)) = number_of(a[k]);
  return v;
}

inline Json to_json(const Interval& iv) {
  Json j;
  j["lo"] = number(iv.lo);
  j["hi"] = number(iv.hi);
  j["alpha"] = iv.alpha;
  j["kind"] = to_string(iv.kind);
  j["draws_used"] = iv.draws_used;
  j["draws_failed"] = iv.draws_failed;
  if (iv.kind == IntervalKind::Robust) j["robust_c"] = iv.robust_c;
  return j;
}

inline Json to_json(const gravity::PpmlFit& fit) {
  Json j;
  j["epsilon_hat"] = number(fit.epsilon_hat);
  j["variance"] = number(fit.variance);
  j["variance_projected"] = fit.variance_projected;
  j["observations"] = fit.cells.size();
  j["iterations"] = fit.iterations;
  j["deviance"] = number(fit.deviance);
  return j;
}

inline Json to_json(const gravity::GravityFit& fit) {
  Json j;
  j["beta_hat"] = number(fit.beta_hat);
  j["adj_r2"] = number(fit.adj_r2);
  j["residual_variance"] = number(fit.residual_variance);
  j["observations"] = fit.observations;
  return j;
}

inline Json to_json(const eb::GravityCoefficients& g) {
  Json j;
  j["beta_hat"] = number(g.beta);
  j["adj_r2"] = number(g.adj_r2);
  j["residual_variance"] = number(g.residual_variance);
  j["fe_origin"] = vector_json(g.fe_origin);
  j["fe_dest"] = vector_json(g.fe_dest);
  return j;
}

inline std::string dyad_key(const std::string& a, const std::string& b) { return a + "->" + b; }

/// Calibrated parameters keyed by dyad "origin->destination".
inline Json to_json(const eb::CalibratedParams& p) {
  Json j;
  j["labels"] = p.labels;
  j["periods"] = p.periods;
  Json gravity = Json::array();
  for (const auto& g : p.gravity) gravity.push_back(to_json(g));
  j["gravity"] = gravity;
  Json dyads = Json::object();
  for (Eigen::Index i = 0; i < p.size(); ++i)
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      Json d;
      d["p"] = number(p.p(i, k));
      d["b"] = number(p.b(i, k));
      d["s2"] = number(p.s2(i, k));
      d["sigma2"] = number(p.sigma2(i, k));
      if (p.s2_shrunk) d["s2_shrunk"] = number((*p.s2_shrunk)(i, k));
      if (p.sigma2_shrunk) d["sigma2_shrunk"] = number((*p.sigma2_shrunk)(i, k));
      Json mu = Json::array();
      for (const Matrix& m : p.mu) mu.push_back(number(m(i, k)));
      d["mu"] = mu;
      dyads[dyad_key(p.labels[static_cast<std::size_t>(i)], p.labels[static_cast<std::size_t>(k)])] = d;
    }
  j["dyads"] = dyads;
  return j;
}

inline eb::CalibratedParams params_from_json(const Json& j) {
  try {
    eb::CalibratedParams p;
    p.labels = j.at("labels").get<std::vector<std::string>>();
    p.periods = j.at("periods").get<std::vector<std::string>>();
    const Eigen::Index n = static_cast<Eigen::Index>(p.labels.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    p.p = p.b = p.s2 = p.sigma2 = Matrix::Constant(n, n, nan);
    p.mu.assign(p.periods.size(), Matrix::Constant(n, n, nan));
    for (const Json& g : j.value("gravity", Json::array())) {
      eb::GravityCoefficients c;
      c.beta = number_of(g.at("beta_hat"));
      c.adj_r2 = number_of(g.at("adj_r2"));
      c.residual_variance = number_of(g.at("residual_variance"));
      c.fe_origin = vector_of(g.at("fe_origin"));
      c.fe_dest = vector_of(g.at("fe_dest"));
      p.gravity.push_back(std::move(c));
    }
    const Json& dyads = j.at("dyads");
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < n; ++k) {
        const Json& d = dyads.at(dyad_key(p.labels[static_cast<std::size_t>(i)], p.labels[static_cast<std::size_t>(k)]));
        p.p(i, k) = number_of(d.at("p"));
        p.b(i, k) = number_of(d.at("b"));
        p.s2(i, k) = number_of(d.at("s2"));
        p.sigma2(i, k) = number_of(d.at("sigma2"));
        if (d.contains("s2_shrunk")) {
          if (!p.s2_shrunk) p.s2_shrunk = Matrix::Zero(n, n);
          (*p.s2_shrunk)(i, k) = number_of(d.at("s2_shrunk"));
        }
        if (d.contains("sigma2_shrunk")) {
          if (!p.sigma2_shrunk) p.sigma2_shrunk = Matrix::Zero(n, n);
          (*p.sigma2_shrunk)(i, k) = number_of(d.at("sigma2_shrunk"));
        }
        const Json& mu = d.at("mu");
        require(mu.size() == p.periods.size(), ErrorKind::ParseError, "one prior mean per period expected");
        for (std::size_t t = 0; t < mu.size(); ++t) p.mu[t](i, k) = number_of(mu[t]);
      }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("calibrated parameters: ") + e.what());
  }
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace flowuq::io
