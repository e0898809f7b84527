#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowuq/armington.hpp"
#include "flowuq/attenuation.hpp"
#include "flowuq/diagnostics.hpp"
#include "flowuq/eb.hpp"
#include "flowuq/gravity.hpp"
#include "flowuq/io.hpp"
#include "flowuq/uq.hpp"

namespace flowuq::cli {

namespace fs = std::filesystem;
using io::Json;

inline constexpr const char* kWorkersEnv = "FLOWUQ_WORKERS";

enum ExitCode : int { kOk = 0, kDataError = 2, kIdentificationError = 3, kTooManyFailures = 4, kOtherError = 1 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::ParseError:
    case ErrorKind::Io:
    case ErrorKind::InvalidInput:
    case ErrorKind::ZeroMarginal:
    case ErrorKind::LengthMismatch:
      return kDataError;
    case ErrorKind::Collinear:
    case ErrorKind::InsufficientData:
    case ErrorKind::Separation:
    case ErrorKind::NotPSD:
      return kIdentificationError;
    case ErrorKind::TooManyFailures:
      return kTooManyFailures;
    default:
      return kOtherError;
  }
}

/// Model evaluated for smoke tests: returns the same value whatever the data.
class ConstantModel final : public ModelFunction {
 public:
  explicit ConstantModel(double value) : value_(value) {}
  std::string name() const override { return "constant"; }
  Vector evaluate(const FlowMatrix&, const Vector&, const CounterfactualSpec&) const override {
    return Vector::Constant(1, value_);
  }
  std::vector<std::string> outcome_labels(const FlowMatrix&) const override { return {"constant"}; }

 private:
  double value_;
};

// ---------------------------------------------------------------------------
// Flat key=value config files

/// Turns `key = value` lines into `--key=value` tokens. Blank lines and lines
/// starting with '#' are skipped; surrounding quotes on values are removed.
inline std::vector<std::string> config_tokens(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = io::detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = io::detail::trim(t.substr(0, eq));
    std::string value = io::detail::trim(t.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
      value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

/// Splices config-file tokens in right after the subcommand so that any
/// explicit command-line value (parsed later, TakeLast) wins.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t k = 0; k < args.size(); ++k) {
    std::string path;
    std::size_t consumed = 0;
    if (args[k] == "--config" && k + 1 < args.size()) {
      path = args[k + 1];
      consumed = 2;
    } else if (args[k].rfind("--config=", 0) == 0) {
      path = args[k].substr(9);
      consumed = 1;
    } else {
      continue;
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(k), args.begin() + static_cast<std::ptrdiff_t>(k + consumed));
    const std::vector<std::string> tokens = config_tokens(path);
    // First non-option argument is the subcommand.
    std::size_t at = 0;
    while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
    at = std::min(at + 1, args.size());
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), tokens.begin(), tokens.end());
    return args;
  }
  return args;
}

// ---------------------------------------------------------------------------
// Option sets

struct CommonOptions {
  std::string out = "out";
  unsigned workers = 1;
  std::uint64_t seed = 0;
};

struct CalibrateOptions {
  std::string mirror, flows, distances, period;
  double sigma2 = 0.0, p = 0.0, b = 0.0;
  bool no_shrink = false;
};

struct EstimateOptions {
  std::string flows, costs, distances, variance = "dyadic";
  bool include_diagonal = false;
};

struct CounterfactualOptions {
  std::string flows, cf_spec;
  double uniform_increase = 0.0;
  double epsilon = std::numeric_limits<double>::quiet_NaN();
};

struct UqOptions {
  std::string flows, mirror, params, period, cf_spec, costs, distances;
  std::string model = "armington", mode = "EE+ME", interval = "C1", smoother = "none";
  std::vector<std::string> outcomes;
  double uniform_increase = 0.0, constant = 0.0, robust_c = 1.0, alpha = 0.05, max_failure_fraction = 0.05;
  std::optional<double> epsilon, epsilon_variance;
  std::size_t draws = 1000, inner_draws = 200;
  Eigen::Index rank = 1;
  bool lognormal_theta = false, reestimate_on_smoothed = false;
  std::string variance = "dyadic";
};

struct DiagnoseOptions {
  std::string flows, mirror, params, distances, period;
};

struct AttenuationOptions {
  attenuation::AttenuationSimConfig sim;
  std::size_t bins = 40;
};

struct RanksOptions {
  std::vector<std::string> draws;
};

namespace detail {

inline void log_line(const std::string& msg) { std::cerr << "flowuq: " << msg << "\n"; }

inline Provenance parse_mode(const std::string& s) {
  if (s == "only-EE" || s == "ee") return Provenance::OnlyEE;
  if (s == "only-ME" || s == "me") return Provenance::OnlyME;
  if (s == "EE+ME" || s == "both") return Provenance::Both;
  throw Error(ErrorKind::InvalidInput, "unknown mode '" + s + "' (only-EE, only-ME, EE+ME)");
}

inline IntervalKind parse_interval(const std::string& s) {
  if (s == "C1" || s == "c1") return IntervalKind::C1;
  if (s == "C2" || s == "c2") return IntervalKind::C2;
  if (s == "robust") return IntervalKind::Robust;
  throw Error(ErrorKind::InvalidInput, "unknown interval kind '" + s + "' (C1, C2, robust)");
}

inline gravity::VarianceKind parse_variance(const std::string& s) {
  if (s == "dyadic") return gravity::VarianceKind::Dyadic;
  if (s == "independent") return gravity::VarianceKind::Independent;
  throw Error(ErrorKind::InvalidInput, "unknown variance kind '" + s + "' (dyadic, independent)");
}

inline void require_file(const std::string& path, const std::string& what) {
  require(!path.empty(), ErrorKind::InvalidInput, "--" + what + " is required");
  require(fs::exists(path), ErrorKind::Io, what + " file not found: " + path);
}

inline std::size_t pick_period(const std::vector<std::string>& periods, const std::string& label) {
  if (label.empty()) return periods.size() - 1;
  const auto it = std::find(periods.begin(), periods.end(), label);
  require(it != periods.end(), ErrorKind::InvalidInput, "unknown period " + label);
  return static_cast<std::size_t>(it - periods.begin());
}

inline std::string csv_pairs(const std::string& header, const std::vector<double>& a, const std::vector<double>& b) {
  std::string s = header + "\n";
  for (std::size_t k = 0; k < a.size(); ++k) s += io::detail::fmt(a[k]) + "," + io::detail::fmt(b[k]) + "\n";
  return s;
}

inline Json summary_json(const diagnostics::NormalityReport& rep) {
  Json j;
  const auto& s = rep.summary;
  j["count"] = s.count;
  j["mean"] = io::number(s.mean);
  j["variance"] = io::number(s.variance);
  j["skewness"] = io::number(s.skewness);
  j["excess_kurtosis"] = io::number(s.excess_kurtosis);
  j["ks_distance"] = io::number(s.ks_distance);
  j["heavy_tails"] = s.heavy_tails;
  Json h;
  h["edges"] = rep.histogram.edges;
  h["counts"] = rep.histogram.counts;
  h["expected"] = rep.histogram.expected;
  h["below"] = rep.histogram.below;
  h["above"] = rep.histogram.above;
  j["histogram"] = h;
  return j;
}

inline void write_diagnostics(const fs::path& out, const FlowMatrix& flows, const eb::CalibratedParams& params,
                              std::size_t period, const DistanceMatrix* distances) {
  const diagnostics::NormalityReport rep = diagnostics::normality_diagnostic(flows, params, period);
  io::write_json(out / "normality.json", summary_json(rep));
  std::string res = "origin,destination,residual\n";
  for (std::size_t k = 0; k < rep.residuals.size(); ++k)
    res += params.labels[static_cast<std::size_t>(rep.dyads[k].origin)] + "," +
           params.labels[static_cast<std::size_t>(rep.dyads[k].dest)] + "," + io::detail::fmt(rep.residuals[k]) + "\n";
  io::write_text(out / "normality_residuals.csv", res);
  if (distances == nullptr) return;
  const diagnostics::PartialPlot plot = diagnostics::gravity_partial_plot(flows, *distances);
  io::write_text(out / "gravity_plot.csv", csv_pairs("x,y", plot.x, plot.y));
  io::write_text(out / "gravity_bins.csv", csv_pairs("bin_center,bin_mean", plot.bin_center, plot.bin_mean));
  Json fit;
  fit["slope"] = io::number(plot.slope);
  fit["intercept"] = io::number(plot.intercept);
  fit["beta_hat"] = io::number(plot.gravity_beta);
  io::write_json(out / "gravity_plot_fit.json", fit);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline int cmd_calibrate(const CommonOptions& c, const CalibrateOptions& o) {
  const fs::path out = c.out;
  detail::require_file(o.distances, "distances");
  Json log;
  eb::CalibratedParams params;
  FlowMatrix observed(Matrix::Zero(1, 1));
  std::size_t period = 0;
  std::optional<DistanceMatrix> dist;
  if (!o.mirror.empty()) {
    detail::require_file(o.mirror, "mirror");
    const eb::MirrorPanel panel = io::read_mirror(o.mirror);
    const auto& na = panel.na_resolution;
    detail::log_line("missing reports: copied " + std::to_string(na.copied_dyads) + " one-sided dyads (" +
                     std::to_string(na.copied_cells) + " cells), set " + std::to_string(na.zeroed_cells) +
                     " cells to zero");
    log["na_resolution"] = {{"copied_dyads", na.copied_dyads},
                            {"copied_cells", na.copied_cells},
                            {"zeroed_cells", na.zeroed_cells}};
    dist = io::read_distances(o.distances, panel.labels);
    eb::MirrorOptions mo;
    mo.shrink = !o.no_shrink;
    params = eb::calibrate_mirror(panel, *dist, mo);
    const eb::ZeroProbabilities zp = eb::estimate_zero_probs(panel);
    Json cases = Json::object();
    for (int k = 0; k <= 6; ++k) cases[std::to_string(k)] = (zp.case_id.array() == k).count() - (k == 0 ? panel.size() : 0);
    log["zero_probability_cases"] = cases;
    period = detail::pick_period(panel.periods, o.period);
    observed = panel.observed(period);
  } else {
    detail::require_file(o.flows, "flows");
    observed = io::read_flows(o.flows);
    dist = io::read_distances(o.distances, observed.labels());
    const Eigen::Index n = observed.size();
    params = eb::calibrate_baseline(observed, *dist, o.sigma2, Matrix::Constant(n, n, o.p), Matrix::Constant(n, n, o.b));
  }
  io::write_json(out / "params.json", io::to_json(params));
  Json fits = Json::array();
  for (std::size_t t = 0; t < params.gravity.size(); ++t) {
    Json f = io::to_json(params.gravity[t]);
    f.erase("fe_origin");
    f.erase("fe_dest");
    f["period"] = params.periods[t];
    fits.push_back(f);
  }
  io::write_json(out / "gravity_fit.json", fits);
  log["period"] = params.periods[period];
  io::write_json(out / "calibration_log.json", log);
  detail::write_diagnostics(out, observed, params, period, &*dist);
  detail::log_line("adjusted R-squared (" + params.periods[period] + "): " +
                   io::detail::fmt(params.gravity[period].adj_r2));
  return kOk;
}

inline int cmd_estimate(const CommonOptions& c, const EstimateOptions& o) {
  detail::require_file(o.flows, "flows");
  require(!o.costs.empty() || !o.distances.empty(), ErrorKind::InvalidInput, "--costs or --distances is required");
  const FlowMatrix flows = io::read_flows(o.flows);
  Json j;
  if (!o.costs.empty()) {
    detail::require_file(o.costs, "costs");
    gravity::PpmlOptions po;
    po.include_diagonal = o.include_diagonal;
    po.variance = detail::parse_variance(o.variance);
    const gravity::PpmlFit fit = gravity::fit_ppml(flows, io::read_log_costs(o.costs, flows.labels()), po);
    j["ppml"] = io::to_json(fit);
    if (fit.variance_projected) detail::log_line("dyadic variance was negative and has been set to zero");
  }
  if (!o.distances.empty()) {
    detail::require_file(o.distances, "distances");
    j["gravity"] = io::to_json(gravity::fit_log_gravity(flows, io::read_distances(o.distances, flows.labels())));
  }
  io::write_json(fs::path(c.out) / "estimate.json", j);
  return kOk;
}

inline CounterfactualSpec load_spec(const std::string& path, double uniform, const std::vector<std::string>& labels) {
  if (!path.empty()) {
    detail::require_file(path, "cf-spec");
    return io::read_cf_spec(path, labels);
  }
  require(uniform > -1.0, ErrorKind::InvalidInput, "uniform increase must exceed -1");
  return CounterfactualSpec::uniform_increase(static_cast<Eigen::Index>(labels.size()), uniform);
}

inline int cmd_counterfactual(const CommonOptions& c, const CounterfactualOptions& o) {
  detail::require_file(o.flows, "flows");
  require(std::isfinite(o.epsilon), ErrorKind::InvalidInput, "--epsilon is required");
  const FlowMatrix flows = io::read_flows(o.flows);
  const CounterfactualSpec spec = load_spec(o.cf_spec, o.uniform_increase, flows.labels());
  const armington::EquilibriumResult eq = armington::solve_counterfactual(flows, spec, o.epsilon);
  const Vector pct = armington::welfare_change_pct(eq);
  Json j;
  j["epsilon"] = o.epsilon;
  j["iterations"] = eq.iterations;
  j["residual"] = io::number(eq.residual);
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < flows.size(); ++i)
    rows.push_back({{"location", flows.labels()[static_cast<std::size_t>(i)]},
                    {"welfare_change_pct", io::number(pct(i))},
                    {"income_change", io::number(eq.y_prop(i))}});
  j["outcomes"] = rows;
  io::write_json(fs::path(c.out) / "counterfactual.json", j);
  return kOk;
}

inline int cmd_uq(const CommonOptions& c, const UqOptions& o) {
  uq::UqConfig cfg;
  cfg.draws = o.draws;
  cfg.alpha = o.alpha;
  cfg.seed = c.seed;
  cfg.mode = detail::parse_mode(o.mode);
  cfg.interval = detail::parse_interval(o.interval);
  cfg.robust_c = o.robust_c;
  cfg.inner_draws = o.inner_draws;
  cfg.max_failure_fraction = o.max_failure_fraction;
  cfg.workers = c.workers;
  cfg.validate();

  // Observed flows and calibrated parameters.
  std::optional<eb::CalibratedParams> params;
  if (!o.params.empty()) {
    detail::require_file(o.params, "params");
    params = io::params_from_json(io::read_json(o.params));
  }
  std::optional<FlowMatrix> observed;
  std::size_t period = 0;
  if (!o.mirror.empty()) {
    detail::require_file(o.mirror, "mirror");
    const eb::MirrorPanel panel = io::read_mirror(o.mirror);
    period = detail::pick_period(panel.periods, o.period);
    observed = panel.observed(period);
  } else {
    detail::require_file(o.flows, "flows");
    observed = io::read_flows(o.flows);
  }
  if (params) {
    require(params->labels == observed->labels(), ErrorKind::InvalidInput,
            "calibrated parameters and flows list different locations");
    period = detail::pick_period(params->periods, o.period.empty() ? params->periods.back() : o.period);
  } else {
    require(cfg.mode == Provenance::OnlyEE, ErrorKind::InvalidInput,
            "--params is required unless --mode only-EE");
  }

  // Estimation-error posterior.
  uq::ThetaPosterior theta;
  std::optional<Matrix> log_costs;
  if (o.epsilon) {
    theta = uq::ThetaPosterior::external(EstimatorResult::scalar(*o.epsilon, o.epsilon_variance.value_or(0.0)),
                                         o.lognormal_theta);
  } else {
    require(!o.costs.empty(), ErrorKind::InvalidInput, "--epsilon or --costs is required");
    detail::require_file(o.costs, "costs");
    log_costs = io::read_log_costs(o.costs, observed->labels());
    gravity::PpmlOptions po;
    po.variance = detail::parse_variance(o.variance);
    theta = uq::ThetaPosterior::reestimated(
        [lc = *log_costs, po](const FlowMatrix& f) { return gravity::to_estimator_result(gravity::fit_ppml(f, lc, po)); },
        o.lognormal_theta);
  }

  // Model.
  std::unique_ptr<ModelFunction> g;
  if (o.model == "armington") {
    std::vector<Eigen::Index> subset;
    for (const auto& label : o.outcomes) {
      const auto& ls = observed->labels();
      const auto it = std::find(ls.begin(), ls.end(), label);
      require(it != ls.end(), ErrorKind::InvalidInput, "unknown outcome location " + label);
      subset.push_back(static_cast<Eigen::Index>(it - ls.begin()));
    }
    g = std::make_unique<armington::Model>(armington::SolverOptions{}, subset);
  } else if (o.model == "constant") {
    g = std::make_unique<ConstantModel>(o.constant);
  } else {
    throw Error(ErrorKind::InvalidInput, "unknown model '" + o.model + "' (armington, constant)");
  }
  const CounterfactualSpec spec = load_spec(o.cf_spec, o.uniform_increase, observed->labels());

  // Smoother.
  uq::Smoother sm;
  sm.reestimate_on_smoothed = o.reestimate_on_smoothed;
  if (o.smoother == "svd") {
    sm.kind = uq::SmootherKind::Svd;
    sm.rank = o.rank;
  } else if (o.smoother == "lowdim") {
    sm.kind = uq::SmootherKind::LowDim;
    detail::require_file(o.distances, "distances");
    sm.distances = io::read_distances(o.distances, observed->labels());
  } else {
    require(o.smoother == "none", ErrorKind::InvalidInput, "unknown smoother '" + o.smoother + "' (none, lowdim, svd)");
  }

  uq::UqResult r;
  if (params) {
    if (sm.kind == uq::SmootherKind::Svd)
      require(sm.rank <= observed->size(), ErrorKind::RankTooLarge, "rank exceeds number of locations");
    r = uq::run_algorithm3(*observed, *params, theta, *g, spec, cfg, period, sm);
  } else {
    const uq::DataSampler identity = [](const FlowMatrix& f, Rng&) { return f; };
    r = uq::run_algorithm2(*observed, identity, theta, *g, spec, cfg, sm);
  }

  const fs::path out = c.out;
  io::write_text(out / "draws.csv", io::draws_csv(r.draws));
  const EstimatorResult est = theta.at(*observed);
  Json j;
  j["model"] = g->name();
  j["mode"] = to_string(cfg.mode);
  j["interval_kind"] = to_string(cfg.interval);
  j["alpha"] = cfg.alpha;
  j["seed"] = cfg.seed;
  j["draws_requested"] = r.draws.requested;
  j["draws_used"] = r.draws.used();
  j["draws_failed"] = r.draws.failed;
  j["theta_hat"] = io::vector_json(est.theta_hat());
  j["theta_variance"] = io::vector_json(est.sigma_hat().diagonal());
  if (params) j["period"] = params->periods[period];
  Json outcomes = Json::array();
  for (std::size_t q = 0; q < r.intervals.size(); ++q)
    outcomes.push_back({{"label", r.draws.outcome_labels[q]},
                        {"point_estimate", io::number(r.point_estimate(static_cast<Eigen::Index>(q)))},
                        {"interval", io::to_json(r.intervals[q])}});
  j["outcomes"] = outcomes;
  j["flags"] = {{"degenerate_zero_draws", r.degenerate_zero_draws},
                {"undefined_mean_draws", r.undefined_mean_draws},
                {"smoothing_clamped", r.smoothing_clamped},
                {"failure_adjusted_quantiles", r.draws.failed > 0}};
  j["failure_diagnostics"] = r.failure_diagnostics;
  io::write_json(out / "intervals.json", j);
  if (r.draws.failed > 0)
    detail::log_line(std::to_string(r.draws.failed) + " draws failed; quantile positions use the requested count");
  if (r.degenerate_zero_draws > 0)
    detail::log_line(std::to_string(r.degenerate_zero_draws) + " zero flows with p = b = 0 kept at zero");
  if (r.smoothing_clamped > 0)
    detail::log_line(std::to_string(r.smoothing_clamped) + " negative smoothed entries clamped to zero");
  return kOk;
}

inline int cmd_diagnose(const CommonOptions& c, const DiagnoseOptions& o) {
  detail::require_file(o.params, "params");
  const eb::CalibratedParams params = io::params_from_json(io::read_json(o.params));
  const std::size_t period = detail::pick_period(params.periods, o.period);
  std::optional<FlowMatrix> flows;
  if (!o.mirror.empty()) {
    detail::require_file(o.mirror, "mirror");
    const eb::MirrorPanel panel = io::read_mirror(o.mirror);
    flows = panel.observed(detail::pick_period(panel.periods, params.periods[period]));
  } else {
    detail::require_file(o.flows, "flows");
    flows = io::read_flows(o.flows);
  }
  std::optional<DistanceMatrix> dist;
  if (!o.distances.empty()) {
    detail::require_file(o.distances, "distances");
    dist = io::read_distances(o.distances, flows->labels());
  }
  detail::write_diagnostics(c.out, *flows, params, period, dist ? &*dist : nullptr);
  return kOk;
}

inline int cmd_simulate_attenuation(const CommonOptions& c, AttenuationOptions o) {
  o.sim.seed = c.seed;
  o.sim.workers = c.workers;
  if (o.sim.rho < 0.0) detail::log_line("rho < 0: costs fall with distance");
  const std::vector<double> bias = attenuation::run_attenuation_sim(o.sim);
  const fs::path out = c.out;
  std::string s = "rep,median_bias\n";
  for (std::size_t m = 0; m < bias.size(); ++m) s += std::to_string(m) + "," + io::detail::fmt(bias[m]) + "\n";
  io::write_text(out / "attenuation_biases.csv", s);

  const auto [lo_it, hi_it] = std::minmax_element(bias.begin(), bias.end());
  const double lo = *lo_it;
  const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
  const std::size_t bins = std::max<std::size_t>(o.bins, 1);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : bias)
    ++counts[std::min(bins - 1, static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins)))];
  std::string h = "bin_lo,bin_hi,count\n";
  for (std::size_t k = 0; k < bins; ++k)
    h += io::detail::fmt(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins)) + "," +
         io::detail::fmt(lo + (hi - lo) * static_cast<double>(k + 1) / static_cast<double>(bins)) + "," +
         std::to_string(counts[k]) + "\n";
  io::write_text(out / "attenuation_histogram.csv", h);

  const double mean = std::accumulate(bias.begin(), bias.end(), 0.0) / static_cast<double>(bias.size());
  double var = 0.0;
  for (double v : bias) var += (v - mean) * (v - mean);
  var /= static_cast<double>(bias.size());
  Json j;
  j["reps"] = o.sim.reps;
  j["draws"] = o.sim.draws;
  j["locations"] = o.sim.locations;
  j["rho"] = o.sim.rho;
  j["epsilon"] = o.sim.epsilon;
  j["s"] = o.sim.s;
  j["varsigma"] = o.sim.varsigma;
  j["prior_mean_zero"] = o.sim.prior_mean_zero;
  j["mean_bias"] = mean;
  j["sd_bias"] = std::sqrt(var);
  io::write_json(out / "attenuation_summary.json", j);
  detail::log_line("mean of median biases: " + io::detail::fmt(mean));
  return kOk;
}

struct RankPair {
  std::string higher, lower;
  double mean_higher = 0.0, mean_lower = 0.0;
  double reversal = 0.0;  // share of draws ordered the other way
  double ties = 0.0;      // share of draws with equal values
};

/// Outcomes are ordered by their mean draw; for every pair the share of
/// joint draws that reverse that order (and, separately, that tie).
inline std::vector<RankPair> rank_reversals(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& cols) {
  require(cols.size() >= 2, ErrorKind::InvalidInput, "need at least two outcomes");
  for (const auto& col : cols)
    require(col.size() == cols[0].size() && !col.empty(), ErrorKind::LengthMismatch,
            "outcome draw sets differ in length");
  std::vector<double> mean;
  for (const auto& col : cols) mean.push_back(std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size()));
  std::vector<std::size_t> order(cols.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
  std::vector<RankPair> out;
  const double B = static_cast<double>(cols[0].size());
  for (std::size_t x = 0; x < order.size(); ++x)
    for (std::size_t y = x + 1; y < order.size(); ++y) {
      const auto& hi = cols[order[x]];
      const auto& lo = cols[order[y]];
      RankPair p{labels[order[x]], labels[order[y]], mean[order[x]], mean[order[y]], 0.0, 0.0};
      for (std::size_t b = 0; b < hi.size(); ++b) {
        if (hi[b] < lo[b]) p.reversal += 1.0;
        if (hi[b] == lo[b]) p.ties += 1.0;
      }
      p.reversal /= B;
      p.ties /= B;
      out.push_back(p);
    }
  return out;
}

inline int cmd_report_ranks(const CommonOptions& c, const RanksOptions& o) {
  require(!o.draws.empty(), ErrorKind::InvalidInput, "--draws is required");
  std::vector<std::string> labels;
  std::vector<std::vector<double>> cols;
  std::optional<std::vector<std::size_t>> index;
  for (const auto& path : o.draws) {
    detail::require_file(path, "draws");
    const DrawSet ds = io::read_draws(path);
    if (!index) index = ds.draw_index;
    require(ds.draw_index == *index, ErrorKind::LengthMismatch, path + ": draws are not aligned with " + o.draws[0]);
    for (Eigen::Index q = 0; q < ds.draws.cols(); ++q) {
      labels.push_back(o.draws.size() > 1 ? fs::path(path).stem().string() + ":" + ds.outcome_labels[static_cast<std::size_t>(q)]
                                          : ds.outcome_labels[static_cast<std::size_t>(q)]);
      cols.push_back(ds.column(q));
    }
  }
  const std::vector<RankPair> pairs = rank_reversals(labels, cols);
  std::string s = "higher,lower,mean_higher,mean_lower,reversal,ties\n";
  for (const auto& p : pairs)
    s += p.higher + "," + p.lower + "," + io::detail::fmt(p.mean_higher) + "," + io::detail::fmt(p.mean_lower) + "," +
         io::detail::fmt(p.reversal) + "," + io::detail::fmt(p.ties) + "\n";
  io::write_text(fs::path(c.out) / "ranks.csv", s);
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args) {
  CLI::App app{"Uncertainty intervals for counterfactuals computed from mismeasured flow data", "flowuq"};
  app.require_subcommand(1);
  app.add_option("--config", "flat key=value file; command-line values take precedence");

  CommonOptions common;
  if (const char* env = std::getenv(kWorkersEnv)) {
    try {
      common.workers = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      detail::log_line(std::string("ignoring ") + kWorkersEnv + "=" + env);
    }
  }
  auto add_common = [&](CLI::App* sub, bool seeded) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--out", common.out, "output directory")->capture_default_str();
    sub->add_option("--workers", common.workers, std::string("worker threads (default from ") + kWorkersEnv + ")")
        ->check(CLI::PositiveNumber);
    if (seeded) sub->add_option("--seed", common.seed, "random seed")->capture_default_str();
  };

  CalibrateOptions cal;
  CLI::App* calibrate = app.add_subcommand("calibrate", "estimate measurement-error and prior parameters");
  add_common(calibrate, false);
  calibrate->add_option("--mirror", cal.mirror, "mirror panel CSV");
  calibrate->add_option("--flows", cal.flows, "flow CSV (baseline regime)");
  calibrate->add_option("--distances", cal.distances, "distance CSV");
  calibrate->add_option("--period", cal.period, "period for diagnostics (default: last)");
  calibrate->add_option("--sigma2", cal.sigma2, "common measurement-error variance (baseline regime)");
  calibrate->add_option("--p", cal.p, "true-zero probability (baseline regime)");
  calibrate->add_option("--b", cal.b, "spurious-zero probability (baseline regime)");
  calibrate->add_flag("--no-shrink", cal.no_shrink, "keep unshrunk variances");

  EstimateOptions est;
  CLI::App* estimate = app.add_subcommand("estimate", "PPML elasticity and log-linear gravity fits");
  add_common(estimate, false);
  estimate->add_option("--flows", est.flows, "flow CSV");
  estimate->add_option("--costs", est.costs, "trade-cost CSV (origin,destination,cost)");
  estimate->add_option("--distances", est.distances, "distance CSV");
  estimate->add_option("--variance", est.variance, "dyadic or independent")->capture_default_str();
  estimate->add_flag("--include-diagonal", est.include_diagonal, "include own flows in PPML");

  CounterfactualOptions cf;
  CLI::App* counterfactual = app.add_subcommand("counterfactual", "solve the Armington counterfactual");
  add_common(counterfactual, false);
  counterfactual->add_option("--flows", cf.flows, "flow CSV");
  counterfactual->add_option("--cf-spec", cf.cf_spec, "cost-change CSV (origin,destination,tau_change)");
  counterfactual->add_option("--uniform-increase", cf.uniform_increase, "uniform cost increase on all foreign dyads");
  counterfactual->add_option("--epsilon", cf.epsilon, "trade elasticity");

  UqOptions u;
  CLI::App* uqc = app.add_subcommand("uq", "posterior draws and intervals for counterfactual outcomes");
  add_common(uqc, true);
  uqc->add_option("--flows", u.flows, "observed flow CSV");
  uqc->add_option("--mirror", u.mirror, "mirror panel CSV (observed flows are the first report)");
  uqc->add_option("--params", u.params, "calibrated parameters JSON");
  uqc->add_option("--period", u.period, "period label (default: last)");
  uqc->add_option("--model", u.model, "armington or constant")->capture_default_str();
  uqc->add_option("--constant", u.constant, "value returned by the constant model");
  uqc->add_option("--outcomes", u.outcomes, "locations to report (default: all)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  uqc->add_option("--cf-spec", u.cf_spec, "cost-change CSV");
  uqc->add_option("--uniform-increase", u.uniform_increase, "uniform cost increase on all foreign dyads");
  uqc->add_option("--epsilon", u.epsilon, "external elasticity estimate");
  uqc->add_option("--epsilon-variance", u.epsilon_variance, "sampling variance of the external estimate");
  uqc->add_option("--costs", u.costs, "trade-cost CSV; re-estimates the elasticity by PPML on every draw");
  uqc->add_option("--variance", u.variance, "PPML variance: dyadic or independent")->capture_default_str();
  uqc->add_flag("--lognormal-theta", u.lognormal_theta, "log-normal instead of normal parameter draws");
  uqc->add_option("--draws", u.draws, "number of draws B")->capture_default_str();
  uqc->add_option("--alpha", u.alpha, "tail mass")->capture_default_str();
  uqc->add_option("--mode", u.mode, "only-EE, only-ME or EE+ME")->capture_default_str();
  uqc->add_option("--interval", u.interval, "C1, C2 or robust")->capture_default_str();
  uqc->add_option("--robust-c", u.robust_c, "density-ratio bound for robust intervals")->capture_default_str();
  uqc->add_option("--inner-draws", u.inner_draws, "parameter draws per data draw for C2")->capture_default_str();
  uqc->add_option("--max-failure-fraction", u.max_failure_fraction, "share of failed draws tolerated")
      ->capture_default_str();
  uqc->add_option("--smoother", u.smoother, "none, lowdim or svd")->capture_default_str();
  uqc->add_option("--rank", u.rank, "rank kept by the svd smoother")->capture_default_str();
  uqc->add_option("--distances", u.distances, "distance CSV (lowdim smoother)");
  uqc->add_flag("--reestimate-on-smoothed", u.reestimate_on_smoothed, "estimate parameters on smoothed draws");

  DiagnoseOptions dg;
  CLI::App* diagnose = app.add_subcommand("diagnose", "normality and gravity-fit diagnostics");
  add_common(diagnose, false);
  diagnose->add_option("--flows", dg.flows, "observed flow CSV");
  diagnose->add_option("--mirror", dg.mirror, "mirror panel CSV");
  diagnose->add_option("--params", dg.params, "calibrated parameters JSON");
  diagnose->add_option("--distances", dg.distances, "distance CSV (enables the gravity plot)");
  diagnose->add_option("--period", dg.period, "period label (default: last)");

  AttenuationOptions at;
  at.sim.reps = 2000;
  at.sim.draws = 200;
  CLI::App* sim = app.add_subcommand("simulate-attenuation", "median posterior bias of the implied elasticity");
  add_common(sim, true);
  sim->add_option("--reps", at.sim.reps, "outer replications M")->capture_default_str();
  sim->add_option("--draws", at.sim.draws, "posterior draws B")->capture_default_str();
  sim->add_option("--locations", at.sim.locations, "locations n")->capture_default_str();
  sim->add_option("--rho", at.sim.rho, "cost-distance loading")->capture_default_str();
  sim->add_option("--epsilon", at.sim.epsilon, "true elasticity")->capture_default_str();
  sim->add_option("--s", at.sim.s, "prior sd")->capture_default_str();
  sim->add_option("--varsigma", at.sim.varsigma, "measurement-error sd")->capture_default_str();
  sim->add_flag("--prior-mean-zero", at.sim.prior_mean_zero, "shrink toward zero instead of the gravity fit");
  sim->add_option("--bins", at.bins, "histogram bins")->capture_default_str();

  RanksOptions rk;
  CLI::App* ranks = app.add_subcommand("report-ranks", "pairwise rank-reversal frequencies across outcomes");
  add_common(ranks, false);
  ranks->add_option("--draws", rk.draws, "draw CSV files")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  try {
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kDataError;
  } catch (const Error& e) {
    detail::log_line(e.what());
    return exit_code_for(e.kind());
  }

  try {
    if (*calibrate) return cmd_calibrate(common, cal);
    if (*estimate) return cmd_estimate(common, est);
    if (*counterfactual) return cmd_counterfactual(common, cf);
    if (*uqc) return cmd_uq(common, u);
    if (*diagnose) return cmd_diagnose(common, dg);
    if (*sim) return cmd_simulate_attenuation(common, at);
    if (*ranks) return cmd_report_ranks(common, rk);
  } catch (const Error& e) {
    detail::log_line(e.what());
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    detail::log_line(std::string("Io: ") + e.what());
    return kDataError;
  }
  return kOtherError;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace flowuq::cli
