#pragma once

// Closed-loop episode runner (score -> loss -> level update -> window push ->
// model update -> calibration -> control synthesis -> apply), trace metrics,
// and executable checks of the algorithm's deterministic guarantees.

#include "cg/aci.hpp"
#include "cg/env.hpp"
#include "cg/mpc.hpp"
#include "cg/surrogate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace cg {

// Tolerances for the audits: exact algebraic identities and inequalities.
inline constexpr double kIdentityTol = 1e-9;
inline constexpr double kInequalityTol = 1e-12;

struct EpisodeConfig {
  EnvKind env = EnvKind::vanderpol;
  ThresholdParams params;
  MpcConfig mpc;
  std::size_t window = 200;
  std::size_t steps = 10000;
  std::uint64_t seed = 0;
  // Project predicted rollout states onto the state space.
  bool rollout_in_state_space = true;
  SurrogateSettings surrogate;
  // Optional pre-fitted warm-start model; copied per episode.
  std::shared_ptr<const SurrogatePair> initial_model;
};

inline double default_beta(EnvKind env) { return env == EnvKind::vanderpol ? 50.0 : 100.0; }

/// Defaults: gamma 0.01, beta 50 (Vanderpol) or 100, M = 2 M_h, eps 1e-3.
inline ThresholdParams default_params(EnvKind env, Method method, double alpha) {
  ThresholdParams p;
  p.alpha = alpha;
  p.beta = default_beta(env);
  p.gamma = 0.01;
  p.big_m = 2.0 * make_spec(env).m_h;
  p.epsilon = 1e-3;
  p.method = method;
  return p;
}

inline EpisodeConfig default_episode(EnvKind env, Method method, double alpha, std::uint64_t seed,
                                     std::size_t steps = 10000) {
  EpisodeConfig c;
  c.env = env;
  c.params = default_params(env, method, alpha);
  c.seed = seed;
  c.steps = steps;
  return c;
}

struct StepRecord {
  std::size_t k = 0;
  double delta = 0.0;   // level used for this step's threshold
  double q_hat = 0.0;   // threshold the previous decision was constrained by
  double score = 0.0;
  int e = 0;
  double cost = 0.0;
  double loss = 0.0;
  double h = 0.0;
  double task_cost = 0.0;
  bool feasible = true;  // whether the decision that led here met the constraint
  bool score_clamped = false;
  bool control_clamped = false;

  int violation() const { return h < 0.0 ? 1 : 0; }
};

struct EpisodeSummary {
  std::size_t steps = 0;
  double v_t = 0.0;
  double j_t = 0.0;
  double j_task_mean = 0.0;
  double sum_e = 0.0;
  double sum_loss = 0.0;
  double delta_first = 0.0;
  double delta_final = 0.0;
  std::size_t score_clamps = 0;
  std::size_t control_clamps = 0;
  std::size_t recoveries = 0;
  std::size_t state_space_exits = 0;
  std::size_t model_events = 0;
};

struct EpisodeTrace {
  EpisodeConfig config;
  std::vector<StepRecord> steps;
  EpisodeSummary summary;
};

/// Recomputes the metric part of the summary from the step records.
inline void summarize(EpisodeTrace& t) {
  auto& s = t.summary;
  s.steps = t.steps.size();
  double v = 0, j = 0, task = 0, e = 0, l = 0;
  for (const auto& r : t.steps) {
    v += r.violation();
    j += r.cost;
    task += r.task_cost;
    e += r.e;
    l += r.loss;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, s.steps));
  s.v_t = s.steps ? v / n : 0.0;
  s.j_t = s.steps ? j / n : 0.0;
  s.j_task_mean = s.steps ? task / n : 0.0;
  s.sum_e = e;
  s.sum_loss = l;
}

// ---------------------------------------------------------------------------
// Episode

inline std::shared_ptr<const SurrogatePair> fit_default_model(EnvKind env, const SurrogateSettings& s) {
  return std::make_shared<const SurrogatePair>(fit_offline(make_spec(env), s.n_offline, s.fit_seed, s));
}

inline EpisodeTrace run_episode(const EpisodeConfig& cfg) {
  cfg.params.validate();
  cfg.mpc.validate();
  const EnvSpec spec = make_spec(cfg.env);
  const ThresholdParams& prm = cfg.params;

  EpisodeTrace trace;
  trace.config = cfg;
  if (cfg.steps == 0) return trace;
  trace.summary.delta_first = prm.alpha;

  SurrogatePair model = cfg.initial_model ? *cfg.initial_model
                                          : *fit_default_model(cfg.env, cfg.surrogate);
  model.set_trigger(cfg.surrogate.trigger_eps);
  EnvState env = env_create(spec, cfg.seed);
  CemPlanner planner(spec.bounds, cfg.mpc, cfg.seed ^ 0xC0FFEE1234ull);
  auto cost = [&spec](const Vec& x, const Vec& u) { return task_cost(spec, x, u); };
  const bool project = cfg.rollout_in_state_space;
  auto domain = [&spec, project](Vec& x) {
    if (project) project_to_state_space(spec, x);
  };

  CalibrationWindow window(cfg.window);
  ThresholdState state = initial_threshold_state(prm);
  ScoreClampCounter clamps;
  trace.steps.reserve(cfg.steps);

  auto threshold_for = [&](const ThresholdState& s) {
    if (prm.method == Method::none) return 0.0;
    return empirical_quantile(window, effective_delta(s, prm), prm);
  };

  // k = 0: calibrate on the bootstrap set, plan, apply.
  double q_hat = threshold_for(state);
  ControlDecision dec = planner.solve(env.x, q_hat, model, cost, domain);
  Vec x_prev = env.x;
  Vec u_prev = spec.bounds.clamp(dec.u_star);
  env_step(env, u_prev);

  for (std::size_t k = 1; k <= cfg.steps; ++k) {
    StepRecord r;
    r.k = k;
    r.delta = state.delta;
    r.q_hat = q_hat;
    r.h = env_h(env);
    const std::size_t clamped_before = clamps.clamped;
    try {
      r.score = nonconformity_score(r.h, dec.predicted_h, prm.big_m, &clamps);
    } catch (const std::exception& ex) {
      throw std::runtime_error("step " + std::to_string(k) + ": " + ex.what());
    }
    r.score_clamped = clamps.clamped != clamped_before;
    r.e = r.score > q_hat ? 1 : 0;
    const LossRecord loss = boosted_loss(r.e, r.h, env_rho(env), prm);
    r.cost = loss.cost;
    r.loss = loss.loss;
    r.task_cost = task_cost(spec, env.x, u_prev);
    r.feasible = dec.feasible;
    r.control_clamped = env.last_control_clamped;
    trace.steps.push_back(r);

    state = update_threshold(state, loss, prm);
    window.push(r.score);
    model.residual_update(x_prev, u_prev, r.h, env.x);
    if (k == cfg.steps) break;

    q_hat = threshold_for(state);
    dec = planner.solve(env.x, q_hat, model, cost, domain);
    if (!dec.feasible) ++trace.summary.recoveries;
    x_prev = env.x;
    u_prev = spec.bounds.clamp(dec.u_star);
    env_step(env, u_prev);
    if (!env.x.allFinite()) throw std::runtime_error("step " + std::to_string(k) + ": state diverged");
  }

  trace.summary.delta_final = state.delta;
  trace.summary.score_clamps = clamps.clamped;
  trace.summary.control_clamps = env.control_clamps;
  trace.summary.state_space_exits = env.state_space_exits;
  trace.summary.model_events = model.events();
  summarize(trace);
  return trace;
}

// ---------------------------------------------------------------------------
// Audits

struct AuditCheck {
  std::string name;
  bool applicable = true;
  bool pass = true;
  double slack = 0.0;
  std::string detail;
};

struct AuditReport {
  std::vector<AuditCheck> checks;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const AuditCheck& c) { return c.pass; });
  }
  const AuditCheck& get(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw std::out_of_range("no audit check named " + name);
  }
};

/// True for the policies whose level follows delta += gamma (alpha - L).
inline bool follows_linear_update(Method m) {
  return m == Method::cost_aware || m == Method::standard_aci;
}

inline double sum_alpha_minus_loss(const EpisodeTrace& t, double alpha) {
  double s = 0.0;
  for (const auto& r : t.steps) s += alpha - r.loss;
  return s;
}

/// Bound checks on a completed trace:
///   lemma1_bounds           every delta_k (and delta_{T+1}) inside the invariant interval
///   lemma2_identity         delta_{T+1} = delta_1 + gamma * sum(alpha - L_k)
///   thm1_frequency          v_k <= e_k <= L_k pointwise (v <= e needs a constraint-respecting decision)
///   corollary1_finite_time  V_T <= alpha + (delta_1 - delta_{T+1}) / (T gamma)
///   thm2_cost               J_T <= alpha/beta + (delta_1 - delta_{T+1}) / (beta T gamma), beta > 0
inline AuditReport audit_bounds(const EpisodeTrace& t, const ThresholdParams& p) {
  AuditReport rep;
  const bool linear = follows_linear_update(p.method);
  auto na = [&](const char* name) {
    AuditCheck c{name, false, true, 0.0, "not applicable to method " + std::string(to_string(p.method))};
    rep.checks.push_back(c);
  };
  if (!linear) {
    for (const char* n : {"lemma1_bounds", "lemma2_identity", "thm1_frequency", "corollary1_finite_time", "thm2_cost"})
      na(n);
    return rep;
  }

  const double T = static_cast<double>(t.steps.size());
  const double d1 = t.summary.delta_first;
  const double dT = t.summary.delta_final;

  {
    const DeltaInterval iv = delta_interval(p);
    double slack = iv.slack(dT);
    for (const auto& r : t.steps) slack = std::min(slack, iv.slack(r.delta));
    rep.checks.push_back({"lemma1_bounds", true, slack >= -kInequalityTol, slack,
                          "interval [" + std::to_string(iv.lo) + ", " + std::to_string(iv.hi) + "]"});
  }
  {
    const double resid = std::abs(dT - d1 - p.gamma * sum_alpha_minus_loss(t, p.alpha));
    rep.checks.push_back({"lemma2_identity", true, resid <= kIdentityTol, resid, "|residual|"});
  }
  {
    double slack = t.steps.empty() ? 0.0 : std::numeric_limits<double>::infinity();
    std::size_t uncovered = 0, uncovered_breaks = 0;
    for (const auto& r : t.steps) {
      const double el = r.loss - r.e;
      if (!r.feasible) {
        ++uncovered;
        if (r.violation() > r.e) ++uncovered_breaks;
        slack = std::min(slack, el);
        continue;
      }
      slack = std::min({slack, static_cast<double>(r.e - r.violation()), el});
    }
    rep.checks.push_back({"thm1_frequency", true, slack >= -kInequalityTol, slack,
                          std::to_string(uncovered) + " steps after recovery (infeasible) decisions, " +
                              std::to_string(uncovered_breaks) + " with v > e"});
  }
  {
    const double bound = T > 0 ? p.alpha + (d1 - dT) / (T * p.gamma) : 0.0;
    const double slack = T > 0 ? bound - t.summary.v_t : 0.0;
    rep.checks.push_back({"corollary1_finite_time", true, slack >= -kInequalityTol, slack,
                          "bound=" + std::to_string(bound)});
  }
  {
    const double beta = p.effective_beta();
    if (beta > 0.0) {
      const double bound = T > 0 ? p.alpha / beta + (d1 - dT) / (beta * T * p.gamma) : 0.0;
      const double slack = T > 0 ? bound - t.summary.j_t : 0.0;
      rep.checks.push_back({"thm2_cost", true, slack >= -kInequalityTol, slack, "bound=" + std::to_string(bound)});
    } else {
      rep.checks.push_back({"thm2_cost", false, true, 0.0, "beta = 0: no cost bound"});
    }
  }
  return rep;
}

struct ConservationResult {
  double alpha_hat = 0.0;
  std::optional<double> c_bar;  // undefined when no miscoverage occurred
  double product = 0.0;
  double residual = 0.0;        // |product - alpha - (delta_1 - delta_{T+1}) / (T gamma)|
};

inline ConservationResult conservation_check(const EpisodeTrace& t, const ThresholdParams& p) {
  ConservationResult r;
  const double T = static_cast<double>(t.steps.size());
  if (T == 0) return r;
  double sum_e = 0.0, sum_ec = 0.0;
  for (const auto& s : t.steps) {
    sum_e += s.e;
    sum_ec += s.e * s.cost;
  }
  r.alpha_hat = sum_e / T;
  if (sum_e > 0.0) {
    r.c_bar = sum_ec / sum_e;
    r.product = r.alpha_hat * (1.0 + p.effective_beta() * *r.c_bar);
  }
  r.residual = std::abs(r.product - p.alpha -
                        (t.summary.delta_first - t.summary.delta_final) / (T * p.gamma));
  return r;
}

struct RegretCurve {
  std::vector<double> regret;    // Regret_{T'} for T' = 1..T
  double max_ratio = 0.0;        // max over T' of Regret_{T'} / sqrt(T')
  double final_regret = 0.0;
  double ogd_bound = 0.0;        // max_{d*} (delta_1 - d*)^2 / (2 gamma) + gamma/2 * sum g^2
};

/// Regret of the level sequence on the linear losses (L_k - alpha) * delta
/// against the best fixed comparator in [0, 1] (attained at 0 or 1).
inline RegretCurve regret_curve(const std::vector<double>& deltas, const std::vector<double>& losses,
                                double alpha, double gamma) {
  RegretCurve c;
  c.regret.reserve(deltas.size());
  double played = 0.0, grad_sum = 0.0, grad_sq = 0.0;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    const double g = losses[k] - alpha;
    played += g * deltas[k];
    grad_sum += g;
    grad_sq += g * g;
    const double reg = played - std::min(0.0, grad_sum);
    c.regret.push_back(reg);
    c.max_ratio = std::max(c.max_ratio, reg / std::sqrt(static_cast<double>(k + 1)));
  }
  c.final_regret = c.regret.empty() ? 0.0 : c.regret.back();
  if (!deltas.empty()) {
    const double d1 = deltas.front();
    const double dist = std::max(d1 * d1, (1.0 - d1) * (1.0 - d1));
    c.ogd_bound = dist / (2.0 * gamma) + 0.5 * gamma * grad_sq;
  }
  return c;
}

inline RegretCurve regret_trace(const EpisodeTrace& t, const ThresholdParams& p) {
  std::vector<double> d, l;
  d.reserve(t.steps.size());
  l.reserve(t.steps.size());
  for (const auto& r : t.steps) {
    d.push_back(r.delta);
    l.push_back(r.loss);
  }
  return regret_curve(d, l, p.alpha, p.gamma);
}

/// Every check: the five bound checks plus conservation and regret.
inline AuditReport audit_all(const EpisodeTrace& t, const ThresholdParams& p) {
  AuditReport rep = audit_bounds(t, p);
  if (!follows_linear_update(p.method)) {
    rep.checks.push_back({"prop2_conservation", false, true, 0.0, "not applicable"});
    rep.checks.push_back({"prop3_regret", false, true, 0.0, "not applicable"});
    return rep;
  }
  const ConservationResult cons = conservation_check(t, p);
  rep.checks.push_back({"prop2_conservation", true, cons.residual <= kIdentityTol, cons.residual,
                        cons.c_bar ? "c_bar=" + std::to_string(*cons.c_bar) : "c_bar undefined (no miscoverage)"});
  const RegretCurve rc = regret_trace(t, p);
  const double tol = kIdentityTol * std::max(1.0, std::abs(rc.ogd_bound));
  rep.checks.push_back({"prop3_regret", true, rc.final_regret <= rc.ogd_bound + tol, rc.ogd_bound - rc.final_regret,
                        "max Regret/sqrt(T)=" + std::to_string(rc.max_ratio)});
  return rep;
}

// ---------------------------------------------------------------------------
// Running curves and aggregation

struct RunningCurves {
  std::vector<double> task;  // running mean of task cost
  std::vector<double> cost;  // running J
  std::vector<double> freq;  // running V
};

inline RunningCurves running_curves(const EpisodeTrace& t) {
  RunningCurves c;
  const std::size_t n = t.steps.size();
  c.task.reserve(n);
  c.cost.reserve(n);
  c.freq.reserve(n);
  double a = 0, b = 0, v = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a += t.steps[i].task_cost;
    b += t.steps[i].cost;
    v += t.steps[i].violation();
    const double k = static_cast<double>(i + 1);
    c.task.push_back(a / k);
    c.cost.push_back(b / k);
    c.freq.push_back(v / k);
  }
  return c;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return r;
}

struct AggregateRow {
  Method method = Method::cost_aware;
  std::size_t n = 0;
  MeanStd j_task;
  MeanStd j;
  MeanStd v;
};

/// Per-method seed statistics. Traces must share environment, alpha, gamma,
/// window, horizon and length; within one method beta must also match.
inline std::vector<AggregateRow> aggregate_seeds(const std::vector<const EpisodeTrace*>& traces) {
  if (traces.empty()) throw std::invalid_argument("aggregate_seeds: no traces");
  const EpisodeConfig& ref = traces.front()->config;
  std::map<Method, std::vector<const EpisodeTrace*>> by_method;
  for (const EpisodeTrace* t : traces) {
    const EpisodeConfig& c = t->config;
    if (c.env != ref.env || c.params.alpha != ref.params.alpha || c.params.gamma != ref.params.gamma ||
        c.window != ref.window || c.steps != ref.steps || c.mpc.horizon != ref.mpc.horizon) {
      throw std::invalid_argument("aggregate_seeds: traces differ in more than seed and method");
    }
    auto& bucket = by_method[c.params.method];
    if (!bucket.empty() && bucket.front()->config.params.beta != c.params.beta) {
      throw std::invalid_argument("aggregate_seeds: beta differs within method " +
                                  std::string(to_string(c.params.method)));
    }
    bucket.push_back(t);
  }
  std::vector<AggregateRow> rows;
  for (const auto& [method, list] : by_method) {
    std::vector<double> a, b, v;
    for (const EpisodeTrace* t : list) {
      a.push_back(t->summary.j_task_mean);
      b.push_back(t->summary.j_t);
      v.push_back(t->summary.v_t);
    }
    rows.push_back({method, list.size(), mean_std(a), mean_std(b), mean_std(v)});
  }
  return rows;
}

inline std::vector<AggregateRow> aggregate_seeds(const std::vector<EpisodeTrace>& traces) {
  std::vector<const EpisodeTrace*> ptrs;
  for (const auto& t : traces) ptrs.push_back(&t);
  return aggregate_seeds(ptrs);
}

// ---------------------------------------------------------------------------
// Batch execution

/// Worker count: CG_THREADS if set, else hardware concurrency.
inline unsigned episode_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CG_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = static_cast<unsigned>(v);
  }
  return n;
}

/// Runs independent episodes, sharing one offline fit per (env, fit settings).
inline std::vector<EpisodeTrace> run_episodes(std::vector<EpisodeConfig> configs, unsigned threads = 0) {
  std::map<std::tuple<EnvKind, std::uint64_t, std::size_t>, std::shared_ptr<const SurrogatePair>> cache;
  for (auto& c : configs) {
    if (c.initial_model || c.steps == 0) continue;
    auto key = std::make_tuple(c.env, c.surrogate.fit_seed, c.surrogate.n_offline);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, fit_default_model(c.env, c.surrogate)).first;
    c.initial_model = it->second;
  }
  std::vector<EpisodeTrace> out(configs.size());
  if (threads == 0) threads = episode_threads();
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, configs.size())));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(configs.size());
  auto worker = [&]() {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        out[i] = run_episode(configs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace cg
