#pragma once

// Receding-horizon control under the calibrated constraint
//   h_hat(x_k, u_k) >= q_hat,
// solved by a cross-entropy search over control sequences rolled through the
// surrogate dynamics. When no sampled candidate meets the constraint the
// planner falls back to the input that maximizes h_hat.
//
// Model concept: predict_h(x, u) -> double, predict_f(x, u) -> Vec,
// state_dim(), control_dim().

#include "cg/env.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace cg {

struct MpcConfig {
  int horizon = 20;
  int n_candidates = 256;
  int n_elites = 24;
  int n_iterations = 4;
  double init_std_frac = 0.3;   // initial std as a fraction of (hi - lo)
  double min_std_frac = 1e-3;
  bool warm_start = true;
  // Local search on the first input of the best plan, tail held fixed.
  int n_polish = 64;
  double polish_std_frac = 0.1;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (n_candidates < 2) throw std::invalid_argument("n_candidates must be >= 2");
    if (n_elites < 1 || n_elites >= n_candidates) {
      throw std::invalid_argument("n_elites must satisfy 1 <= n_elites < n_candidates");
    }
    if (n_iterations < 1) throw std::invalid_argument("n_iterations must be >= 1");
    if (!(init_std_frac > 0.0)) throw std::invalid_argument("init_std_frac must be > 0");
    if (n_polish < 0) throw std::invalid_argument("n_polish must be >= 0");
    if (n_polish > 0 && !(polish_std_frac > 0.0)) throw std::invalid_argument("polish_std_frac must be > 0");
  }
};

struct ControlDecision {
  Vec u_star;
  bool feasible = false;
  double predicted_h = 0.0;
  double objective = std::numeric_limits<double>::infinity();
};

/// control_dim x horizon; column t is the input applied at step t.
using ControlSeq = Eigen::MatrixXd;

namespace detail {

template <class Model>
concept RawPredictor = requires(const Model& m, const double* p, double* o) { m.predict_f(p, p, o); };

/// One f_hat step written into `next` (already sized to the state dimension).
template <class Model>
void step_model(const Model& model, const Vec& x, const Vec& u, Vec& next) {
  if constexpr (RawPredictor<Model>) {
    model.predict_f(x.data(), u.data(), next.data());
  } else {
    next = model.predict_f(x, u);
  }
}

}  // namespace detail

/// Identity map for predicted states (no domain restriction).
struct NoProjection {
  void operator()(Vec&) const {}
};

/// Rolls f_hat forward from x and sums cost(x_{i+1}, u_i). Each predicted
/// state passes through `project` first. Non-finite predictions give an
/// infinite objective.
template <class Model, class Cost, class Project = NoProjection>
double rollout_surrogate(const Model& model, const Vec& x, const ControlSeq& u_seq, Cost&& cost,
                         std::vector<Vec>* states = nullptr, Project&& project = {}) {
  Vec cur = x, next(x.size());
  Vec u(u_seq.rows());
  double total = 0.0;
  if (states) {
    states->clear();
    states->push_back(cur);
  }
  for (int t = 0; t < u_seq.cols(); ++t) {
    u = u_seq.col(t);
    detail::step_model(model, cur, u, next);
    if (!next.allFinite()) return std::numeric_limits<double>::infinity();
    project(next);
    std::swap(cur, next);
    total += cost(cur, u);
    if (states) states->push_back(cur);
  }
  return std::isfinite(total) ? total : std::numeric_limits<double>::infinity();
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Input maximizing h_hat(x, .) over sampled candidates (single-step
/// cross-entropy search). Candidate 0 is the box center; ties keep the
/// earliest candidate.
template <class Model, class Rng>
Vec recovery_action(const Vec& x, const Model& model, const ControlBox& box, const MpcConfig& cfg,
                    Rng& rng) {
  const int m = box.dim();
  Vec mean = box.center();
  Vec stddev = cfg.init_std_frac * (box.hi - box.lo);
  const Vec min_std = cfg.min_std_frac * (box.hi - box.lo);
  std::normal_distribution<double> normal(0.0, 1.0);

  Vec best = mean;
  double best_h = -std::numeric_limits<double>::infinity();
  std::vector<Vec> cand(cfg.n_candidates, Vec(m));
  std::vector<double> score(cfg.n_candidates);
  std::vector<int> order(cfg.n_candidates);

  for (int it = 0; it < cfg.n_iterations; ++it) {
    for (int c = 0; c < cfg.n_candidates; ++c) {
      if (c == 0) {
        cand[c] = mean;
      } else {
        for (int j = 0; j < m; ++j) cand[c][j] = mean[j] + stddev[j] * normal(rng);
      }
      cand[c] = box.clamp(cand[c]);
      const double h = model.predict_h(x, cand[c]);
      score[c] = std::isfinite(h) ? h : -std::numeric_limits<double>::infinity();
      if (score[c] > best_h) {
        best_h = score[c];
        best = cand[c];
      }
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] > score[b]; });
    Vec sum = Vec::Zero(m), sq = Vec::Zero(m);
    for (int e = 0; e < cfg.n_elites; ++e) sum += cand[order[e]];
    mean = sum / cfg.n_elites;
    for (int e = 0; e < cfg.n_elites; ++e) sq += (cand[order[e]] - mean).cwiseAbs2();
    stddev = (sq / cfg.n_elites).cwiseSqrt().cwiseMax(min_std);
  }
  return best;
}

/// Cross-entropy planner with receding-horizon warm start. Holds its own RNG.
class CemPlanner {
 public:
  CemPlanner(ControlBox box, MpcConfig cfg, std::uint64_t seed)
      : box_(std::move(box)), cfg_(cfg), rng_(detail::splitmix64(seed)) {
    cfg_.validate();
    reset();
  }

  void reset() {
    mean_ = ControlSeq(box_.dim(), cfg_.horizon);
    for (int t = 0; t < cfg_.horizon; ++t) mean_.col(t) = box_.center();
  }

  const MpcConfig& config() const { return cfg_; }
  const ControlBox& box() const { return box_; }

  /// h_hat of every first-iteration candidate's first input from the last
  /// solve, in candidate order (diagnostics and tests).
  const std::vector<double>& first_iteration_h() const { return first_h_; }

  /// `project` maps each predicted state back into the model's domain.
  template <class Model, class Cost, class Project = NoProjection>
  ControlDecision solve(const Vec& x, double q_hat, const Model& model, Cost&& cost, Project&& project = {}) {
    const int m = box_.dim();
    const int n = cfg_.horizon;
    const int nc = cfg_.n_candidates;
    const int len = m * n;  // one candidate, column-major like ControlSeq
    std::normal_distribution<double> normal(0.0, 1.0);

    ControlSeq mean = cfg_.warm_start ? mean_ : centered();
    ControlSeq stddev(m, n);
    for (int t = 0; t < n; ++t) stddev.col(t) = cfg_.init_std_frac * (box_.hi - box_.lo);
    ControlSeq min_std(m, n);
    for (int t = 0; t < n; ++t) min_std.col(t) = cfg_.min_std_frac * (box_.hi - box_.lo);

    cand_.resize(static_cast<std::size_t>(nc) * len);
    obj_.resize(nc);
    h0_.resize(nc);
    feas_.resize(nc);
    order_.resize(nc);

    ControlSeq best_seq = mean;
    double best_obj = std::numeric_limits<double>::infinity();
    double best_h = 0.0;
    bool found = false;
    Vec u(m);
    Vec buf[2] = {Vec(x.size()), Vec(x.size())};
    auto first_h = [&](const double* s) {
      for (int j = 0; j < m; ++j) u[j] = s[j];
      return model.predict_h(x, u);
    };
    auto rollout = [&](const double* s) {
      double total = 0.0;
      buf[0] = x;
      int a = 0;
      for (int t = 0; t < n; ++t) {
        for (int j = 0; j < m; ++j) u[j] = s[t * m + j];
        detail::step_model(model, buf[a], u, buf[1 - a]);
        a = 1 - a;
        if (!buf[a].allFinite()) return std::numeric_limits<double>::infinity();
        project(buf[a]);
        total += cost(buf[a], u);
      }
      return std::isfinite(total) ? total : std::numeric_limits<double>::infinity();
    };

    for (int it = 0; it < cfg_.n_iterations; ++it) {
      for (int c = 0; c < nc; ++c) {
        double* s = cand_.data() + static_cast<std::ptrdiff_t>(c) * len;
        for (int i = 0; i < len; ++i) {
          const double v = c == 0 ? mean.data()[i] : mean.data()[i] + stddev.data()[i] * normal(rng_);
          const int j = i % m;
          s[i] = std::min(std::max(v, box_.lo[j]), box_.hi[j]);
        }
        const double h = first_h(s);
        h0_[c] = h;
        feas_[c] = std::isfinite(h) && h >= q_hat;
        obj_[c] = rollout(s);
        if (!std::isfinite(obj_[c])) feas_[c] = 0;
        if (feas_[c] && obj_[c] < best_obj) {
          best_obj = obj_[c];
          best_seq = Eigen::Map<const ControlSeq>(s, m, n);
          best_h = h;
          found = true;
        }
      }
      if (it == 0) first_h_ = h0_;

      // Feasible candidates first by objective, then infeasible ones by how
      // far they miss the constraint.
      std::iota(order_.begin(), order_.end(), 0);
      std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) {
        if (feas_[a] != feas_[b]) return feas_[a] > feas_[b];
        if (feas_[a]) return obj_[a] < obj_[b];
        const double ma = std::isfinite(h0_[a]) ? q_hat - h0_[a] : std::numeric_limits<double>::infinity();
        const double mb = std::isfinite(h0_[b]) ? q_hat - h0_[b] : std::numeric_limits<double>::infinity();
        return ma < mb;
      });
      const int ne = cfg_.n_elites;
      Eigen::Map<Eigen::VectorXd> mv(mean.data(), len), sv(stddev.data(), len);
      mv.setZero();
      for (int e = 0; e < ne; ++e) mv += elite(order_[e], len);
      mv /= ne;
      sv.setZero();
      for (int e = 0; e < ne; ++e) sv += (elite(order_[e], len) - mv).cwiseAbs2();
      stddev = (stddev / ne).cwiseSqrt().cwiseMax(min_std);
    }

    if (found && cfg_.n_polish > 0) {
      std::vector<double> trial(best_seq.data(), best_seq.data() + len);
      const int rounds = 2;
      for (int r = 0; r < rounds; ++r) {
        const double frac = cfg_.polish_std_frac * (r == 0 ? 1.0 : 0.1);
        for (int i = 0; i < cfg_.n_polish / rounds; ++i) {
          for (int j = 0; j < m; ++j) {
            const double v = best_seq(j, 0) + frac * (box_.hi[j] - box_.lo[j]) * normal(rng_);
            trial[j] = std::min(std::max(v, box_.lo[j]), box_.hi[j]);
          }
          const double h = first_h(trial.data());
          if (!(std::isfinite(h) && h >= q_hat)) continue;
          const double o = rollout(trial.data());
          if (o < best_obj) {
            best_obj = o;
            best_h = h;
            for (int j = 0; j < m; ++j) best_seq(j, 0) = trial[j];
          }
        }
      }
    }

    ControlDecision d;
    if (found) {
      d.u_star = best_seq.col(0);
      d.feasible = true;
      d.predicted_h = best_h;
      d.objective = best_obj;
      mean_ = shifted(best_seq);
    } else {
      d.u_star = recovery_action(x, model, box_, cfg_, rng_);
      d.feasible = false;
      d.predicted_h = model.predict_h(x, d.u_star);
      mean_ = shifted(mean);
    }
    return d;
  }

 private:
  ControlSeq centered() const {
    ControlSeq s(box_.dim(), cfg_.horizon);
    for (int t = 0; t < cfg_.horizon; ++t) s.col(t) = box_.center();
    return s;
  }

  static ControlSeq shifted(const ControlSeq& s) {
    ControlSeq out(s.rows(), s.cols());
    if (s.cols() > 1) out.leftCols(s.cols() - 1) = s.rightCols(s.cols() - 1);
    out.col(s.cols() - 1) = s.col(s.cols() - 1);
    return out;
  }

  Eigen::Map<const Eigen::VectorXd> elite(int c, int len) const {
    return {cand_.data() + static_cast<std::ptrdiff_t>(c) * len, len};
  }

  ControlBox box_;
  MpcConfig cfg_;
  std::mt19937_64 rng_;
  ControlSeq mean_;
  std::vector<double> first_h_;
  // Scratch reused across solves.
  std::vector<double> cand_, obj_, h0_;
  std::vector<char> feas_;
  std::vector<int> order_;
};

/// One-shot solve without warm start.
template <class Model, class Cost>
ControlDecision synthesize_control(const Vec& x, double q_hat, const Model& model, const ControlBox& box,
                                   Cost&& cost, const MpcConfig& cfg, std::uint64_t seed) {
  MpcConfig c = cfg;
  c.warm_start = false;
  CemPlanner planner(box, c, seed);
  return planner.solve(x, q_hat, model, std::forward<Cost>(cost));
}

}  // namespace cg
