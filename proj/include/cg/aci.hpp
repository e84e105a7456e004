#pragma once

// Conformal calibration layer: nonconformity scores, the empirical quantile
// with its out-of-range branches, the severity-boosted loss and the three
// threshold-update policies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cg {

enum class Method { none, standard_aci, conformal_pid, cost_aware };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::standard_aci: return "standard_aci";
    case Method::conformal_pid: return "conformal_pid";
    case Method::cost_aware: return "cost_aware";
  }
  return "?";
}

/// Short label used in plot legends and directory names.
inline std::string_view short_label(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::standard_aci: return "aci";
    case Method::conformal_pid: return "pid";
    case Method::cost_aware: return "ours";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "none" || s == "no_aci") return Method::none;
  if (s == "standard_aci" || s == "aci") return Method::standard_aci;
  if (s == "conformal_pid" || s == "pid") return Method::conformal_pid;
  if (s == "cost_aware" || s == "ours") return Method::cost_aware;
  throw std::invalid_argument("unknown method '" + std::string(s) +
                              "' (expected none, standard_aci, conformal_pid, cost_aware)");
}

struct ThresholdParams {
  double alpha = 0.1;
  double beta = 100.0;
  double gamma = 0.01;
  double big_m = 2.0;
  double epsilon = 1e-3;
  Method method = Method::cost_aware;

  void validate() const {
    auto fail = [](const char* what) { throw std::invalid_argument(what); };
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0,1)");
    if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be finite and >= 0");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) fail("gamma must be finite and > 0");
    if (!(big_m > 0.0) || !std::isfinite(big_m)) fail("big_m must be finite and > 0");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail("epsilon must be finite and > 0");
  }

  /// Severity weight actually applied to the loss. Standard ACI ignores cost.
  double effective_beta() const { return method == Method::standard_aci ? 0.0 : beta; }
  double max_loss() const { return 1.0 + effective_beta(); }

  // Gains of the P+I baseline.
  double pid_proportional_gain() const { return gamma; }
  double pid_integral_gain() const { return 0.1 * gamma; }
};

/// Interval that keeps the adaptive level bounded when started inside it.
struct DeltaInterval {
  double lo;
  double hi;
  bool contains(double d) const { return d >= lo && d <= hi; }
  double slack(double d) const { return std::min(d - lo, hi - d); }
};

inline DeltaInterval delta_interval(const ThresholdParams& p) {
  return {-p.gamma * (p.max_loss() - p.alpha), 1.0 + p.gamma * p.alpha};
}

struct ThresholdState {
  double delta = 0.0;
  double pid_integral = 0.0;
  std::size_t step = 0;
};

/// Starting state: delta_1 = alpha.
inline ThresholdState initial_threshold_state(const ThresholdParams& p) {
  return ThresholdState{p.alpha, 0.0, 0};
}

/// Level handed to the quantile. Only the PID baseline shifts it.
inline double effective_delta(const ThresholdState& s, const ThresholdParams& p) {
  if (p.method != Method::conformal_pid) return s.delta;
  const double gi = p.pid_integral_gain();
  return s.delta - gi * std::tanh(s.pid_integral * gi);
}

// ---------------------------------------------------------------------------
// Scores

/// Counts how often the bounded-score assumption had to be enforced.
struct ScoreClampCounter {
  std::size_t clamped = 0;
  std::size_t total = 0;
};

/// |h_observed - h_predicted| clamped to [0, M].
inline double nonconformity_score(double h_observed, double h_predicted, double big_m,
                                  ScoreClampCounter* counter = nullptr) {
  if (!std::isfinite(h_observed) || !std::isfinite(h_predicted)) {
    throw std::invalid_argument("nonconformity_score: non-finite input (observed=" +
                                std::to_string(h_observed) +
                                ", predicted=" + std::to_string(h_predicted) + ")");
  }
  double s = std::abs(h_observed - h_predicted);
  if (counter) ++counter->total;
  if (s > big_m) {
    s = big_m;
    if (counter) ++counter->clamped;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Calibration window

class CalibrationWindow {
 public:
  explicit CalibrationWindow(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("calibration window capacity must be >= 1");
  }

  void push(double s) {
    if (scores_.size() == capacity_) scores_.pop_front();
    scores_.push_back(s);
  }

  std::size_t size() const { return scores_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return scores_.empty(); }
  const std::deque<double>& scores() const { return scores_; }

 private:
  std::size_t capacity_;
  std::deque<double> scores_;
};

/// FIFO push that checks the score range.
inline void push_score(CalibrationWindow& w, double s, double big_m) {
  if (!(s >= 0.0 && s <= big_m)) {
    throw std::invalid_argument("push_score: score " + std::to_string(s) + " outside [0, M]");
  }
  w.push(s);
}

/// Smallest value c among `values` with fraction(values <= c) >= 1 - delta.
/// Expects 0 <= delta <= 1 and a non-empty input.
inline double quantile_of(std::vector<double> values, double delta) {
  std::sort(values.begin(), values.end());
  // Mass condition count >= (1 - delta) * n, with slack for decimal deltas.
  const double need = (1.0 - delta) * static_cast<double>(values.size()) - 1e-9;
  for (std::size_t i = 0; i < values.size(); ++i) {
    // Count of entries <= values[i] includes all duplicates after i.
    std::size_t j = i;
    while (j + 1 < values.size() && values[j + 1] == values[i]) ++j;
    if (static_cast<double>(j + 1) >= need) return values[i];
    i = j;
  }
  return values.back();
}

/// Empirical (1 - delta)-quantile with the M / -epsilon branches. An empty
/// window falls back to the bootstrap set {-epsilon, M}.
inline double empirical_quantile(const CalibrationWindow& window, double delta,
                                 const ThresholdParams& p) {
  if (delta < 0.0) return p.big_m;
  if (delta > 1.0) return -p.epsilon;
  if (window.empty()) return quantile_of({-p.epsilon, p.big_m}, delta);
  return quantile_of(std::vector<double>(window.scores().begin(), window.scores().end()), delta);
}

// ---------------------------------------------------------------------------
// Loss and update

struct LossRecord {
  int e = 0;
  double cost = 0.0;
  double loss = 0.0;
};

inline LossRecord boosted_loss(int e, double h_value, double rho, const ThresholdParams& p) {
  if (e != 0 && e != 1) throw std::invalid_argument("boosted_loss: e must be 0 or 1");
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("boosted_loss: rho=" + std::to_string(rho) +
                                " outside [0,1] (cost must be normalized)");
  }
  LossRecord r;
  r.e = e;
  r.cost = h_value < 0.0 ? rho : 0.0;
  r.loss = e * (1.0 + p.effective_beta() * r.cost);
  return r;
}

inline ThresholdState update_threshold(ThresholdState s, const LossRecord& l,
                                       const ThresholdParams& p) {
  switch (p.method) {
    case Method::cost_aware:
    case Method::standard_aci:
      // l.loss already carries beta = 0 for standard ACI.
      s.delta += p.gamma * (p.alpha - l.loss);
      break;
    case Method::conformal_pid:
      s.delta += p.pid_proportional_gain() * (p.alpha - l.loss);
      s.pid_integral += l.loss - p.alpha;
      break;
    case Method::none:
      break;
  }
  ++s.step;
  return s;
}

}  // namespace cg
