#pragma once

// Surrogate assurance predictor h_hat(x, u) ~ h(f(x, u)) and surrogate
// dynamics f_hat(x, u). Nominal weights come from an offline ridge fit on the
// benchmark dictionaries; a small residual model on the affine lift is
// corrected online by recursive least squares, only when the one-step error
// exceeds a trigger.

#include "cg/env.hpp"
#include "cg/features.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <vector>

namespace cg {

struct SurrogateSettings {
  double trigger_eps = 0.01;
  double forgetting = 0.995;
  double rls_ridge = 1e-4;
  bool correct_f = true;
  std::size_t n_offline = 5000;
  std::uint64_t fit_seed = 0;
};

/// Recursive least squares with exponential forgetting. The covariance trace
/// is capped at its initial value so unexcited directions cannot wind up.
class Rls {
 public:
  Rls() = default;
  Rls(int dim, double forgetting, double ridge)
      : w_(Eigen::VectorXd::Zero(dim)),
        p_(Eigen::MatrixXd::Identity(dim, dim) / ridge),
        lambda_(forgetting),
        trace_cap_(dim / ridge) {
    if (!(forgetting > 0.0 && forgetting <= 1.0)) throw std::invalid_argument("forgetting must be in (0,1]");
    if (!(ridge > 0.0)) throw std::invalid_argument("rls ridge must be > 0");
  }

  double predict(const double* phi) const {
    return Eigen::Map<const Eigen::VectorXd>(phi, w_.size()).dot(w_);
  }

  /// `error` is target minus the full current prediction.
  void update(const double* phi_ptr, double error) {
    const Eigen::Map<const Eigen::VectorXd> phi(phi_ptr, w_.size());
    const Eigen::VectorXd pphi = p_ * phi;
    const double denom = lambda_ + phi.dot(pphi);
    const Eigen::VectorXd gain = pphi / denom;
    w_ += gain * error;
    p_ = (p_ - gain * pphi.transpose()) / lambda_;
    p_ = 0.5 * (p_ + p_.transpose()).eval();
    const double tr = p_.trace();
    if (tr > trace_cap_) p_ *= trace_cap_ / tr;
    ++updates_;
  }

  const Eigen::VectorXd& weights() const { return w_; }
  const Eigen::MatrixXd& covariance() const { return p_; }
  std::size_t updates() const { return updates_; }
  int dim() const { return static_cast<int>(w_.size()); }

 private:
  Eigen::VectorXd w_;
  Eigen::MatrixXd p_;
  double lambda_ = 1.0;
  double trace_cap_ = 0.0;
  std::size_t updates_ = 0;
};

class SurrogatePair {
 public:
  SurrogatePair() = default;

  /// Zero-weight model over the given dictionaries. The residual model uses
  /// the affine dictionary `f_map`.
  SurrogatePair(FeatureMap h_map, FeatureMap f_map, const SurrogateSettings& settings,
                Vec state_scale = {})
      // f_map must be affine: the residual model and f_hat are linear in it.
      : h_map_(std::move(h_map)),
        f_map_(std::move(f_map)),
        w_h_(Eigen::VectorXd::Zero(h_map_.size())),
        w_f_(Eigen::MatrixXd::Zero(f_map_.size(), f_map_.state_dim())),
        settings_(settings),
        state_scale_(state_scale.size() ? state_scale : Vec::Ones(f_map_.state_dim())) {
    h_res_ = Rls(f_map_.size(), settings.forgetting, settings.rls_ridge);
    f_res_.assign(f_map_.state_dim(), Rls(f_map_.size(), settings.forgetting, settings.rls_ridge));
    refresh_f();
  }

  int state_dim() const { return f_map_.state_dim(); }
  int control_dim() const { return f_map_.control_dim(); }

  double predict_h(const Vec& x, const Vec& u) const {
    double psi[kMaxFeatures];
    double chi[kMaxFeatures];
    h_map_.eval(x, u, psi);
    f_map_.eval(x, u, chi);
    const double nominal = Eigen::Map<const Eigen::VectorXd>(psi, w_h_.size()).dot(w_h_);
    return nominal + h_res_.predict(chi);
  }

  Vec predict_f(const Vec& x, const Vec& u) const {
    Vec out(state_dim());
    predict_f(x.data(), u.data(), out.data());
    return out;
  }

  /// Raw form for the planner's inner loop; out holds state_dim() entries.
  void predict_f(const double* x, const double* u, double* out) const {
    double chi[kMaxFeatures];
    f_map_.eval(x, u, chi);
    const int nf = f_map_.size();
    const int n = state_dim();
    for (int i = 0; i < n; ++i) {
      const double* col = w_eff_.data() + static_cast<std::ptrdiff_t>(i) * nf;
      double acc = 0.0;
      for (int j = 0; j < nf; ++j) acc += col[j] * chi[j];
      out[i] = acc;
    }
  }

  /// Event-triggered residual correction from one observed transition.
  /// Returns true if any correction fired.
  bool residual_update(const Vec& x_prev, const Vec& u_prev, double h_observed, const Vec& x_observed) {
    double chi[kMaxFeatures];
    f_map_.eval(x_prev, u_prev, chi);
    bool fired = false;
    const double h_err = h_observed - predict_h(x_prev, u_prev);
    if (std::abs(h_err) > settings_.trigger_eps) {
      h_res_.update(chi, h_err);
      ++h_events_;
      fired = true;
    }
    if (settings_.correct_f) {
      const Vec f_pred = predict_f(x_prev, u_prev);
      bool any = false;
      for (int i = 0; i < state_dim(); ++i) {
        const double err = x_observed[i] - f_pred[i];
        // Trigger on the error normalized by the coordinate's reference scale.
        if (std::abs(err) / state_scale_[i] > settings_.trigger_eps) {
          f_res_[i].update(chi, err);
          ++f_events_;
          any = true;
        }
      }
      if (any) refresh_f();
      fired = fired || any;
    }
    return fired;
  }

  void set_nominal(Eigen::VectorXd w_h, Eigen::MatrixXd w_f) {
    if (w_h.size() != h_map_.size() || w_f.rows() != f_map_.size() || w_f.cols() != state_dim()) {
      throw std::invalid_argument("set_nominal: weight shapes do not match the dictionaries");
    }
    w_h_ = std::move(w_h);
    w_f_ = std::move(w_f);
    refresh_f();
  }

  const Eigen::VectorXd& w_h() const { return w_h_; }
  const Eigen::MatrixXd& w_f() const { return w_f_; }
  const FeatureMap& h_map() const { return h_map_; }
  const FeatureMap& f_map() const { return f_map_; }
  const Rls& h_residual() const { return h_res_; }
  const std::vector<Rls>& f_residual() const { return f_res_; }
  const SurrogateSettings& settings() const { return settings_; }
  void set_trigger(double eps) { settings_.trigger_eps = eps; }

  /// Number of triggered residual updates so far (h and f separately).
  std::size_t h_events() const { return h_events_; }
  std::size_t f_events() const { return f_events_; }
  std::size_t events() const { return h_events_ + f_events_; }

  /// Plain-text weight listing, for debugging only.
  void dump(std::ostream& os) const {
    os.precision(17);
    os << "h_nominal " << w_h_.size() << "\n";
    for (int i = 0; i < w_h_.size(); ++i) os << w_h_[i] << "\n";
    os << "h_residual " << h_res_.dim() << "\n";
    for (int i = 0; i < h_res_.dim(); ++i) os << h_res_.weights()[i] << "\n";
    os << "f_effective " << w_eff_.rows() << " " << w_eff_.cols() << "\n";
    for (int r = 0; r < w_eff_.rows(); ++r) {
      for (int c = 0; c < w_eff_.cols(); ++c) os << (c ? " " : "") << w_eff_(r, c);
      os << "\n";
    }
    os << "events " << h_events_ << " " << f_events_ << "\n";
  }

 private:
  void refresh_f() {
    w_eff_ = w_f_;
    for (int i = 0; i < static_cast<int>(f_res_.size()); ++i) w_eff_.col(i) += f_res_[i].weights();
  }

  FeatureMap h_map_;
  FeatureMap f_map_;
  Eigen::VectorXd w_h_;
  Eigen::MatrixXd w_f_;
  Eigen::MatrixXd w_eff_;
  Rls h_res_;
  std::vector<Rls> f_res_;
  SurrogateSettings settings_;
  Vec state_scale_;
  std::size_t h_events_ = 0;
  std::size_t f_events_ = 0;
};

// ---------------------------------------------------------------------------
// Offline fit

struct FitReport {
  double rmse_h = 0.0;
  double rmse_f = 0.0;
  double ridge_used = 0.0;
};

/// Ridge least squares X = argmin |A X - B|^2 + ridge |X|^2. The ridge is
/// relative to the mean diagonal of A^T A and grows until the factorization
/// is positive definite.
inline Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                   double rel_ridge = 1e-12, double* used = nullptr) {
  const Eigen::MatrixXd gram = a.transpose() * a;
  const Eigen::MatrixXd rhs = a.transpose() * b;
  const double scale = std::max(gram.diagonal().mean(), std::numeric_limits<double>::min());
  for (double r = rel_ridge; r < 1e6; r *= 100.0) {
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += r * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd x = llt.solve(rhs);
      if (x.allFinite()) {
        if (used) *used = r * scale;
        return x;
      }
    }
  }
  throw std::runtime_error("ridge_solve: no stable regularization found");
}

/// Fits nominal weights on (x, u) samples against the supplied truth
/// functions for next-state and next-h. Returns the training RMSE.
template <class Truth>
FitReport fit_weights(SurrogatePair& model, const std::vector<Vec>& xs, const std::vector<Vec>& us,
                      Truth&& truth) {
  const int d_h = model.h_map().size();
  const int d_f = model.f_map().size();
  const int n = static_cast<int>(xs.size());
  if (n < std::max(d_h, d_f)) {
    throw std::invalid_argument("fit: need at least " + std::to_string(std::max(d_h, d_f)) +
                                " samples, got " + std::to_string(n));
  }
  const int sd = model.state_dim();
  Eigen::MatrixXd ah(n, d_h), af(n, d_f), bh(n, 1), bf(n, sd);
  std::vector<double> buf(kMaxFeatures);
  for (int r = 0; r < n; ++r) {
    model.h_map().eval(xs[r], us[r], buf.data());
    for (int j = 0; j < d_h; ++j) ah(r, j) = buf[j];
    model.f_map().eval(xs[r], us[r], buf.data());
    for (int j = 0; j < d_f; ++j) af(r, j) = buf[j];
    const Vec next = truth(xs[r], us[r]);
    bf.row(r) = next.transpose();
    bh(r, 0) = truth.h(next);
  }
  FitReport rep;
  Eigen::MatrixXd wh = ridge_solve(ah, bh, 1e-12, &rep.ridge_used);
  Eigen::MatrixXd wf = ridge_solve(af, bf);
  rep.rmse_h = std::sqrt((ah * wh - bh).squaredNorm() / n);
  rep.rmse_f = std::sqrt((af * wf - bf).squaredNorm() / (static_cast<double>(n) * sd));
  model.set_nominal(wh.col(0), wf);
  return rep;
}

/// Rejection sampler over the admissible set times the control box.
template <class Rng>
void sample_admissible(const EnvSpec& spec, Rng& rng, Vec& x, Vec& u) {
  Vec lo(spec.state_dim), hi(spec.state_dim);
  switch (spec.kind) {
    case EnvKind::vanderpol: lo << -1, -1; hi << 1, 1; break;
    case EnvKind::pendulum:
      lo << -6.0, -1.5 * std::numbers::pi;
      hi << 6.0, 1.5 * std::numbers::pi;
      break;
    case EnvKind::mountaincar: lo << -0.05, -1.0; hi << 0.05, 0.4; break;
    case EnvKind::lorenz: lo = Vec::Constant(6, -1.0); hi = Vec::Constant(6, 1.0); break;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  x.resize(spec.state_dim);
  do {
    for (int i = 0; i < spec.state_dim; ++i) x[i] = lo[i] + (hi[i] - lo[i]) * unit(rng);
  } while (env_h(spec.kind, x) < 0.0);
  u.resize(spec.control_dim);
  for (int i = 0; i < spec.control_dim; ++i) {
    u[i] = spec.bounds.lo[i] + (spec.bounds.hi[i] - spec.bounds.lo[i]) * unit(rng);
  }
}

/// Nominal plant (zero parameter variations) as a fitting target.
struct NominalPlant {
  EnvKind kind;
  Vec operator()(const Vec& x, const Vec& u) const { return dynamics(kind, x, u, EnvParams{}); }
  double h(const Vec& next) const { return env_h(kind, next); }
};

inline SurrogatePair make_surrogate(const EnvSpec& spec, const SurrogateSettings& settings) {
  return SurrogatePair(h_feature_map(spec), f_feature_map(spec), settings, spec.state_scale);
}

/// Offline warm start on nominal data drawn uniformly from the admissible
/// set times the control box.
inline SurrogatePair fit_offline(const EnvSpec& spec, std::size_t n_samples, std::uint64_t seed,
                                 const SurrogateSettings& settings = {}, FitReport* report = nullptr) {
  SurrogatePair model = make_surrogate(spec, settings);
  const std::size_t d = static_cast<std::size_t>(std::max(model.h_map().size(), model.f_map().size()));
  if (n_samples < d) {
    throw std::invalid_argument("fit_offline: n_samples=" + std::to_string(n_samples) +
                                " is below the dictionary size " + std::to_string(d));
  }
  std::mt19937_64 rng(seed);
  std::vector<Vec> xs(n_samples), us(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) sample_admissible(spec, rng, xs[i], us[i]);
  FitReport rep = fit_weights(model, xs, us, NominalPlant{spec.kind});
  if (report) *report = rep;
  return model;
}

}  // namespace cg
