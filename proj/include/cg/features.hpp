#pragma once

// Basis dictionaries over (x, u). A map first lifts (x, u) to a short vector z
// of normalized physical terms (coordinates, scaled inputs, sin/cos and
// product terms that appear in the plant), then expands z into every monomial
// up to a fixed degree. Entry 0 is always the constant 1.

#include "cg/env.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace cg {

inline constexpr int kMaxLift = 32;
inline constexpr int kMaxFeatures = 512;

class FeatureMap {
 public:
  using LiftFn = std::function<void(const double* x, const double* u, double* z)>;

  FeatureMap() = default;
  FeatureMap(int state_dim, int control_dim, int lift_dim, int degree, LiftFn lift)
      : state_dim_(state_dim), control_dim_(control_dim), lift_dim_(lift_dim), degree_(degree),
        lift_(std::move(lift)) {
    if (lift_dim_ < 1 || lift_dim_ > kMaxLift) throw std::invalid_argument("lift_dim out of range");
    if (degree_ < 1) throw std::invalid_argument("feature degree must be >= 1");
    build_table();
    if (size() > kMaxFeatures) throw std::invalid_argument("feature dictionary too large");
  }

  int size() const { return static_cast<int>(parent_.size()); }
  int lift_dim() const { return lift_dim_; }
  int degree() const { return degree_; }
  int state_dim() const { return state_dim_; }
  int control_dim() const { return control_dim_; }

  void lift(const Vec& x, const Vec& u, double* z) const { lift_(x.data(), u.data(), z); }

  /// Writes size() features into out.
  void eval(const Vec& x, const Vec& u, double* out) const { eval(x.data(), u.data(), out); }

  void eval(const double* x, const double* u, double* out) const {
    double z[kMaxLift];
    lift_(x, u, z);
    eval_lifted(z, out);
  }

  void eval_lifted(const double* z, double* out) const {
    out[0] = 1.0;
    if (degree_ == 1) {
      for (int j = 0; j < lift_dim_; ++j) out[1 + j] = z[j];
      return;
    }
    const int n = size();
    for (int i = 1; i < n; ++i) out[i] = out[parent_[i]] * z[var_[i]];
  }

  /// Exponent of lift variable j in feature i (for diagnostics and bounds).
  int total_degree(int i) const { return deg_[i]; }

 private:
  // Graded enumeration: each monomial of degree d is a degree d-1 monomial
  // times a variable with index >= the parent's last variable.
  void build_table() {
    parent_ = {0};
    var_ = {0};
    deg_ = {0};
    std::vector<int> last = {0};
    std::size_t begin = 0, end = 1;
    for (int d = 1; d <= degree_; ++d) {
      for (std::size_t m = begin; m < end; ++m) {
        for (int j = (d == 1 ? 0 : last[m]); j < lift_dim_; ++j) {
          parent_.push_back(static_cast<int>(m));
          var_.push_back(j);
          deg_.push_back(d);
          last.push_back(j);
        }
      }
      begin = end;
      end = parent_.size();
    }
  }

  int state_dim_ = 0;
  int control_dim_ = 0;
  int lift_dim_ = 0;
  int degree_ = 1;
  LiftFn lift_;
  std::vector<int> parent_;
  std::vector<int> var_;
  std::vector<int> deg_;
};

// ---------------------------------------------------------------------------
// Benchmark lifts. The next state of each plant is affine in its lift, so a
// degree-1 map represents the nominal dynamics exactly and a degree-2 (or 4,
// for the quartic constraints) map represents h(f(x, u)) exactly.

inline int lift_dim(EnvKind kind) {
  switch (kind) {
    case EnvKind::vanderpol: return 5;
    case EnvKind::pendulum: return 4;
    case EnvKind::mountaincar: return 4;
    case EnvKind::lorenz: return 24;
  }
  return 0;
}

inline FeatureMap::LiftFn benchmark_lift(EnvKind kind) {
  switch (kind) {
    case EnvKind::vanderpol:
      return [](const double* x, const double* u, double* z) {
        z[0] = x[0];
        z[1] = x[1];
        z[2] = u[0] / 40.0;
        z[3] = u[1] / 40.0;
        z[4] = x[0] * x[0] * x[1];
      };
    case EnvKind::pendulum:
      return [](const double* x, const double* u, double* z) {
        z[0] = x[0] / 6.0;
        z[1] = x[1] / (1.5 * std::numbers::pi);
        z[2] = std::sin(x[1]);
        z[3] = u[0] / 80.0;
      };
    case EnvKind::mountaincar:
      return [](const double* x, const double* u, double* z) {
        z[0] = x[0] / 0.05;
        z[1] = (x[1] + 0.3) / 0.7;
        z[2] = u[0] / 200.0;
        z[3] = std::cos(3.0 * x[1]);
      };
    case EnvKind::lorenz:
      return [](const double* x, const double* u, double* z) {
        for (int i = 0; i < 6; ++i) {
          z[i] = x[i];
          z[6 + i] = u[i] / 100.0;
          // The two bilinear terms driving coordinate i.
          const double c = x[(i + 5) % 6];
          z[12 + 2 * i] = x[(i + 1) % 6] * c;
          z[13 + 2 * i] = x[(i + 4) % 6] * c;
        }
      };
  }
  return {};
}

inline int h_degree(EnvKind kind) {
  switch (kind) {
    case EnvKind::vanderpol: return 2;
    case EnvKind::pendulum: return 4;
    case EnvKind::mountaincar: return 4;
    case EnvKind::lorenz: return 2;
  }
  return 2;
}

inline FeatureMap h_feature_map(const EnvSpec& spec) {
  return FeatureMap(spec.state_dim, spec.control_dim, lift_dim(spec.kind), h_degree(spec.kind),
                    benchmark_lift(spec.kind));
}

inline FeatureMap f_feature_map(const EnvSpec& spec) {
  return FeatureMap(spec.state_dim, spec.control_dim, lift_dim(spec.kind), 1,
                    benchmark_lift(spec.kind));
}

}  // namespace cg
