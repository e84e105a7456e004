#pragma once

// Benchmark plants: explicit-Euler dynamics with seeded, piecewise-constant
// parameter variations, the constraint function h, its normalized violation
// cost and the per-step task cost.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cg {

inline constexpr int kMaxDim = 6;

/// Small vector with inline storage; state and control never exceed six entries.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

enum class EnvKind { vanderpol, pendulum, mountaincar, lorenz };

inline std::string_view to_string(EnvKind k) {
  switch (k) {
    case EnvKind::vanderpol: return "vanderpol";
    case EnvKind::pendulum: return "pendulum";
    case EnvKind::mountaincar: return "mountaincar";
    case EnvKind::lorenz: return "lorenz";
  }
  return "?";
}

inline EnvKind parse_env(std::string_view s) {
  if (s == "vanderpol") return EnvKind::vanderpol;
  if (s == "pendulum") return EnvKind::pendulum;
  if (s == "mountaincar") return EnvKind::mountaincar;
  if (s == "lorenz") return EnvKind::lorenz;
  throw std::invalid_argument("unknown environment '" + std::string(s) +
                              "' (expected vanderpol, pendulum, mountaincar, lorenz)");
}

struct ControlBox {
  Vec lo;
  Vec hi;

  Vec clamp(const Vec& u, bool* clipped = nullptr) const {
    Vec out = u.cwiseMax(lo).cwiseMin(hi);
    if (clipped) *clipped = (out.array() != u.array()).any();
    return out;
  }
  Vec center() const { return 0.5 * (lo + hi); }
  int dim() const { return static_cast<int>(lo.size()); }
};

struct EnvSpec {
  EnvKind kind = EnvKind::vanderpol;
  int state_dim = 2;
  int control_dim = 2;
  ControlBox bounds;
  double m_h = 1.0;            // cost normalization, rho = -h / m_h
  double task_scale = 1.0;     // magnitude of the task objective, scales the regularizer
  int resample_period = 10;
  // Reference scale per state coordinate (used to normalize errors).
  Vec state_scale;

  std::string_view name() const { return to_string(kind); }
};

inline EnvSpec make_spec(EnvKind kind) {
  EnvSpec s;
  s.kind = kind;
  auto box = [](int m, double lim) {
    return ControlBox{Vec::Constant(m, -lim), Vec::Constant(m, lim)};
  };
  switch (kind) {
    case EnvKind::vanderpol:
      s.state_dim = 2;
      s.control_dim = 2;
      s.bounds = box(2, 40.0);
      s.m_h = 1.0;
      s.task_scale = 1.0;
      s.resample_period = 10;
      s.state_scale = Vec::Constant(2, 1.0);
      break;
    case EnvKind::pendulum:
      s.state_dim = 2;
      s.control_dim = 1;
      s.bounds = box(1, 80.0);
      s.m_h = 1.0;
      s.task_scale = 36.0;
      s.resample_period = 50;
      s.state_scale = Vec(2);
      s.state_scale << 6.0, 1.5 * std::numbers::pi;
      break;
    case EnvKind::mountaincar:
      s.state_dim = 2;
      s.control_dim = 1;
      s.bounds = box(1, 200.0);
      s.m_h = 1.0;
      s.task_scale = 0.0025;
      s.resample_period = 5;
      s.state_scale = Vec(2);
      s.state_scale << 0.05, 0.7;
      break;
    case EnvKind::lorenz:
      s.state_dim = 6;
      s.control_dim = 6;
      s.bounds = box(6, 100.0);
      s.m_h = 11.0;
      s.task_scale = 1.0;
      s.resample_period = 5;
      s.state_scale = Vec::Constant(6, 1.0);
      break;
  }
  return s;
}

/// Current values of the time-varying terms. Unused fields stay zero.
///   vanderpol:   p, q additive on x and y rates
///   pendulum:    r piecewise-constant, q drifting bias
///   mountaincar: m actuator-gain drift, r and q additive on v and p
///   lorenz:      p additive on x[0]
struct EnvParams {
  double p = 0.0;
  double q = 0.0;
  double r = 0.0;
  double m = 0.0;

  bool operator==(const EnvParams&) const = default;
};

struct EnvState {
  EnvSpec spec;
  Vec x;
  std::size_t k = 0;
  EnvParams params;
  std::mt19937_64 rng;
  std::size_t control_clamps = 0;
  std::size_t state_space_exits = 0;
  bool last_control_clamped = false;
};

// ---------------------------------------------------------------------------
// Samplers

/// One Beta(a, b) draw via the gamma ratio.
template <class Rng>
double sample_beta(double a, double b, Rng& rng) {
  if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("sample_beta: shapes must be > 0");
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  for (;;) {
    const double x = ga(rng);
    const double y = gb(rng);
    // Both gammas can underflow to zero for tiny shapes; redraw.
    if (x + y > 0.0) return x / (x + y);
  }
}

template <class Rng>
double sample_uniform(double lo, double hi, Rng& rng) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// ---------------------------------------------------------------------------
// Constraint and costs

inline double pow4(double v) {
  const double s = v * v;
  return s * s;
}

inline double env_h(EnvKind kind, const Vec& x) {
  switch (kind) {
    case EnvKind::vanderpol: return 1.0 - x[0] * x[0] - x[1] * x[1];
    case EnvKind::pendulum:
      return 1.0 - pow4(x[0] / 6.0) - pow4(x[1] / (1.5 * std::numbers::pi));
    case EnvKind::mountaincar: return 1.0 - pow4(x[0] / 0.05) - pow4((x[1] + 0.3) / 0.7);
    case EnvKind::lorenz: return 1.0 - x.squaredNorm();
  }
  return 0.0;
}

inline double env_h(const EnvState& s) { return env_h(s.spec.kind, s.x); }

/// Outer state-space level: the state space is {x : h(x) >= -1}, written as
/// 2 - ... >= 0 (12 - ... for Lorenz).
inline bool in_state_space(const EnvSpec& spec, const Vec& x) {
  return env_h(spec.kind, x) >= -spec.m_h;
}

/// Radial projection onto the state space. Every h here is 1 - g(x) with g
/// homogeneous about a center, so scaling x - center by
/// ((1 + M_h) / g)^(1/degree) lands on the outer level set.
inline void project_to_state_space(const EnvSpec& spec, Vec& x) {
  const double g = 1.0 - env_h(spec.kind, x);
  const double cap = 1.0 + spec.m_h;
  if (!(g > cap)) return;
  const bool quartic = spec.kind == EnvKind::pendulum || spec.kind == EnvKind::mountaincar;
  const double t = quartic ? std::sqrt(std::sqrt(cap / g)) : std::sqrt(cap / g);
  if (spec.kind == EnvKind::mountaincar) {
    x[0] *= t;
    x[1] = -0.3 + t * (x[1] + 0.3);
  } else {
    x *= t;
  }
}

/// Normalized violation cost: 0 inside the admissible set, min(1, -h/M_h) outside.
inline double rho_from_h(double h, double m_h) {
  if (h >= 0.0) return 0.0;
  return std::min(1.0, -h / m_h);
}

inline double env_rho(const EnvSpec& spec, const Vec& x) {
  return rho_from_h(env_h(spec.kind, x), spec.m_h);
}

inline double env_rho(const EnvState& s) { return env_rho(s.spec, s.x); }

inline constexpr double kControlRegularizer = 1e-4;

/// Objective term of the benchmark alone (what the reports average).
inline double task_objective(EnvKind kind, const Vec& x) {
  switch (kind) {
    case EnvKind::vanderpol: {
      const double dx = x[0] - 0.8, dy = x[1] - 0.8;
      return dx * dx + dy * dy;
    }
    case EnvKind::pendulum: return -x[0] * x[0];
    case EnvKind::mountaincar: return -x[0] * x[0];
    case EnvKind::lorenz: return x[0];
  }
  return 0.0;
}

/// Objective plus the small control regularizer, expressed on controls
/// normalized by the box half-width and scaled to the objective magnitude.
inline double task_cost(const EnvSpec& spec, const Vec& x, const Vec& u) {
  double reg = 0.0;
  for (int i = 0; i < u.size(); ++i) {
    const double un = u[i] / spec.bounds.hi[i];
    reg += un * un;
  }
  return task_objective(spec.kind, x) + kControlRegularizer * spec.task_scale * reg;
}

// ---------------------------------------------------------------------------
// Dynamics

/// One step of the benchmark difference equations with explicit parameters.
inline Vec dynamics(EnvKind kind, const Vec& x, const Vec& u, const EnvParams& prm) {
  Vec n(x.size());
  switch (kind) {
    case EnvKind::vanderpol: {
      const double px = x[0], py = x[1];
      n[0] = px + 0.01 * (-2.0 * py + u[0] + prm.p);
      n[1] = py + 0.01 * (0.8 * px - 10.0 * (px * px - 0.21) * py + u[1] + prm.q);
      break;
    }
    case EnvKind::pendulum: {
      // x = (theta_dot, theta)
      const double w = x[0] + 0.05 * (15.0 * std::sin(x[1]) + 3.0 * u[0] + prm.r + prm.q);
      n[0] = w;
      n[1] = x[1] + 0.05 * w;
      break;
    }
    case EnvKind::mountaincar: {
      // x = (v, p)
      const double v = x[0] + (0.0015 + prm.m) * u[0] - 0.0025 * std::cos(3.0 * x[1]) + prm.r;
      n[0] = v;
      n[1] = x[1] + v + prm.q;
      break;
    }
    case EnvKind::lorenz: {
      for (int i = 0; i < 6; ++i) {
        const double a = x[(i + 1) % 6], b = x[(i + 4) % 6], c = x[(i + 5) % 6];
        n[i] = x[i] + 0.01 * ((a - b) * c - x[i] + u[i] + (i == 0 ? prm.p : 0.0));
      }
      break;
    }
  }
  return n;
}

/// Parameter snapshot in force during step k. Resample draws are taken from
/// `rng` at multiples of the period; drifts are closed-form in k.
template <class Rng>
void advance_params(EnvKind kind, std::size_t k, EnvParams& prm, Rng& rng) {
  switch (kind) {
    case EnvKind::vanderpol:
      if (k % 10 == 0) {
        prm.p = 14.0 * sample_beta(0.1, 0.1, rng) - 7.0;
        prm.q = 14.0 * sample_beta(0.1, 0.1, rng) - 7.0;
      }
      break;
    case EnvKind::pendulum:
      if (k % 50 == 0) prm.r = sample_uniform(-5.0, 5.0, rng);
      prm.q = 0.01 * static_cast<double>(k / 50);
      break;
    case EnvKind::mountaincar:
      prm.m = -5e-8 * static_cast<double>(k / 5);
      if (k % 5 == 0) {
        prm.r = 0.004 * sample_beta(0.1, 0.1, rng) - 0.002;
        prm.q = 0.004 * sample_beta(0.1, 0.1, rng) - 0.002;
      }
      break;
    case EnvKind::lorenz:
      if (k % 5 == 0) prm.p = sample_uniform(-5.0, 5.0, rng);
      break;
  }
}

inline Vec initial_state(EnvKind kind) {
  switch (kind) {
    case EnvKind::vanderpol: return Vec::Zero(2);
    case EnvKind::pendulum: return Vec::Zero(2);
    case EnvKind::mountaincar: {
      Vec x(2);
      x << 0.0, -0.3;
      return x;
    }
    case EnvKind::lorenz: return Vec::Zero(6);
  }
  return {};
}

inline EnvState env_create(const EnvSpec& spec, std::uint64_t seed) {
  EnvState s;
  s.spec = spec;
  s.x = initial_state(spec.kind);
  s.k = 0;
  s.rng.seed(seed);
  advance_params(spec.kind, 0, s.params, s.rng);
  return s;
}

inline EnvState env_create(EnvKind kind, std::uint64_t seed) { return env_create(make_spec(kind), seed); }

/// Applies u (clamped into the box) under the current parameters, then moves
/// the parameter schedules to step k + 1.
inline void env_step(EnvState& s, const Vec& u) {
  bool clipped = false;
  const Vec uc = s.spec.bounds.clamp(u, &clipped);
  s.last_control_clamped = clipped;
  if (clipped) ++s.control_clamps;
  s.x = dynamics(s.spec.kind, s.x, uc, s.params);
  ++s.k;
  if (!in_state_space(s.spec, s.x)) ++s.state_space_exits;
  advance_params(s.spec.kind, s.k, s.params, s.rng);
}

}  // namespace cg
