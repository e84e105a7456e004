#include "cg/surrogate.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

using namespace cg;

namespace {

const EnvKind kAll[] = {EnvKind::vanderpol, EnvKind::pendulum, EnvKind::mountaincar, EnvKind::lorenz};

double heldout_rmse_h(const SurrogatePair& m, const EnvSpec& spec, std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  double se = 0.0;
  Vec x, u;
  for (int i = 0; i < n; ++i) {
    sample_admissible(spec, rng, x, u);
    const double truth = env_h(spec.kind, dynamics(spec.kind, x, u, {}));
    const double err = m.predict_h(x, u) - truth;
    se += err * err;
  }
  return std::sqrt(se / n);
}

// x' = A x + B u on a 2-state, 1-input system; the affine lift (x, u) represents it exactly.
struct LinearToy {
  Eigen::Matrix2d a;
  Eigen::Vector2d b;
  Vec operator()(const Vec& x, const Vec& u) const {
    Eigen::Vector2d n = a * Eigen::Vector2d(x[0], x[1]) + b * u[0];
    Vec out(2);
    out << n[0], n[1];
    return out;
  }
  double h(const Vec& next) const { return 1.0 - next.squaredNorm(); }
};

FeatureMap toy_map(int degree) {
  return FeatureMap(2, 1, 3, degree, [](const double* x, const double* u, double* z) {
    z[0] = x[0];
    z[1] = x[1];
    z[2] = u[0];
  });
}

}  // namespace

TEST(Features, GradedMonomialCounts) {
  // C(lift + degree, degree) monomials
  EXPECT_EQ(toy_map(1).size(), 4);
  EXPECT_EQ(toy_map(2).size(), 10);
  EXPECT_EQ(toy_map(3).size(), 20);
  EXPECT_EQ(h_feature_map(make_spec(EnvKind::vanderpol)).size(), 21);
  EXPECT_EQ(h_feature_map(make_spec(EnvKind::pendulum)).size(), 70);
  EXPECT_EQ(h_feature_map(make_spec(EnvKind::mountaincar)).size(), 70);
  EXPECT_EQ(h_feature_map(make_spec(EnvKind::lorenz)).size(), 325);
}

TEST(Features, MonomialValues) {
  const auto m = toy_map(2);
  Vec x(2), u(1);
  x << 2.0, 3.0;
  u << 5.0;
  std::vector<double> f(m.size());
  m.eval(x, u, f.data());
  // 1, x, y, u, x^2, xy, xu, y^2, yu, u^2
  const std::vector<double> expect = {1, 2, 3, 5, 4, 6, 10, 9, 15, 25};
  for (int i = 0; i < m.size(); ++i) EXPECT_EQ(f[i], expect[i]) << i;
}

TEST(Features, FiniteOnStateSpace) {
  std::mt19937_64 rng(4);
  for (EnvKind k : kAll) {
    const auto spec = make_spec(k);
    const auto hm = h_feature_map(spec);
    std::vector<double> f(hm.size());
    Vec x, u;
    for (int i = 0; i < 500; ++i) {
      sample_admissible(spec, rng, x, u);
      x *= 1.2;  // a little outside S, still inside the outer state space
      hm.eval(x, u, f.data());
      for (double v : f) ASSERT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Surrogate, ZeroWeightsPredictZero) {
  const auto spec = make_spec(EnvKind::vanderpol);
  SurrogatePair m = make_surrogate(spec, {});
  Vec x(2), u(2);
  x << 0.3, -0.2;
  u << 5, 1;
  EXPECT_EQ(m.predict_h(x, u), 0.0);
  EXPECT_EQ(m.predict_f(x, u), Vec::Zero(2));
}

TEST(Surrogate, VanderpolOfflineFitAccuracy) {
  const auto spec = make_spec(EnvKind::vanderpol);
  FitReport rep;
  const SurrogatePair m = fit_offline(spec, 5000, 0, {}, &rep);
  EXPECT_LT(rep.rmse_h, 1e-3);
  EXPECT_LT(heldout_rmse_h(m, spec, 12345, 2000), 1e-3);
  const Vec f0 = m.predict_f(Vec::Zero(2), Vec::Zero(2));
  EXPECT_LT(f0.norm(), 1e-9);
}

TEST(Surrogate, EveryBenchmarkFitsHeldOutData) {
  for (EnvKind k : kAll) {
    const auto spec = make_spec(k);
    FitReport rep;
    const SurrogatePair m = fit_offline(spec, 5000, 0, {}, &rep);
    EXPECT_LT(heldout_rmse_h(m, spec, 777, 1000), 1e-3) << to_string(k);
    EXPECT_LT(rep.rmse_f, 1e-6) << to_string(k);
  }
}

TEST(Surrogate, RejectsTooFewSamples) {
  const auto spec = make_spec(EnvKind::pendulum);
  EXPECT_THROW(fit_offline(spec, 10, 0), std::invalid_argument);
  EXPECT_THROW(fit_offline(spec, 0, 0), std::invalid_argument);
}

TEST(Surrogate, LinearToyExactFit) {
  LinearToy toy;
  toy.a << 0.9, 0.1, -0.2, 0.95;
  toy.b << 0.05, 0.3;
  SurrogatePair m(toy_map(2), toy_map(1), SurrogateSettings{});
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<Vec> xs, us;
  for (int i = 0; i < 200; ++i) {
    Vec x(2), u(1);
    x << d(rng), d(rng);
    u << d(rng);
    xs.push_back(x);
    us.push_back(u);
  }
  fit_weights(m, xs, us, toy);
  for (int i = 0; i < 100; ++i) {
    Vec x(2), u(1);
    x << 2 * d(rng), 2 * d(rng);
    u << 2 * d(rng);
    const Vec truth = toy(x, u);
    EXPECT_LT((m.predict_f(x, u) - truth).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(m.predict_h(x, u), toy.h(truth), 1e-9);
  }
}

TEST(Surrogate, PredictHLipschitzOnGrid) {
  const auto spec = make_spec(EnvKind::vanderpol);
  const SurrogatePair m = fit_offline(spec, 5000, 0);
  // Lift z = (x, y, u/40, v/40, x^2 y) on |x|, |y| <= 1, |u|, |v| <= 40.
  // |z_j| <= 1 and |grad_x z_j| <= sqrt(5) (the x^2 y term: (2xy, x^2)), so
  // every monomial of degree <= 2 has |grad_x| <= 2 sqrt(5).
  double lip = 0.0;
  for (int i = 1; i < m.w_h().size(); ++i) lip += std::abs(m.w_h()[i]) * 2.0 * std::sqrt(5.0);
  ASSERT_GT(lip, 0.0);
  const double step = 1e-3;
  Vec u(2);
  u << 13.0, -27.0;
  for (double x = -0.99; x < 0.99; x += 0.11) {
    for (double y = -0.99; y < 0.99; y += 0.11) {
      Vec p(2), q(2);
      p << x, y;
      q << x + step, y - step;
      const double dh = std::abs(m.predict_h(p, u) - m.predict_h(q, u));
      EXPECT_LE(dh, lip * (q - p).norm() + 1e-12);
    }
  }
}

TEST(Residual, BelowTriggerLeavesModelUnchanged) {
  const auto spec = make_spec(EnvKind::vanderpol);
  SurrogatePair m = fit_offline(spec, 5000, 0);
  Vec x(2), u(2);
  x << 0.2, 0.1;
  u << 3, -4;
  const Vec next = dynamics(spec.kind, x, u, {});
  const double before = m.predict_h(x, u);
  EXPECT_FALSE(m.residual_update(x, u, env_h(spec.kind, next), next));
  EXPECT_EQ(m.events(), 0u);
  EXPECT_EQ(m.predict_h(x, u), before);
}

TEST(Residual, ConstantBiasShrinksWithinBudget) {
  const auto spec = make_spec(EnvKind::vanderpol);
  SurrogatePair m = fit_offline(spec, 5000, 0);
  const double b = 0.5;
  std::mt19937_64 rng(21);
  Vec x, u;
  std::size_t last = 0;
  // Stops at the event budget, or earlier once errors fall under the trigger.
  for (int i = 0; i < 5000 && m.h_events() < 200; ++i) {
    sample_admissible(spec, rng, x, u);
    const Vec next = dynamics(spec.kind, x, u, {});
    m.residual_update(x, u, env_h(spec.kind, next) + b, next);
    ASSERT_GE(m.events(), last);
    last = m.events();
  }
  double bias = 0.0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    sample_admissible(spec, rng, x, u);
    const double truth = env_h(spec.kind, dynamics(spec.kind, x, u, {})) + b;
    bias += truth - m.predict_h(x, u);
  }
  EXPECT_LE(m.h_events(), 200u);
  EXPECT_LT(std::abs(bias / n), b / 10.0);
}

TEST(Residual, InfiniteTriggerFreezesModel) {
  const auto spec = make_spec(EnvKind::mountaincar);
  SurrogatePair m = fit_offline(spec, 5000, 0);
  m.set_trigger(std::numeric_limits<double>::infinity());
  Vec x(2), u(1);
  x << 0.01, -0.2;
  u << 50;
  const double h0 = m.predict_h(x, u);
  const Vec f0 = m.predict_f(x, u);
  std::mt19937_64 rng(2);
  Vec xs, us;
  for (int i = 0; i < 500; ++i) {
    sample_admissible(spec, rng, xs, us);
    Vec next = dynamics(spec.kind, xs, us, {});
    next[0] += 0.3;
    m.residual_update(xs, us, env_h(spec.kind, next) + 2.0, next);
  }
  EXPECT_EQ(m.events(), 0u);
  EXPECT_EQ(m.predict_h(x, u), h0);
  EXPECT_EQ(m.predict_f(x, u), f0);
}

TEST(Residual, FCorrectionTracksDrift) {
  const auto spec = make_spec(EnvKind::pendulum);
  SurrogatePair m = fit_offline(spec, 5000, 0);
  EnvParams drift;
  drift.r = 4.0;  // constant torque the nominal model does not know about
  std::mt19937_64 rng(9);
  Vec x, u;
  auto mean_err = [&](int n) {
    double e = 0.0;
    for (int i = 0; i < n; ++i) {
      sample_admissible(spec, rng, x, u);
      e += (m.predict_f(x, u) - dynamics(spec.kind, x, u, drift)).norm();
    }
    return e / n;
  };
  const double before = mean_err(200);
  for (int i = 0; i < 300; ++i) {
    sample_admissible(spec, rng, x, u);
    const Vec next = dynamics(spec.kind, x, u, drift);
    m.residual_update(x, u, env_h(spec.kind, next), next);
  }
  EXPECT_GT(m.f_events(), 0u);
  EXPECT_LT(mean_err(200), 0.2 * before);
}

TEST(Rls, CovarianceStaysSymmetricPositiveDefinite) {
  Rls r(4, 0.995, 1e-4);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    double phi[4] = {1.0, n(rng), n(rng), i % 2 ? 0.0 : n(rng)};
    r.update(phi, n(rng));
  }
  const Eigen::MatrixXd& p = r.covariance();
  EXPECT_LT((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  EXPECT_LE(p.trace(), 4.0 / 1e-4 * (1 + 1e-12));
}

TEST(Rls, ErrorFallsOnStationaryLinearTarget) {
  // Averaged over seeds, the squared error after 50 updates is well below the initial one.
  double before = 0.0, after = 0.0;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    const double w[3] = {0.5, -1.0, 2.0};
    Rls r(3, 0.995, 1e-4);
    auto sq_err = [&]() {
      double e = 0.0;
      for (int i = 0; i < 100; ++i) {
        double phi[3] = {1.0, n(rng), n(rng)};
        const double y = w[0] * phi[0] + w[1] * phi[1] + w[2] * phi[2];
        e += std::pow(y - r.predict(phi), 2);
      }
      return e / 100;
    };
    before += sq_err();
    for (int i = 0; i < 50; ++i) {
      double phi[3] = {1.0, n(rng), n(rng)};
      const double y = w[0] * phi[0] + w[1] * phi[1] + w[2] * phi[2] + 0.01 * n(rng);
      r.update(phi, y - r.predict(phi));
    }
    after += sq_err();
  }
  EXPECT_LT(after, 1e-2 * before);
}

TEST(Ridge, RankDeficientSystemsStillSolve) {
  Eigen::MatrixXd a(6, 3);
  a << 1, 2, 2, 1, 3, 3, 1, 4, 4, 1, 5, 5, 1, 6, 6, 1, 7, 7;  // columns 2 and 3 equal
  Eigen::MatrixXd b(6, 1);
  for (int i = 0; i < 6; ++i) b(i, 0) = 1.0 + 2.0 * a(i, 1);
  double used = 0.0;
  const Eigen::MatrixXd x = ridge_solve(a, b, 1e-12, &used);
  EXPECT_TRUE(x.allFinite());
  EXPECT_LT((a * x - b).norm(), 1e-4);
}
