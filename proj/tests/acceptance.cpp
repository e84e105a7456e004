// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 4 5 9      a subset
//
// Exit status is nonzero if any selected criterion fails.

#include "cg/cg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace cg;

namespace {

constexpr EnvKind kEnvs[] = {EnvKind::vanderpol, EnvKind::pendulum, EnvKind::mountaincar, EnvKind::lorenz};

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Shared episodes for criteria 1, 2 and 7.
const std::vector<EpisodeTrace>& identity_grid() {
  static const std::vector<EpisodeTrace> traces = [] {
    std::vector<EpisodeConfig> cfgs;
    for (EnvKind env : kEnvs)
      for (Method m : {Method::cost_aware, Method::standard_aci})
        for (double a : {0.1, 0.3})
          for (std::uint64_t s = 0; s < 3; ++s) cfgs.push_back(default_episode(env, m, a, s, 2000));
    return run_episodes(cfgs);
  }();
  return traces;
}

std::string describe(const EpisodeConfig& c) {
  return std::string(to_string(c.env)) + "/" + std::string(short_label(c.params.method)) + fmt("/a%g/s%g", c.params.alpha, double(c.seed));
}

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& grid = identity_grid();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  double worst = 0;
  for (const auto& t : grid) {
    const auto& p = t.config.params;
    double sum = 0;
    for (const auto& r : t.steps) sum += p.alpha - r.loss;
    const double resid = std::abs(t.summary.delta_final - t.summary.delta_first - p.gamma * sum);
    worst = std::max(worst, resid);
    const double lo = -p.gamma * (1.0 + p.effective_beta() - p.alpha), hi = 1.0 + p.gamma * p.alpha;
    bool inside = t.summary.delta_final >= lo && t.summary.delta_final <= hi;
    for (const auto& r : t.steps) inside = inside && r.delta >= lo && r.delta <= hi;
    if (resid > 1e-9 || !inside) {
      o.pass = false;
      o.detail += " " + describe(t.config);
    }
  }
  o.detail = fmt("%g episodes, max |residual| %.3g, %.0f s", double(grid.size()), worst, secs) + o.detail;
  if (secs > 300) o.detail += " (over the 5 min runtime target)";
  return o;
}

Outcome criterion2() {
  Outcome o;
  double min_v = 1e300, min_j = 1e300;
  for (const auto& t : identity_grid()) {
    const auto& p = t.config.params;
    const double T = static_cast<double>(t.steps.size());
    const double drift = t.summary.delta_first - t.summary.delta_final;
    const double sv = p.alpha + drift / (T * p.gamma) + 1e-12 - t.summary.v_t;
    min_v = std::min(min_v, sv);
    bool ok = sv >= 0;
    const double beta = p.effective_beta();
    if (beta > 0) {
      const double sj = p.alpha / beta + drift / (beta * T * p.gamma) + 1e-12 - t.summary.j_t;
      min_j = std::min(min_j, sj);
      ok = ok && sj >= 0;
    }
    if (!ok) {
      o.pass = false;
      o.detail += " " + describe(t.config);
    }
  }
  o.detail = fmt("min slack V %.3g, J %.3g", min_v, min_j) + o.detail;
  return o;
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  const double alphas[] = {0.1, 0.3, 0.5};
  std::vector<EpisodeConfig> cfgs;
  for (double a : alphas)
    for (Method m : {Method::standard_aci, Method::cost_aware})
      for (std::uint64_t s = 0; s < 10; ++s) cfgs.push_back(default_episode(EnvKind::mountaincar, m, a, s, 10000));
  const auto traces = run_episodes(cfgs);
  Outcome o;
  double prev[2][2] = {{-1, -1}, {-1, -1}};  // [aci|ours][V|J]
  for (double a : alphas) {
    std::vector<const EpisodeTrace*> group;
    for (const auto& t : traces)
      if (t.config.params.alpha == a) group.push_back(&t);
    double v[2] = {}, j[2] = {};
    for (const auto& row : aggregate_seeds(group)) {
      const int i = row.method == Method::cost_aware ? 1 : 0;
      v[i] = row.v.mean;
      j[i] = row.j.mean;
    }
    const bool ordered = v[1] < v[0] && j[1] < j[0] && v[1] <= a;
    const bool monotone = v[0] >= prev[0][0] && j[0] >= prev[0][1] && v[1] >= prev[1][0] && j[1] >= prev[1][1];
    o.pass = o.pass && ordered && monotone;
    o.detail += fmt(" a=%.1f: V %.4g vs %.4g,", a, v[1], v[0]) + fmt(" J %.4g vs %.4g", j[1], j[0]);
    if (!ordered) o.detail += " [order]";
    if (!monotone) o.detail += " [alpha-monotonicity]";
    prev[0][0] = v[0];
    prev[0][1] = j[0];
    prev[1][0] = v[1];
    prev[1][1] = j[1];
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.detail = "ours vs aci," + o.detail + fmt("; %.0f s", secs);
  return o;
}

// Independent oracle: smallest grid value whose count reaches (1 - delta) n,
// done in integer arithmetic on the tenths grid.
Outcome criterion4() {
  ThresholdParams p;
  p.big_m = 2.0;
  p.epsilon = 1e-3;
  const double grid[5] = {0.0, 0.25, 0.5, 1.0, 2.0};
  std::size_t checked = 0, bad = 0;
  std::vector<int> idx;
  for (int n = 1; n <= 8; ++n) {
    idx.assign(static_cast<std::size_t>(n), 0);
    for (;;) {
      CalibrationWindow w(static_cast<std::size_t>(n));
      for (int i : idx) w.push(grid[i]);
      int counts[5] = {};
      for (int i : idx) ++counts[i];
      for (int d10 = 0; d10 <= 10; ++d10) {
        double expect = grid[4];
        int cum = 0;
        for (int g = 0; g < 5; ++g) {
          cum += counts[g];
          if (cum > 0 && 10 * cum >= n * (10 - d10)) {
            expect = grid[g];
            break;
          }
        }
        ++checked;
        if (empirical_quantile(w, d10 / 10.0, p) != expect) ++bad;
      }
      int k = 0;
      while (k < n && ++idx[static_cast<std::size_t>(k)] == 5) idx[static_cast<std::size_t>(k++)] = 0;
      if (k == n) break;
    }
  }
  CalibrationWindow w(4);
  w.push(0.5);
  const bool branches = empirical_quantile(w, -0.01, p) == p.big_m && empirical_quantile(w, 1.01, p) == -p.epsilon &&
                        empirical_quantile(CalibrationWindow(4), 0.5, p) == -p.epsilon &&
                        empirical_quantile(CalibrationWindow(4), 0.1, p) == p.big_m;
  Outcome o;
  o.pass = bad == 0 && branches;
  o.detail = fmt("%g cases, %g mismatches, branches ", double(checked), double(bad)) + (branches ? "ok" : "wrong");
  return o;
}

Outcome criterion5() {
  auto v2 = [](double a, double b) {
    Vec x(2);
    x << a, b;
    return x;
  };
  Outcome o;
  const Vec n = dynamics(EnvKind::vanderpol, v2(1, 1), v2(0, 0), EnvParams{});
  const double err = std::max(std::abs(n[0] - 0.98), std::abs(n[1] - 0.929));
  double fp = 0;
  auto fixed = [&](EnvKind e, const Vec& x, const Vec& u) { fp = std::max(fp, (dynamics(e, x, u, EnvParams{}) - x).cwiseAbs().maxCoeff()); };
  fixed(EnvKind::vanderpol, v2(0, 0), v2(0, 0));
  Vec u1(1);
  u1 << 0.0;
  fixed(EnvKind::pendulum, v2(0, 0), u1);
  fixed(EnvKind::lorenz, Vec::Zero(6), Vec::Zero(6));
  fixed(EnvKind::mountaincar, v2(0, std::numbers::pi / 6.0), u1);
  o.pass = err <= 1e-12 && fp <= 1e-12;
  o.detail = fmt("vanderpol (1,1) error %.3g, fixed-point drift %.3g", err, fp);
  return o;
}

// Level sequence on an alternating 0 / L_max stream with random block lengths.
// A level below 0 forces a covered step (L = 0); above 1 forces a miss.
Outcome criterion6() {
  constexpr std::size_t T = 100000;
  ThresholdParams p;
  p.alpha = 0.1;
  p.beta = 10.0;
  p.gamma = 1.0 / std::sqrt(static_cast<double>(T));
  const double lmax = p.max_loss();
  const double D = 1.0 + p.gamma * lmax, G = lmax - p.alpha;
  const double C = 0.5 * (D * D + G * G);
  Outcome o;
  double worst_ratio = 0, worst_avg = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> block(1, 3);
    std::vector<double> d, l;
    d.reserve(T);
    l.reserve(T);
    ThresholdState st = initial_threshold_state(p);
    bool high = false;
    int left = block(rng);
    for (std::size_t k = 0; k < T; ++k) {
      if (left-- == 0) {
        high = !high;
        left = block(rng) - 1;
      }
      double loss = high ? lmax : 0.0;
      if (st.delta < 0) loss = 0.0;
      if (st.delta > 1) loss = std::max(loss, 1.0);
      d.push_back(st.delta);
      l.push_back(loss);
      LossRecord rec;
      rec.loss = loss;
      st = update_threshold(st, rec, p);
    }
    const auto c = regret_curve(d, l, p.alpha, p.gamma);
    worst_ratio = std::max(worst_ratio, c.max_ratio);
    worst_avg = std::max(worst_avg, c.final_regret / static_cast<double>(T));
  }
  o.pass = worst_ratio <= C && worst_avg <= 1e-2;
  o.detail = fmt("max Regret/sqrt(T) %.4g (constant %.4g), Regret_T/T %.3g", worst_ratio, C, worst_avg);
  return o;
}

Outcome criterion7() {
  Outcome o;
  double worst = 0;
  std::size_t used = 0;
  for (const auto& t : identity_grid()) {
    const auto& p = t.config.params;
    double se = 0, sec = 0;
    for (const auto& r : t.steps) {
      se += r.e;
      sec += r.e * r.cost;
    }
    if (se == 0) continue;
    ++used;
    const double T = static_cast<double>(t.steps.size());
    const double ahat = se / T, cbar = sec / se;
    const double resid = std::abs(ahat * (1 + p.effective_beta() * cbar) - p.alpha -
                                  (t.summary.delta_first - t.summary.delta_final) / (T * p.gamma));
    worst = std::max(worst, resid);
    if (resid > 1e-9) {
      o.pass = false;
      o.detail += " " + describe(t.config);
    }
  }
  o.detail = fmt("%g episodes with misses, max |residual| %.3g", double(used), worst) + o.detail;
  return o;
}

Outcome criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<EpisodeConfig> cfgs;
  for (EnvKind env : kEnvs)
    for (Method m : {Method::none, Method::standard_aci, Method::conformal_pid, Method::cost_aware})
      for (std::uint64_t s = 0; s < 5; ++s) cfgs.push_back(default_episode(env, m, 0.1, s, 5000));
  const auto traces = run_episodes(cfgs);
  Outcome o;
  for (EnvKind env : kEnvs) {
    std::vector<const EpisodeTrace*> group;
    for (const auto& t : traces)
      if (t.config.env == env) group.push_back(&t);
    double none = 0, best_aci = 0;
    std::string row;
    for (const auto& r : aggregate_seeds(group)) {
      if (r.method == Method::none)
        none = r.v.mean;
      else
        best_aci = std::max(best_aci, r.v.mean);
      row += " " + std::string(short_label(r.method)) + fmt("=%.4g", r.v.mean);
    }
    const bool ok = none > best_aci;
    o.pass = o.pass && ok;
    o.detail += " " + std::string(to_string(env)) + ":" + row + (ok ? "" : " [none not worst]") + ";";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.detail = "seed-mean V at alpha 0.1," + o.detail + fmt(" %.0f s", secs);
  return o;
}

Outcome criterion9() {
  std::mt19937_64 rng(2024);
  constexpr int n = 100000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_beta(0.1, 0.1, rng);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  Outcome o;
  o.pass = std::abs(mean - 0.5) <= 0.01 && std::abs(var - 0.2083) <= 0.01;
  o.detail = fmt("mean %.4f, variance %.4f", mean, var);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::function<Outcome()> criteria[] = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                               criterion6, criterion7, criterion8, criterion9};
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failures = 0;
  for (int i = 1; i <= 9; ++i) {
    if (!pick.empty() && !pick.count(i)) continue;
    Outcome o;
    try {
      o = criteria[i - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d: %s  %s\n", i, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
