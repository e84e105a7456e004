// cg_run: closed-loop runs, sweeps, traces, summaries and plots.
//
//   cg_run --env mountaincar --method ours,aci --alpha 0.1 --seed 0,1 --out runs
//   cg_run --config sweep.cfg --sweep --audit
//
// Exit status: 0 on success, 1 if a requested audit failed, 2 on bad
// configuration, 3 on a runtime error.

#include "cg/cg.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct Flags {
  std::optional<std::string> config, env, method, alpha, beta, gamma, window, steps, seed, horizon, out;
  bool audit = false;
  bool sweep = false;
};

cg::RunSpec build_spec(const Flags& f) {
  cg::RunSpec spec;
  if (f.config) cg::apply_config_file(spec, *f.config);
  const std::pair<const char*, const std::optional<std::string>*> overrides[] = {
      {"env", &f.env},       {"method", &f.method}, {"alpha", &f.alpha}, {"beta", &f.beta},
      {"gamma", &f.gamma},   {"window", &f.window}, {"steps", &f.steps}, {"seed", &f.seed},
      {"horizon", &f.horizon}, {"out_dir", &f.out},
  };
  for (const auto& [key, value] : overrides) {
    if (*value) cg::apply_setting(spec, key, **value);
  }
  if (f.audit) spec.audit = true;
  if (f.sweep) spec.sweep = true;
  return spec;
}

std::string aggregate_csv(const std::vector<cg::EpisodeTrace>& traces) {
  std::map<std::string, std::vector<const cg::EpisodeTrace*>> groups;
  for (const auto& t : traces) groups[cg::group_label(t.config, true)].push_back(&t);
  std::ostringstream os;
  os << "env,alpha,beta,gamma,window,horizon,steps,method,n,J_task_mean,J_task_std,J_mean,J_std,V_mean,V_std\n";
  for (const auto& [label, list] : groups) {
    const auto& c = list.front()->config;
    for (const auto& r : cg::aggregate_seeds(list)) {
      os << cg::to_string(c.env) << ',' << cg::fmt12(c.params.alpha) << ',' << cg::fmt12(c.params.beta) << ','
         << cg::fmt12(c.params.gamma) << ',' << c.window << ',' << c.mpc.horizon << ',' << c.steps << ','
         << cg::short_label(r.method) << ',' << r.n << ',' << cg::fmt12(r.j_task.mean) << ','
         << cg::fmt12(r.j_task.std) << ',' << cg::fmt12(r.j.mean) << ',' << cg::fmt12(r.j.std) << ','
         << cg::fmt12(r.v.mean) << ',' << cg::fmt12(r.v.std) << '\n';
    }
  }
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop runs with cost-aware adaptive conformal thresholds"};
  Flags f;
  app.add_option("--config", f.config, "key=value run configuration file");
  app.add_option("--env", f.env, "vanderpol, pendulum, mountaincar, lorenz (comma list allowed)");
  app.add_option("--method", f.method, "none, aci, pid, ours (comma list allowed)");
  app.add_option("--alpha", f.alpha, "risk budget in (0, 1)");
  app.add_option("--beta", f.beta, "severity weight (default 50 for vanderpol, 100 otherwise)");
  app.add_option("--gamma", f.gamma, "level step size");
  app.add_option("--window", f.window, "calibration window length");
  app.add_option("--steps", f.steps, "episode length");
  app.add_option("--seed", f.seed, "seed or comma list of seeds");
  app.add_option("--horizon", f.horizon, "MPC horizon");
  app.add_option("--out", f.out, "output directory");
  app.add_flag("--audit", f.audit, "run the auditors and gate the exit status");
  app.add_flag("--sweep", f.sweep, "allow value lists for alpha, beta, gamma and window");
  CLI11_PARSE(app, argc, argv);

  cg::RunSpec spec;
  std::vector<cg::EpisodeConfig> configs;
  try {
    spec = build_spec(f);
    configs = cg::expand_runs(spec);
  } catch (const std::exception& e) {
    std::cerr << "cg_run: " << e.what() << '\n';
    return 2;
  }

  try {
    namespace fs = std::filesystem;
    fs::create_directories(spec.out_dir);
    const std::vector<cg::EpisodeTrace> traces = cg::run_episodes(configs);

    bool audits_ok = true;
    for (const auto& t : traces) {
      const fs::path dir = fs::path(spec.out_dir) / cg::episode_dir_name(t.config);
      fs::create_directories(dir);
      const cg::AuditReport report = cg::audit_all(t, t.config.params);
      cg::write_trace_csv(t, (dir / "trace.csv").string());
      cg::write_summary(t, &report, (dir / "summary.txt").string());
      std::printf("%-48s V_T=%.5f J_T=%.6f J_task=%.6g", cg::episode_dir_name(t.config).c_str(), t.summary.v_t,
                  t.summary.j_t, t.summary.j_task_mean);
      if (spec.audit) {
        const bool ok = report.all_pass();
        audits_ok = audits_ok && ok;
        std::printf(" audit=%s", ok ? "PASS" : "FAIL");
        for (const auto& c : report.checks) {
          if (c.applicable && !c.pass) std::printf(" [%s slack=%g]", c.name.c_str(), c.slack);
        }
      }
      std::printf("\n");
    }
    cg::write_text_file((fs::path(spec.out_dir) / "aggregate.csv").string(), aggregate_csv(traces));
    cg::emit_plots(traces, (fs::path(spec.out_dir) / "plots").string());
    return audits_ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "cg_run: " << e.what() << '\n';
    return 3;
  }
}
