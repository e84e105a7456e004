#pragma once

// Run configuration (key=value files and flag overrides), trace CSV and
// summary files, and SVG line plots of the running metrics.

#include "cg/harness.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cg {

// ---------------------------------------------------------------------------
// Configuration

struct RunSpec {
  std::vector<EnvKind> envs{EnvKind::vanderpol};
  std::vector<Method> methods{Method::cost_aware};
  std::vector<double> alphas{0.1};
  std::vector<double> betas;  // empty: per-environment default
  std::vector<double> gammas{0.01};
  std::vector<std::size_t> windows{200};
  std::vector<std::uint64_t> seeds{0};
  std::size_t steps = 10000;
  int horizon = 20;
  std::string out_dir = "out";
  bool sweep = false;
  bool audit = false;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& key, std::string_view v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = v.find(',', pos);
    std::string item = trim(v.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (item.empty()) throw ConfigError(key + ": empty list entry");
    out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + s + "' is not a number");
  }
  if (used != s.size() || !std::isfinite(v)) throw ConfigError(key + ": '" + s + "' is not a finite number");
  return v;
}

inline unsigned long long to_unsigned(const std::string& key, const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": '" + s + "' is not a non-negative integer");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + s + "' is out of range");
  }
}

inline bool to_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": '" + s + "' is not a boolean");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& key, const std::string& value, F&& conv) {
  std::vector<T> out;
  for (const auto& item : split_list(key, value)) out.push_back(conv(key, item));
  return out;
}

}  // namespace detail

/// Applies one key=value setting. Numeric values are range-checked here;
/// cross-field constraints are checked by expand_runs.
inline void apply_setting(RunSpec& spec, const std::string& key, const std::string& value) {
  using namespace detail;
  auto in_unit = [&](const std::string& k, const std::string& s) {
    const double v = to_double(k, s);
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(k + ": " + s + " must lie in (0, 1)");
    return v;
  };
  auto non_negative = [&](const std::string& k, const std::string& s) {
    const double v = to_double(k, s);
    if (v < 0.0) throw ConfigError(k + ": " + s + " must be >= 0");
    return v;
  };
  auto positive = [&](const std::string& k, const std::string& s) {
    const double v = to_double(k, s);
    if (!(v > 0.0)) throw ConfigError(k + ": " + s + " must be > 0");
    return v;
  };
  auto window = [&](const std::string& k, const std::string& s) {
    const auto v = to_unsigned(k, s);
    if (v < 1) throw ConfigError(k + ": window must be >= 1");
    return static_cast<std::size_t>(v);
  };

  if (key == "env") {
    spec.envs.clear();
    for (const auto& s : split_list(key, value)) {
      try {
        spec.envs.push_back(parse_env(s));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
      }
    }
  } else if (key == "method") {
    spec.methods.clear();
    for (const auto& s : split_list(key, value)) {
      try {
        spec.methods.push_back(parse_method(s));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
      }
    }
  } else if (key == "alpha") {
    spec.alphas = parse_list<double>(key, value, in_unit);
  } else if (key == "beta") {
    spec.betas = parse_list<double>(key, value, non_negative);
  } else if (key == "gamma") {
    spec.gammas = parse_list<double>(key, value, positive);
  } else if (key == "window") {
    spec.windows = parse_list<std::size_t>(key, value, window);
  } else if (key == "seed" || key == "seeds") {
    spec.seeds = parse_list<std::uint64_t>(key, value, to_unsigned);
  } else if (key == "steps") {
    spec.steps = static_cast<std::size_t>(to_unsigned(key, trim(value)));
  } else if (key == "horizon") {
    const auto v = to_unsigned(key, trim(value));
    if (v < 1 || v > 10000) throw ConfigError(key + ": horizon must be in [1, 10000]");
    spec.horizon = static_cast<int>(v);
  } else if (key == "out_dir" || key == "out") {
    if (trim(value).empty()) throw ConfigError(key + ": empty path");
    spec.out_dir = trim(value);
  } else if (key == "sweep") {
    spec.sweep = to_bool(key, trim(value));
  } else if (key == "audit") {
    spec.audit = to_bool(key, trim(value));
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

/// Line-oriented key=value text; '#' starts a comment.
inline void apply_config_text(RunSpec& spec, std::string_view text) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      apply_setting(spec, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline RunSpec parse_config_text(std::string_view text) {
  RunSpec spec;
  apply_config_text(spec, text);
  return spec;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void apply_config_file(RunSpec& spec, const std::string& path) {
  try {
    apply_config_text(spec, read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Episode configurations for a run spec. Without `sweep`, alpha, beta, gamma
/// and window take a single value; environments, methods and seeds always
/// expand.
inline std::vector<EpisodeConfig> expand_runs(const RunSpec& spec) {
  if (!spec.sweep) {
    auto single = [](const char* key, std::size_t n) {
      if (n > 1) throw ConfigError(std::string(key) + ": value lists need sweep=true (or --sweep)");
    };
    single("alpha", spec.alphas.size());
    single("beta", spec.betas.size());
    single("gamma", spec.gammas.size());
    single("window", spec.windows.size());
  }
  if (spec.envs.empty() || spec.methods.empty() || spec.seeds.empty()) throw ConfigError("nothing to run");

  std::vector<EpisodeConfig> out;
  for (EnvKind env : spec.envs) {
    const std::vector<double> betas = spec.betas.empty() ? std::vector<double>{default_beta(env)} : spec.betas;
    for (double alpha : spec.alphas)
      for (double beta : betas)
        for (double gamma : spec.gammas)
          for (std::size_t w : spec.windows)
            for (Method m : spec.methods)
              for (std::uint64_t seed : spec.seeds) {
                EpisodeConfig c = default_episode(env, m, alpha, seed, spec.steps);
                c.params.beta = beta;
                c.params.gamma = gamma;
                c.window = w;
                c.mpc.horizon = spec.horizon;
                try {
                  c.params.validate();
                  c.mpc.validate();
                } catch (const std::invalid_argument& e) {
                  throw ConfigError(e.what());
                }
                out.push_back(std::move(c));
              }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace and summary files

inline constexpr const char* kTraceHeader = "step,delta,q_hat,score,e,cost,loss,h,task_cost,feasible";

inline std::string fmt12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_trace_csv(const EpisodeTrace& t, std::ostream& os) {
  os << kTraceHeader << '\n';
  for (const auto& r : t.steps) {
    os << r.k << ',' << fmt12(r.delta) << ',' << fmt12(r.q_hat) << ',' << fmt12(r.score) << ',' << r.e << ','
       << fmt12(r.cost) << ',' << fmt12(r.loss) << ',' << fmt12(r.h) << ',' << fmt12(r.task_cost) << ','
       << (r.feasible ? 1 : 0) << '\n';
  }
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing: " + std::strerror(errno));
  out << body;
  out.flush();
  if (!out) throw std::runtime_error(path + ": write failed");
}

inline void write_trace_csv(const EpisodeTrace& t, const std::string& path) {
  std::ostringstream ss;
  write_trace_csv(t, ss);
  write_text_file(path, ss.str());
}

/// Parses a trace CSV back into step records and recomputes the summary
/// metrics. Fields not stored in the CSV (clamp flags, config) stay default.
inline EpisodeTrace read_trace_csv(std::istream& in, const std::string& name = "trace") {
  EpisodeTrace t;
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kTraceHeader) {
    throw std::runtime_error(name + ": missing or unexpected header");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(detail::trim(cell));
    if (f.size() != 10) throw std::runtime_error(name + ": row " + std::to_string(row) + " has " +
                                                 std::to_string(f.size()) + " fields");
    try {
      StepRecord r;
      r.k = std::stoull(f[0]);
      r.delta = std::stod(f[1]);
      r.q_hat = std::stod(f[2]);
      r.score = std::stod(f[3]);
      r.e = std::stoi(f[4]);
      r.cost = std::stod(f[5]);
      r.loss = std::stod(f[6]);
      r.h = std::stod(f[7]);
      r.task_cost = std::stod(f[8]);
      r.feasible = std::stoi(f[9]) != 0;
      t.steps.push_back(r);
    } catch (const std::exception&) {
      throw std::runtime_error(name + ": row " + std::to_string(row) + " is malformed");
    }
  }
  summarize(t);
  if (!t.steps.empty()) t.summary.delta_first = t.steps.front().delta;
  return t;
}

inline EpisodeTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  return read_trace_csv(in, path);
}

/// Short key used in summary files: lemma1_bounds -> lemma1.
inline std::string audit_key(const std::string& check) { return check.substr(0, check.find('_')); }

inline std::string format_summary(const EpisodeTrace& t, const AuditReport* report = nullptr) {
  const auto& c = t.config;
  const auto& s = t.summary;
  std::ostringstream os;
  os << "env=" << to_string(c.env) << '\n'
     << "method=" << to_string(c.params.method) << '\n'
     << "alpha=" << fmt12(c.params.alpha) << '\n'
     << "beta=" << fmt12(c.params.beta) << '\n'
     << "gamma=" << fmt12(c.params.gamma) << '\n'
     << "window=" << c.window << '\n'
     << "horizon=" << c.mpc.horizon << '\n'
     << "seed=" << c.seed << '\n'
     << "steps=" << s.steps << '\n'
     << "V_T=" << fmt12(s.v_t) << '\n'
     << "J_T=" << fmt12(s.j_t) << '\n'
     << "J_task_mean=" << fmt12(s.j_task_mean) << '\n'
     << "sum_e=" << fmt12(s.sum_e) << '\n'
     << "sum_loss=" << fmt12(s.sum_loss) << '\n'
     << "delta_first=" << fmt12(s.delta_first) << '\n'
     << "delta_final=" << fmt12(s.delta_final) << '\n'
     << "score_clamps=" << s.score_clamps << '\n'
     << "control_clamps=" << s.control_clamps << '\n'
     << "recoveries=" << s.recoveries << '\n'
     << "state_space_exits=" << s.state_space_exits << '\n'
     << "model_events=" << s.model_events << '\n';
  if (report) {
    for (const auto& ch : report->checks) {
      os << "audit_" << audit_key(ch.name) << '=' << (!ch.applicable ? "NA" : ch.pass ? "PASS" : "FAIL")
         << " slack=" << fmt12(ch.slack) << '\n';
    }
  }
  return os.str();
}

inline void write_summary(const EpisodeTrace& t, const AuditReport* report, const std::string& path) {
  write_text_file(path, format_summary(t, report));
}

inline std::map<std::string, std::string> parse_summary(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// ---------------------------------------------------------------------------
// Plots

struct PlotSeries {
  Method method = Method::cost_aware;
  std::vector<double> y;  // seed-mean running value at steps 1..T
};

struct PlotPanel {
  std::string file;   // file name inside the output directory
  std::string title;
  std::vector<PlotSeries> series;  // legend order none, aci, pid, ours
};

/// Key for grouping traces into one figure: everything except method and seed.
inline std::string group_label(const EpisodeConfig& c, bool with_params) {
  std::string s(to_string(c.env));
  if (with_params) {
    s += "_a" + fmt12(c.params.alpha) + "_b" + fmt12(c.params.beta) + "_g" + fmt12(c.params.gamma) + "_w" +
         std::to_string(c.window) + "_n" + std::to_string(c.mpc.horizon) + "_T" + std::to_string(c.steps);
  }
  return s;
}

inline std::vector<PlotPanel> plot_panels(const std::vector<const EpisodeTrace*>& traces) {
  std::map<std::string, std::map<Method, std::vector<const EpisodeTrace*>>> groups;
  std::map<EnvKind, std::set<std::string>> per_env;
  for (const EpisodeTrace* t : traces) per_env[t->config.env].insert(group_label(t->config, true));
  for (const EpisodeTrace* t : traces) {
    const bool many = per_env[t->config.env].size() > 1;
    groups[group_label(t->config, many)][t->config.params.method].push_back(t);
  }

  std::vector<PlotPanel> panels;
  for (const auto& [label, by_method] : groups) {
    PlotPanel task{label + "_task.svg", label + ": running task cost", {}};
    PlotPanel cost{label + "_cost.svg", label + ": running violation cost J", {}};
    PlotPanel freq{label + "_violation.svg", label + ": running violation frequency V", {}};
    for (Method m : {Method::none, Method::standard_aci, Method::conformal_pid, Method::cost_aware}) {
      auto it = by_method.find(m);
      if (it == by_method.end()) continue;
      std::size_t n = 0;
      for (const EpisodeTrace* t : it->second) n = std::max(n, t->steps.size());
      PlotSeries a{m, std::vector<double>(n, 0.0)}, b = a, c = a;
      for (const EpisodeTrace* t : it->second) {
        if (t->steps.size() != n) throw std::invalid_argument("plot_panels: traces of unequal length in one group");
        const RunningCurves rc = running_curves(*t);
        for (std::size_t i = 0; i < n; ++i) {
          a.y[i] += rc.task[i];
          b.y[i] += rc.cost[i];
          c.y[i] += rc.freq[i];
        }
      }
      const double k = static_cast<double>(it->second.size());
      for (std::size_t i = 0; i < n; ++i) {
        a.y[i] /= k;
        b.y[i] /= k;
        c.y[i] /= k;
      }
      task.series.push_back(std::move(a));
      cost.series.push_back(std::move(b));
      freq.series.push_back(std::move(c));
    }
    panels.push_back(std::move(task));
    panels.push_back(std::move(cost));
    panels.push_back(std::move(freq));
  }
  return panels;
}

inline const char* series_color(Method m) {
  switch (m) {
    case Method::none: return "#7f7f7f";
    case Method::standard_aci: return "#1f77b4";
    case Method::conformal_pid: return "#2ca02c";
    case Method::cost_aware: return "#d62728";
  }
  return "#000000";
}

inline std::string render_svg(const PlotPanel& p) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  constexpr std::size_t kMaxPoints = 500;
  std::size_t n = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : p.series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo <= hi)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) {
    lo -= 0.5 * std::max(1e-12, std::abs(lo));
    hi += 0.5 * std::max(1e-12, std::abs(hi));
    if (hi == lo) hi = lo + 1;
  }
  auto px = [&](std::size_t i) { return L + (n > 1 ? (W - L - R) * i / double(n - 1) : 0.0); };
  auto py = [&](double v) { return T + (H - T - B) * (hi - v) / (hi - lo); };
  auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto g = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << p.title << "</text>\n"
     << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << f(py(v) + 4) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << g(v) << "</text>\n";
  }
  os << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" font-family=\"sans-serif\" font-size=\"11\">1</text>\n"
     << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
     << "font-size=\"11\">" << n << "</text>\n"
     << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"12\">step</text>\n";

  int row = 0;
  for (const auto& s : p.series) {
    const std::size_t m = s.y.size();
    const std::size_t stride = std::max<std::size_t>(1, (m + kMaxPoints - 1) / kMaxPoints);
    os << "<polyline fill=\"none\" stroke=\"" << series_color(s.method) << "\" stroke-width=\"1.5\" data-method=\""
       << short_label(s.method) << "\" data-final=\"" << (m ? fmt12(s.y.back()) : std::string("nan"))
       << "\" points=\"";
    for (std::size_t i = 0; i < m; i += stride) os << (i ? " " : "") << f(px(i)) << ',' << f(py(s.y[i]));
    if (m > 1 && (m - 1) % stride != 0) os << ' ' << f(px(m - 1)) << ',' << f(py(s.y[m - 1]));
    os << "\"/>\n";
    const double ly = T + 14 + 16 * row++;
    os << "<line x1=\"" << W - R - 90 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R - 70 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << series_color(s.method) << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << W - R - 64 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << short_label(s.method) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Writes every panel into out_dir and returns the written paths in order.
inline std::vector<std::string> emit_plots(const std::vector<const EpisodeTrace*>& traces,
                                           const std::string& out_dir) {
  if (traces.empty()) throw std::invalid_argument("emit_plots: no traces");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const auto& p : plot_panels(traces)) {
    const std::string path = (std::filesystem::path(out_dir) / p.file).string();
    write_text_file(path, render_svg(p));
    paths.push_back(path);
  }
  return paths;
}

inline std::vector<std::string> emit_plots(const std::vector<EpisodeTrace>& traces, const std::string& out_dir) {
  std::vector<const EpisodeTrace*> ptrs;
  for (const auto& t : traces) ptrs.push_back(&t);
  return emit_plots(ptrs, out_dir);
}

/// Directory name for one episode's outputs.
inline std::string episode_dir_name(const EpisodeConfig& c) {
  return std::string(to_string(c.env)) + "_" + std::string(short_label(c.params.method)) + "_a" +
         fmt12(c.params.alpha) + "_b" + fmt12(c.params.beta) + "_g" + fmt12(c.params.gamma) + "_w" +
         std::to_string(c.window) + "_s" + std::to_string(c.seed);
}

}  // namespace cg
