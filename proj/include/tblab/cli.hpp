#pragma once

// tblab command-line front end: simulate, predict, analyze, compare.
//
// Exit codes: 0 success, 1 input missing (or output unwritable), 2 validation
// failure, 3 partial failure in a batch.

#include <glob.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tblab/analytic.hpp"
#include "tblab/compare.hpp"
#include "tblab/estimators.hpp"
#include "tblab/swarm.hpp"
#include "tblab/trace.hpp"

namespace tblab::cli {

inline constexpr const char* kVersion = "1.0.0";

enum Exit : int { ok = 0, input_missing = 1, validation = 2, partial = 3 };

namespace fs = std::filesystem;

inline std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_color_mt("tblab");
    l->set_pattern("tblab: %l: %v");
    l->set_level(spdlog::level::warn);
    if (const char* env = std::getenv("TBLAB_LOG")) l->set_level(spdlog::level::from_str(env));
    return l;
  }();
  return log;
}

// Writes via a temp file in the same directory, then renames over path.
inline void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::insufficient_data, "cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error(Errc::insufficient_data, "cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::insufficient_data, "cannot rename to " + path.string() + ": " + ec.message());
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(Errc::insufficient_data, "cannot create output directory " + dir.string());
}

inline std::vector<std::string> expand_glob(const std::string& pattern) {
  std::vector<std::string> out;
  glob_t g{};
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  return out;
}

inline nlohmann::ordered_json optional_json(const Result<double>& r) {
  return r ? nlohmann::ordered_json(*r) : nlohmann::ordered_json(nullptr);
}

struct ModelFlags {
  double gamma = 3.0;
  double beta = 90.0;
  double tau_off = 70.0;
  double w_star = 210.0;
  double r = 1.0;
  std::optional<double> theta;
};

inline void add_model_flags(CLI::App* cmd, ModelFlags& m, bool with_theta) {
  cmd->add_option("--gamma", m.gamma, "host download rate in multiples of r")->capture_default_str();
  cmd->add_option("--beta", m.beta, "turnover threshold factor")->capture_default_str();
  cmd->add_option("--tau-off", m.tau_off, "offset setup time [s]")->capture_default_str();
  cmd->add_option("--w-star", m.w_star, "saturated buffer width [s]")->capture_default_str();
  if (with_theta) cmd->add_option("--theta", m.theta, "initial offset [s] (default w_star/3)");
}

inline nlohmann::ordered_json prediction_summary(const analytic::ModelParams& p) {
  nlohmann::ordered_json j;
  auto sch = analytic::scheduling_turnover(p);
  auto cvg = analytic::convergence_time(p);
  auto group = analytic::classify(p);
  j["tau_sch"] = optional_json(sch);
  j["tau_off"] = p.tau_off;
  j["tau_cvg"] = optional_json(cvg);
  j["c_sch"] = p.c_sch;
  j["group"] = group ? nlohmann::ordered_json(std::string(analytic::to_string(*group))) : nlohmann::ordered_json(nullptr);
  j["non_converging"] = !p.converges();
  auto [lo, hi] = analytic::group_boundaries(p);
  j["group_boundaries"] = {lo, hi};
  j["params"] = {{"r", p.r}, {"r_p", p.r_p}, {"c_sch", p.c_sch}, {"tau_off", p.tau_off}, {"theta", p.theta}, {"w_star", p.w_star}};
  return j;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma, r, beta, tau_off, w_star;
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  nlohmann::json j = nlohmann::json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) {
      err << "tblab: cannot read config " << a.config << '\n';
      return input_missing;
    }
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      err << "tblab: config: " << e.what() << '\n';
      return validation;
    }
  }
  if (!j.is_object()) {
    err << "tblab: config: must be a JSON object\n";
    return validation;
  }
  if (a.seed) j["seed"] = *a.seed;
  if (a.gamma) j["gamma_p"] = *a.gamma;
  if (a.r) j["r"] = *a.r;
  if (a.beta) j["tb"]["beta"] = *a.beta;
  if (a.tau_off) j["tb"]["tau_off"] = *a.tau_off;
  if (a.w_star) j["tb"]["w_star"] = *a.w_star;

  sim::SwarmConfig cfg;
  try {
    cfg = sim::config_from_json(j);
  } catch (const Error& e) {
    err << "tblab: invalid config: " << e.what() << '\n';
    return validation;
  }

  try {
    fs::path dir(a.out);
    ensure_dir(dir);
    logger()->info("simulating gamma_p={} r={} seed={}", cfg.gamma_p, cfg.r, cfg.seed);
    auto result = sim::run(cfg);
    std::vector<std::string> files;
    for (const auto& tr : result.traces) {
      std::string name = "peer-" + std::to_string(tr.peer) + ".jsonl";
      write_atomic(dir / name, to_jsonl(tr));
      files.push_back(name);
    }

    nlohmann::ordered_json m;
    m["tool"] = "tblab";
    m["version"] = kVersion;
    m["seed"] = cfg.seed;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(sim::config_hash(cfg)));
    m["config_hash"] = hash;
    m["config"] = sim::to_json(cfg);
    auto p = sim::model_params(cfg);
    nlohmann::ordered_json derived;
    derived["c_sch"] = threshold_chunks(cfg.tb.beta, cfg.r);
    derived["theta"] = result.host.theta.value;
    try {
      p.validate();
      auto s = prediction_summary(p);
      derived["tau_sch"] = s["tau_sch"];
      derived["tau_cvg"] = s["tau_cvg"];
      derived["group"] = s["group"];
    } catch (const Error& e) {
      derived["model_error"] = e.what();
    }
    m["derived"] = derived;
    m["host"] = {{"peer", 0},
                 {"downloaded", result.host.downloaded},
                 {"misses", result.host.misses},
                 {"duplicates", result.host.duplicates},
                 {"wasted", result.host.wasted},
                 {"requests", result.host.requests},
                 {"rejected", result.host.rejected}};
    m["files"] = files;
    write_atomic(dir / "manifest.json", m.dump(2) + "\n");
    out << "wrote " << files.size() << " traces and manifest.json to " << dir.string() << '\n';
  } catch (const Error& e) {
    err << "tblab: " << e.what() << '\n';
    return input_missing;
  }
  return ok;
}

struct PredictArgs {
  ModelFlags model;
  double duration = 300.0;
  double step = 1.0;
  std::string out;
  std::string format = "json";
};

inline int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  analytic::ModelParams p;
  try {
    p = analytic::ModelParams::normalized(a.model.gamma, a.model.beta, a.model.tau_off, a.model.w_star, a.model.theta).scaled(a.model.r);
    p.validate();
    if (!(a.step > 0)) throw Error(Errc::invalid_argument, "step: must be positive");
    if (!(a.duration >= 0)) throw Error(Errc::invalid_argument, "duration: must be non-negative");
  } catch (const Error& e) {
    err << "tblab: invalid parameters: " << e.what() << '\n';
    return validation;
  }
  auto summary = prediction_summary(p);
  std::ostringstream csv;
  analytic::write_prediction_csv(csv, p, a.duration, a.step);
  if (!a.out.empty()) {
    try {
      ensure_dir(a.out);
      write_atomic(fs::path(a.out) / "prediction.csv", csv.str());
      write_atomic(fs::path(a.out) / "prediction.json", summary.dump(2) + "\n");
    } catch (const Error& e) {
      err << "tblab: " << e.what() << '\n';
      return input_missing;
    }
  }
  if (a.format == "csv")
    out << csv.str();
  else
    out << summary.dump(2) << '\n';
  return ok;
}

struct AnalyzeArgs {
  std::string pattern;
  std::string out;
  std::optional<double> r;
  double bin_width = 1.0;
  est::Options opt;
};

inline int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  auto files = expand_glob(a.pattern);
  if (files.empty()) {
    err << "tblab: no traces match " << a.pattern << '\n';
    return input_missing;
  }
  if (!(a.bin_width > 0)) {
    err << "tblab: bin-width: must be positive\n";
    return validation;
  }
  std::size_t failed = 0;
  std::ostringstream csv;
  csv << "file,peer,r,tau_off_aa,tau_off_li,beta_width_jump,beta_dv_turn,beta_flat_mean,beta_pv_jump,gamma_e2e,gamma_seg,group\n";
  std::vector<double> betas, gammas, tau_offs;
  nlohmann::ordered_json reports = nlohmann::ordered_json::array();
  auto cell = [](const Result<double>& r) { return r ? std::to_string(*r) : std::string(); };
  for (const auto& file : files) {
    Trace tr;
    try {
      tr = read_jsonl_file(file);
      if (tr.empty()) throw Error(Errc::malformed, "no samples");
    } catch (const Error& e) {
      err << "tblab: " << file << ": " << e.what() << '\n';
      ++failed;
      continue;
    }
    double r = 0;
    if (a.r) {
      r = *a.r;
    } else {
      auto inferred = est::infer_rate(tr);
      if (!inferred) {
        err << "tblab: " << file << ": cannot infer r (" << inferred.error().reason << "); pass --r\n";
        ++failed;
        continue;
      }
      r = *inferred;
    }
    auto rep = est::analyze(tr, r, a.opt);
    auto j = est::to_json(rep);
    j["file"] = file;
    reports.push_back(j);
    csv << file << ',' << rep.peer << ',' << r << ',' << cell(rep.tau_off_aa) << ',' << cell(rep.tau_off_li);
    for (auto m : est::kBetaMethods) {
      const auto& b = rep.beta(m);
      csv << ',' << cell(b);
      if (b) betas.push_back(*b);
    }
    csv << ',' << cell(rep.gamma_e2e) << ',' << cell(rep.gamma_seg) << ',' << (rep.group ? std::string(analytic::to_string(*rep.group)) : "")
        << '\n';
    if (rep.gamma_e2e) gammas.push_back(*rep.gamma_e2e);
    if (rep.tau_off_li) tau_offs.push_back(*rep.tau_off_li);
    if (a.out.empty()) out << j.dump() << '\n';
  }

  if (!a.out.empty()) {
    try {
      fs::path dir(a.out);
      ensure_dir(dir);
      for (const auto& j : reports) {
        std::string stem = fs::path(j["file"].get<std::string>()).stem().string();
        write_atomic(dir / (stem + ".report.json"), j.dump(2) + "\n");
      }
      write_atomic(dir / "estimates.csv", csv.str());
      auto hist_csv = [&](const std::vector<double>& xs) {
        std::ostringstream h;
        h << "lower,upper,count\n";
        for (const auto& [lo, n] : est::histogram(xs, a.bin_width).bins) h << lo << ',' << lo + a.bin_width << ',' << n << '\n';
        return h.str();
      };
      write_atomic(dir / "hist_beta.csv", hist_csv(betas));
      write_atomic(dir / "hist_gamma.csv", hist_csv(gammas));
      write_atomic(dir / "hist_tau_off.csv", hist_csv(tau_offs));
      out << "analyzed " << reports.size() << " of " << files.size() << " traces into " << dir.string() << '\n';
    } catch (const Error& e) {
      err << "tblab: " << e.what() << '\n';
      return input_missing;
    }
  }
  return failed ? partial : ok;
}

struct CompareArgs {
  std::string trace;
  ModelFlags model;
  bool r_given = false;
  double window = 0.1;
  std::string out;
  std::string format = "json";
};

inline int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream& err) {
  Trace tr;
  try {
    tr = read_jsonl_file(a.trace);
  } catch (const Error& e) {
    err << "tblab: " << a.trace << ": " << e.what() << '\n';
    return e.code() == Errc::malformed ? validation : input_missing;
  }
  if (tr.empty()) {
    err << "tblab: " << a.trace << ": empty trace\n";
    return input_missing;
  }
  double r = a.model.r;
  auto inferred = est::infer_rate(tr);
  if (a.r_given) {
    if (inferred && std::abs(*inferred - r) > 0.01 * r) {
      err << "tblab: r: trace advances at " << *inferred << " chunks/s but --r is " << r << '\n';
      return validation;
    }
  } else if (inferred) {
    r = *inferred;
  }
  cmp::Comparison c;
  try {
    auto p = cmp::params_for_trace(tr, r, a.model.gamma, a.model.beta, a.model.tau_off, a.model.w_star);
    if (a.model.theta) p.theta = *a.model.theta * r;
    c = cmp::compare(tr, p, a.window);
  } catch (const Error& e) {
    err << "tblab: invalid parameters: " << e.what() << '\n';
    return validation;
  }
  nlohmann::ordered_json s;
  s["trace"] = a.trace;
  s["r"] = r;
  s["samples"] = c.samples.size();
  s["window"] = a.window;
  s["plain"] = {{"max_abs", c.plain.max_abs}, {"mean_abs", c.plain.mean_abs}};
  s["aligned"] = {{"max_abs", c.aligned.max_abs}, {"mean_abs", c.aligned.mean_abs}};
  s["aligned_by_curve"] = {{"V", {{"max_abs", c.aligned_V.max_abs}, {"mean_abs", c.aligned_V.mean_abs}}},
                           {"W", {{"max_abs", c.aligned_W.max_abs}, {"mean_abs", c.aligned_W.mean_abs}}},
                           {"U", {{"max_abs", c.aligned_U.max_abs}, {"mean_abs", c.aligned_U.mean_abs}}}};
  std::ostringstream csv;
  cmp::write_residuals_csv(csv, c);
  if (!a.out.empty()) {
    try {
      ensure_dir(a.out);
      write_atomic(fs::path(a.out) / "residuals.csv", csv.str());
      write_atomic(fs::path(a.out) / "compare.json", s.dump(2) + "\n");
    } catch (const Error& e) {
      err << "tblab: " << e.what() << '\n';
      return input_missing;
    }
  }
  if (a.format == "csv")
    out << csv.str();
  else
    out << s.dump(2) << '\n';
  return ok;
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"tblab: Threshold Bipolar startup laboratory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SimulateArgs sim_args;
  std::uint64_t seed = 0;
  double gamma = 0, r = 0, beta = 0, tau_off = 0, w_star = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "run the swarm simulator");
  sim_cmd->add_option("--config", sim_args.config, "JSON config (defaults if omitted)");
  sim_cmd->add_option("--out", sim_args.out, "output directory")->required();
  auto* o_seed = sim_cmd->add_option("--seed", seed, "RNG seed override");
  auto* o_gamma = sim_cmd->add_option("--gamma", gamma, "gamma_p override");
  auto* o_r = sim_cmd->add_option("--r", r, "playback rate override");
  auto* o_beta = sim_cmd->add_option("--beta", beta, "tb.beta override");
  auto* o_tau = sim_cmd->add_option("--tau-off", tau_off, "tb.tau_off override");
  auto* o_w = sim_cmd->add_option("--w-star", w_star, "tb.w_star override");

  PredictArgs pred_args;
  auto* pred_cmd = app.add_subcommand("predict", "evaluate the piecewise-line model");
  add_model_flags(pred_cmd, pred_args.model, true);
  pred_cmd->add_option("--r", pred_args.model.r, "playback rate (1 = normalized)")->capture_default_str();
  pred_cmd->add_option("--duration", pred_args.duration, "end time of the CSV [s]")->capture_default_str();
  pred_cmd->add_option("--step", pred_args.step, "CSV sampling step [s]")->capture_default_str();
  pred_cmd->add_option("--out", pred_args.out, "write prediction.csv and prediction.json here");
  pred_cmd->add_option("--format", pred_args.format, "stdout format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();

  AnalyzeArgs an_args;
  double an_r = 0;
  auto* an_cmd = app.add_subcommand("analyze", "estimate TB parameters from traces");
  an_cmd->add_option("traces", an_args.pattern, "trace glob, e.g. 'run/peer-*.jsonl'")->required();
  an_cmd->add_option("--out", an_args.out, "output directory for reports, estimates.csv and histograms");
  auto* o_an_r = an_cmd->add_option("--r", an_r, "playback rate (inferred from service heads if omitted)");
  an_cmd->add_option("--bin-width", an_args.bin_width, "histogram bin width")->capture_default_str();
  an_cmd->add_option("--tau-off-correction", an_args.opt.tau_off_correction, "seconds added to tau_off estimates")->capture_default_str();
  an_cmd->add_option("--host-fill-threshold", an_args.opt.host_fill_threshold, "max initial fill of a host [chunks]")->capture_default_str();

  CompareArgs cmp_args;
  auto* cmp_cmd = app.add_subcommand("compare", "residuals between a host trace and the model");
  cmp_cmd->add_option("trace", cmp_args.trace, "host trace (JSONL)")->required();
  add_model_flags(cmp_cmd, cmp_args.model, true);
  auto* o_cmp_r = cmp_cmd->add_option("--r", cmp_args.model.r, "playback rate (inferred if omitted)");
  cmp_cmd->add_option("--window", cmp_args.window, "time alignment window [s]")->capture_default_str();
  cmp_cmd->add_option("--out", cmp_args.out, "write residuals.csv and compare.json here");
  cmp_cmd->add_option("--format", cmp_args.format, "stdout format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::CallForVersion& e) {
    out << kVersion << '\n';
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "tblab: " << e.what() << '\n';
    return validation;
  }

  if (*sim_cmd) {
    if (*o_seed) sim_args.seed = seed;
    if (*o_gamma) sim_args.gamma = gamma;
    if (*o_r) sim_args.r = r;
    if (*o_beta) sim_args.beta = beta;
    if (*o_tau) sim_args.tau_off = tau_off;
    if (*o_w) sim_args.w_star = w_star;
    return cmd_simulate(sim_args, out, err);
  }
  if (*pred_cmd) return cmd_predict(pred_args, out, err);
  if (*an_cmd) {
    if (*o_an_r) an_args.r = an_r;
    return cmd_analyze(an_args, out, err);
  }
  if (*cmp_cmd) {
    cmp_args.r_given = static_cast<bool>(*o_cmp_r);
    return cmd_compare(cmp_args, out, err);
  }
  return validation;
}

}  // namespace tblab::cli
