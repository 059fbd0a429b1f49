#pragma once

// Recover TB design parameters from buffer-message traces: offset setup time,
// turnover factor, host download rate, saturation statistics and the rate
// group. Every estimate is a Result; a trace that cannot support an estimate
// yields a Failure with a reason, never a number.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tblab/analytic.hpp"
#include "tblab/error.hpp"
#include "tblab/trace.hpp"

namespace tblab::est {

struct Options {
  double jump_factor = 3.0;          // jump: growth beyond download growth > factor * r * dt
  double slope_ratio = 0.5;          // dV/dt turn: right slope below ratio * left slope
  double sat_tolerance = 5.0;        // chunks
  double sat_min_duration = 300.0;   // seconds
  double host_fill_threshold = 100;  // initial fill screening [chunks]
  double tau_off_correction = 0.0;   // added to tau_off estimates (T_ad - T_theta for crawler traces)
};

enum class TauOffMethod { aa, li };
enum class BetaMethod { width_jump, dv_turn, flat_mean, pv_jump };
enum class RateMethod { e2e, seg };

inline constexpr BetaMethod kBetaMethods[] = {BetaMethod::width_jump, BetaMethod::dv_turn, BetaMethod::flat_mean, BetaMethod::pv_jump};

inline std::string_view to_string(TauOffMethod m) { return m == TauOffMethod::aa ? "AA" : "LI"; }
inline std::string_view to_string(RateMethod m) { return m == RateMethod::e2e ? "E2E" : "Seg"; }
inline std::string_view to_string(BetaMethod m) {
  switch (m) {
    case BetaMethod::width_jump: return "width-jump";
    case BetaMethod::dv_turn: return "dv-turn";
    case BetaMethod::flat_mean: return "flat-mean";
    case BetaMethod::pv_jump: return "pv-jump";
  }
  return "?";
}

enum class Series { W, U, V, u, f };

inline double series_value(const ProgressSample& s, Series c) {
  switch (c) {
    case Series::W: return static_cast<double>(s.m.width);
    case Series::U: return static_cast<double>(s.m.fill);
    case Series::V: return static_cast<double>(s.m.playable);
    case Series::u: return static_cast<double>(s.u());
    case Series::f: return static_cast<double>(s.f());
  }
  return 0;
}

// Index i of the first interval (i, i+1) over which the curve jumps: its growth
// exceeds the download curve's growth by more than factor * r * dt. The
// download curve u = f + U never jumps, so smooth growth at any download rate
// stays under the threshold.
inline std::optional<std::size_t> first_jump(const Trace& tr, Series c, double r, double factor = 3.0, std::size_t from = 0) {
  for (std::size_t i = from; i + 1 < tr.size(); ++i) {
    const auto& a = tr.samples[i];
    const auto& b = tr.samples[i + 1];
    double dx = series_value(b, c) - series_value(a, c);
    double du = std::max(0.0, static_cast<double>(b.u() - a.u()));
    if (dx - du > factor * r * (b.t - a.t)) return i;
  }
  return std::nullopt;
}

namespace detail {

// Least-squares slope of V over samples [lo, hi].
inline double fit_slope(const Trace& tr, std::size_t lo, std::size_t hi, Series c) {
  double n = static_cast<double>(hi - lo + 1);
  double st = 0, sx = 0;
  for (std::size_t k = lo; k <= hi; ++k) {
    st += tr.samples[k].t;
    sx += series_value(tr.samples[k], c);
  }
  double mt = st / n, mx = sx / n;
  double num = 0, den = 0;
  for (std::size_t k = lo; k <= hi; ++k) {
    double dt = tr.samples[k].t - mt;
    num += dt * (series_value(tr.samples[k], c) - mx);
    den += dt * dt;
  }
  return den > 0 ? num / den : 0.0;
}

// First sample j at which dV/dt turns: the fit over [j-2, j] rises and the
// fit over [j, j+2] is below ratio times it.
inline std::optional<std::size_t> first_turn(const Trace& tr, double ratio) {
  for (std::size_t j = 1; j + 2 < tr.size(); ++j) {
    double left = fit_slope(tr, j >= 2 ? j - 2 : 0, j, Series::V);
    double right = fit_slope(tr, j, j + 2, Series::V);
    if (left > 0 && right < ratio * left) return j;
  }
  return std::nullopt;
}

}  // namespace detail

inline Result<double> estimate_tau_off(const Trace& tr, TauOffMethod method, double r, const Options& opt = {}) {
  using R = Result<double>;
  if (tr.size() < 2) return R::fail(Errc::insufficient_data, "need at least two samples");
  if (static_cast<double>(tr.samples.front().m.fill) >= opt.host_fill_threshold)
    return R::fail(Errc::not_a_host, "initial buffer fill " + std::to_string(tr.samples.front().m.fill) + " is above the host threshold");
  std::size_t i = 0;
  while (i + 1 < tr.size() && tr.samples[i].offset == tr.samples[i + 1].offset) ++i;
  if (i + 1 == tr.size()) return R::fail(Errc::no_drain_observed, "offset never changes");
  if (i == 0) return R::fail(Errc::left_censored, "offset already moving at the first sample pair");
  const auto& a = tr.samples[i];
  const auto& b = tr.samples[i + 1];
  double t = method == TauOffMethod::aa ? 0.5 * (a.t + b.t) : b.t - static_cast<double>(b.offset - a.offset) / r;
  return t - tr.samples.front().t + opt.tau_off_correction;
}

inline Result<double> estimate_beta(const Trace& tr, BetaMethod method, double r, const Options& opt = {}) {
  using R = Result<double>;
  if (tr.size() < 3) return R::fail(Errc::insufficient_data, "need at least three samples");
  auto v = [&](std::size_t k) { return static_cast<double>(tr.samples[k].m.playable); };
  switch (method) {
    case BetaMethod::width_jump: {
      auto i = first_jump(tr, Series::W, r, opt.jump_factor);
      if (!i) return R::fail(Errc::turnover_not_observed, "no jump in buffer width");
      // The jump happened somewhere in (t_i, t_i+1]; extend the pre-jump
      // width trend to the middle of that interval.
      const auto& a = tr.samples[*i];
      const auto& b = tr.samples[*i + 1];
      double slope = *i >= 1 ? (series_value(a, Series::W) - series_value(tr.samples[*i - 1], Series::W)) / (a.t - tr.samples[*i - 1].t) : 0.0;
      return (series_value(a, Series::W) + std::max(0.0, slope) * 0.5 * (b.t - a.t)) / r;
    }
    case BetaMethod::dv_turn: {
      auto j = detail::first_turn(tr, opt.slope_ratio);
      if (!j) return R::fail(Errc::turnover_not_observed, "playable video never turns");
      return v(*j + 1) / r;
    }
    case BetaMethod::flat_mean: {
      auto j = detail::first_turn(tr, opt.slope_ratio);
      if (!j) return R::fail(Errc::turnover_not_observed, "playable video never turns");
      std::size_t lo = *j + 1;
      auto jump = first_jump(tr, Series::V, r, opt.jump_factor, lo);
      std::size_t hi = jump ? *jump : tr.size() - 1;
      if (hi < lo) return R::fail(Errc::turnover_not_observed, "no flat playable segment");
      double sum = 0;
      for (std::size_t k = lo; k <= hi; ++k) sum += v(k);
      return sum / static_cast<double>(hi - lo + 1) / r;
    }
    case BetaMethod::pv_jump: {
      auto i = first_jump(tr, Series::V, r, opt.jump_factor);
      if (!i) return R::fail(Errc::turnover_not_observed, "no jump in playable video");
      return v(*i) / r;
    }
  }
  return R::fail(Errc::invalid_argument, "unknown method");
}

// Index of the last sample before the buffer converges (the playable-video
// jump), or the last sample if no convergence is visible.
inline std::size_t last_before_saturation(const Trace& tr, double r, const Options& opt = {}) {
  if (tr.empty()) return 0;
  auto i = first_jump(tr, Series::V, r, opt.jump_factor);
  return i ? *i : tr.size() - 1;
}

inline Result<double> estimate_rate(const Trace& tr, RateMethod method, double r, const Options& opt = {}) {
  using R = Result<double>;
  if (tr.size() < 2) return R::fail(Errc::insufficient_data, "need at least two samples");
  std::size_t last = last_before_saturation(tr, r, opt);
  if (last < 1) return R::fail(Errc::insufficient_data, "fewer than two pre-saturation samples");
  const auto& s = tr.samples;
  if (method == RateMethod::e2e)
    return static_cast<double>(s[last].u() - s[0].u()) / (s[last].t - s[0].t) / r;
  double sum = 0;
  for (std::size_t k = 0; k < last; ++k) sum += static_cast<double>(s[k + 1].u() - s[k].u()) / (s[k + 1].t - s[k].t);
  return sum / static_cast<double>(last) / r;
}

struct MeanStd {
  double mean = 0;
  double std = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(xs.size()));
  return m;
}

struct SaturatedSegment {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
};

// In chunks.
struct SaturationStats {
  SaturatedSegment segment;
  MeanStd width, fill, playable;
  MeanStd offset_lag, scope_lag, download_lag, playable_lag;
};

// The saturated segment is the longest suffix whose widths all stay within
// sat_tolerance of the mean width over the final sat_min_duration seconds.
inline Result<SaturationStats> saturation_stats(const Trace& tr, const Options& opt = {}) {
  using R = Result<SaturationStats>;
  if (tr.size() < 2) return R::fail(Errc::not_saturated, "trace too short");
  const auto& s = tr.samples;
  double t_last = s.back().t;
  if (t_last - s.front().t < opt.sat_min_duration) return R::fail(Errc::not_saturated, "trace shorter than the minimum saturated duration");
  std::vector<double> tail;
  for (const auto& x : s)
    if (x.t >= t_last - opt.sat_min_duration - 1e-9) tail.push_back(static_cast<double>(x.m.width));
  double ref = mean_std(tail).mean;
  std::size_t start = s.size();
  while (start > 0 && std::abs(static_cast<double>(s[start - 1].m.width) - ref) <= opt.sat_tolerance) --start;
  if (start == s.size() || t_last - s[start].t < opt.sat_min_duration - 1e-9)
    return R::fail(Errc::not_saturated, "width not stable for the minimum duration");

  SaturationStats st;
  st.segment = {start, s.size() - 1};
  std::vector<double> w, u, v, lo, ls, ld, lp;
  for (std::size_t k = start; k < s.size(); ++k) {
    w.push_back(static_cast<double>(s[k].m.width));
    u.push_back(static_cast<double>(s[k].m.fill));
    v.push_back(static_cast<double>(s[k].m.playable));
    if (!s[k].service_head) return R::fail(Errc::insufficient_data, "saturated samples lack a service head");
    LagSet l = s[k].lags();
    lo.push_back(static_cast<double>(l.offset_lag));
    ls.push_back(static_cast<double>(l.scope_lag));
    ld.push_back(static_cast<double>(l.download_lag));
    lp.push_back(static_cast<double>(l.playable_lag));
  }
  st.width = mean_std(w);
  st.fill = mean_std(u);
  st.playable = mean_std(v);
  st.offset_lag = mean_std(lo);
  st.scope_lag = mean_std(ls);
  st.download_lag = mean_std(ld);
  st.playable_lag = mean_std(lp);
  return st;
}

// Playback rate implied by the service-head samples.
inline Result<double> infer_rate(const Trace& tr) {
  using R = Result<double>;
  if (tr.size() < 2 || !tr.samples.front().service_head || !tr.samples.back().service_head)
    return R::fail(Errc::insufficient_data, "need service heads on the first and last samples");
  const auto& a = tr.samples.front();
  const auto& b = tr.samples.back();
  double rate = static_cast<double>(*b.service_head - *a.service_head) / (b.t - a.t);
  if (!(rate > 0)) return R::fail(Errc::inconsistent_trace, "service head does not advance");
  return rate;
}

struct EstimatorReport {
  std::int64_t peer = 0;
  double r = 0;
  Result<double> tau_off_aa = Failure{Errc::insufficient_data, "not computed"};
  Result<double> tau_off_li = Failure{Errc::insufficient_data, "not computed"};
  std::vector<std::pair<BetaMethod, Result<double>>> beta_by_method;
  Result<double> gamma_e2e = Failure{Errc::insufficient_data, "not computed"};
  Result<double> gamma_seg = Failure{Errc::insufficient_data, "not computed"};
  Result<double> w_star = Failure{Errc::insufficient_data, "not computed"};  // seconds of content
  Result<double> theta = Failure{Errc::insufficient_data, "not computed"};   // seconds of content
  Result<analytic::RateGroup> group = Failure{Errc::insufficient_data, "not computed"};
  Result<SaturationStats> saturation = Failure{Errc::not_saturated, "not computed"};

  const Result<double>& beta(BetaMethod m) const {
    for (const auto& [k, v] : beta_by_method)
      if (k == m) return v;
    throw Error(Errc::invalid_argument, "method not in report");
  }
};

// Estimated model parameters in normalized units; offset lag after draining
// gives W*, and the initial offset lag W* - theta comes from the first sample.
inline Result<analytic::ModelParams> estimated_model(const EstimatorReport& rep) {
  using R = Result<analytic::ModelParams>;
  if (!rep.tau_off_li) return R::fail(rep.tau_off_li.error().code, "tau_off: " + rep.tau_off_li.error().reason);
  const Result<double>& g = rep.gamma_e2e ? rep.gamma_e2e : rep.gamma_seg;
  if (!g) return R::fail(g.error().code, "gamma: " + g.error().reason);
  std::vector<double> betas;
  for (const auto& [m, b] : rep.beta_by_method)
    if (b) betas.push_back(*b);
  if (betas.empty()) return R::fail(Errc::turnover_not_observed, "no valid beta estimate");
  std::sort(betas.begin(), betas.end());
  double beta = betas.size() % 2 ? betas[betas.size() / 2] : 0.5 * (betas[betas.size() / 2 - 1] + betas[betas.size() / 2]);
  if (!rep.w_star || !rep.theta) return R::fail(Errc::insufficient_data, "offset lag not observable");
  analytic::ModelParams p = analytic::ModelParams::normalized(*g, beta, *rep.tau_off_li, *rep.w_star, *rep.theta);
  try {
    p.validate();
  } catch (const Error& e) {
    return R::fail(Errc::inconsistent_trace, e.what());
  }
  return p;
}

inline EstimatorReport analyze(const Trace& tr, double r, const Options& opt = {}) {
  EstimatorReport rep;
  rep.peer = tr.peer;
  rep.r = r;
  rep.tau_off_aa = estimate_tau_off(tr, TauOffMethod::aa, r, opt);
  rep.tau_off_li = estimate_tau_off(tr, TauOffMethod::li, r, opt);
  for (auto m : kBetaMethods) rep.beta_by_method.emplace_back(m, estimate_beta(tr, m, r, opt));
  rep.gamma_e2e = estimate_rate(tr, RateMethod::e2e, r, opt);
  rep.gamma_seg = estimate_rate(tr, RateMethod::seg, r, opt);
  rep.saturation = saturation_stats(tr, opt);

  if (!tr.empty() && tr.samples.front().service_head && rep.tau_off_li) {
    double initial_lag = static_cast<double>(*tr.samples.front().service_head - tr.samples.front().offset) / r;
    double t_drain = tr.samples.front().t + *rep.tau_off_li - opt.tau_off_correction;
    std::vector<double> lags;
    for (const auto& s : tr.samples)
      if (s.t > t_drain + 1e-9 && s.service_head) lags.push_back(static_cast<double>(*s.service_head - s.offset) / r);
    if (!lags.empty()) {
      rep.w_star = mean_std(lags).mean;
      rep.theta = *rep.w_star - initial_lag;
    } else {
      rep.w_star = Failure{Errc::no_drain_observed, "no samples after the drain starts"};
      rep.theta = rep.w_star;
    }
  }
  auto model = estimated_model(rep);
  if (model)
    rep.group = analytic::classify(*model);
  else
    rep.group = model.error();
  return rep;
}

template <typename T>
nlohmann::ordered_json result_json(const Result<T>& r) {
  nlohmann::ordered_json j;
  j["valid"] = r.ok();
  if (r.ok()) {
    if constexpr (std::is_same_v<T, analytic::RateGroup>)
      j["value"] = std::string(analytic::to_string(*r));
    else
      j["value"] = *r;
  } else {
    j["error"] = std::string(to_string(r.error().code));
    j["reason"] = r.error().reason;
  }
  return j;
}

inline nlohmann::ordered_json to_json(const EstimatorReport& rep) {
  nlohmann::ordered_json j;
  j["peer"] = rep.peer;
  j["r"] = rep.r;
  j["tau_off"] = {{"AA", result_json(rep.tau_off_aa)}, {"LI", result_json(rep.tau_off_li)}};
  nlohmann::ordered_json beta;
  for (const auto& [m, b] : rep.beta_by_method) beta[std::string(to_string(m))] = result_json(b);
  j["beta"] = beta;
  j["gamma"] = {{"E2E", result_json(rep.gamma_e2e)}, {"Seg", result_json(rep.gamma_seg)}};
  j["w_star"] = result_json(rep.w_star);
  j["theta"] = result_json(rep.theta);
  j["group"] = result_json(rep.group);
  nlohmann::ordered_json sat;
  sat["valid"] = rep.saturation.ok();
  if (rep.saturation) {
    const auto& s = *rep.saturation;
    auto ms = [](const MeanStd& m) { return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.std}}; };
    sat["start"] = s.segment.start;
    sat["end"] = s.segment.end;
    sat["width"] = ms(s.width);
    sat["fill"] = ms(s.fill);
    sat["playable"] = ms(s.playable);
    sat["offset_lag"] = ms(s.offset_lag);
    sat["scope_lag"] = ms(s.scope_lag);
    sat["download_lag"] = ms(s.download_lag);
    sat["playable_lag"] = ms(s.playable_lag);
  } else {
    sat["error"] = std::string(to_string(rep.saturation.error().code));
    sat["reason"] = rep.saturation.error().reason;
  }
  j["saturation"] = sat;
  return j;
}

struct Histogram {
  double bin_width = 1.0;
  std::vector<std::pair<double, std::size_t>> bins;  // (lower edge, count), sorted
};

inline Histogram histogram(const std::vector<double>& xs, double bin_width) {
  if (!(bin_width > 0)) throw Error(Errc::invalid_argument, "bin width must be positive");
  Histogram h;
  h.bin_width = bin_width;
  std::vector<long long> idx;
  for (double x : xs) idx.push_back(static_cast<long long>(std::floor(x / bin_width)));
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && idx[j] == idx[i]) ++j;
    h.bins.emplace_back(static_cast<double>(idx[i]) * bin_width, j - i);
    i = j;
  }
  return h;
}

}  // namespace tblab::est
