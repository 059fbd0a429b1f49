#pragma once

// Piecewise-line model of peer progress under Threshold Bipolar fetching.
//
// Time is measured from the host's first fetch. Peer progress curves are
// absolute chunk positions relative to the model origin, where the stable
// peers' offset sits at 0 and the service curve is s(t) = r t + W*:
//
//   f(t)     = theta + r (t - tau_off)^+          offset
//   u(t)     = min(r_p t + theta, s(t))           download curve
//   c_sch(t) = f(t) + C_sch                       threshold curve
//   xi(t)    = u before tau_sch, s after          scope
//   v(t)     = u before tau_sch, c_sch until tau_cvg, s after
//
// Buffer curves are W = xi - f, U = u - f, V = v - f. All curves are
// right-continuous: at a jump instant the post-jump value is reported.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tblab/error.hpp"

namespace tblab::analytic {

struct ModelParams {
  double r = 1.0;          // playback rate [chunks/s]
  double r_p = 3.0;        // host download rate [chunks/s]
  double c_sch = 90.0;     // turnover threshold [chunks]
  double tau_off = 70.0;   // offset setup time [s]
  double theta = 70.0;     // initial offset [chunks]
  double w_star = 210.0;   // saturated width / offset lag [chunks]
  double scope_lag = 0.0;  // optional correction: scope trails s by this much

  // r = 1 design model: rates in multiples of r, sizes in seconds of content.
  static ModelParams normalized(double gamma, double beta = 90.0, double tau_off = 70.0, double w_star = 210.0,
                                std::optional<double> theta = std::nullopt) {
    ModelParams p;
    p.r = 1.0;
    p.r_p = gamma;
    p.c_sch = beta;
    p.tau_off = tau_off;
    p.w_star = w_star;
    p.theta = theta.value_or(w_star / 3.0);
    return p;
  }

  // Same model in chunk units for playback rate r.
  ModelParams scaled(double rate) const {
    ModelParams p = *this;
    p.r = r * rate;
    p.r_p = r_p * rate;
    p.c_sch = c_sch * rate;
    p.theta = theta * rate;
    p.w_star = w_star * rate;
    p.scope_lag = scope_lag * rate;
    return p;
  }

  double gamma() const noexcept { return r_p / r; }
  bool converges() const noexcept { return r_p > r; }

  // Throws Error(invalid_argument) naming the offending field. r_p <= r is
  // allowed here; it is reported as non-convergence by the time functions.
  void validate() const {
    auto bad = [](const char* field, const std::string& why) {
      throw Error(Errc::invalid_argument, std::string(field) + ": " + why);
    };
    if (!(r > 0) || !std::isfinite(r)) bad("r", "must be positive");
    if (!(r_p >= 0) || !std::isfinite(r_p)) bad("r_p", "must be non-negative");
    if (!(tau_off > 0) || !std::isfinite(tau_off)) bad("tau_off", "must be positive");
    if (!(w_star > 0) || !std::isfinite(w_star)) bad("w_star", "must be positive");
    if (!(c_sch > 0 && c_sch < w_star)) bad("c_sch", "must lie in (0, w_star)");
    if (!(theta >= 0 && theta < w_star)) bad("theta", "must lie in [0, w_star)");
    if (!(theta + c_sch < w_star)) bad("c_sch", "threshold curve must start below the service curve (theta + c_sch < w_star)");
    if (!(scope_lag >= 0)) bad("scope_lag", "must be non-negative");
  }
};

enum class RateGroup { gamma0, gamma1, gamma2 };

inline std::string_view to_string(RateGroup g) {
  switch (g) {
    case RateGroup::gamma0: return "G0";
    case RateGroup::gamma1: return "G1";
    case RateGroup::gamma2: return "G2";
  }
  return "?";
}

// First time u reaches c_sch.
inline Result<double> scheduling_turnover(const ModelParams& p) {
  if (p.c_sch <= p.r_p * p.tau_off) return p.c_sch / p.r_p;
  if (p.r_p <= p.r) return Result<double>::fail(Errc::never_reached, "download curve never reaches the threshold curve (r_p <= r)");
  return (p.c_sch - p.r * p.tau_off) / (p.r_p - p.r);
}

// First time u reaches s.
inline Result<double> convergence_time(const ModelParams& p) {
  if (!p.converges()) return Result<double>::fail(Errc::non_converging, "r_p <= r: download curve never meets the service curve");
  return (p.w_star - p.theta) / (p.r_p - p.r);
}

// Download-rate boundaries between the groups, in multiples of r:
// G0 = (1, lo], G1 = (lo, hi], G2 = (hi, inf).
inline std::pair<double, double> group_boundaries(const ModelParams& p) {
  double lo = p.c_sch / p.tau_off / p.r;
  double hi = 1.0 + (p.w_star - p.theta) / p.tau_off / p.r;
  return {lo, hi};
}

inline Result<RateGroup> classify(const ModelParams& p) {
  if (!p.converges()) return Result<RateGroup>::fail(Errc::non_converging, "r_p <= r");
  if (p.r_p <= p.c_sch / p.tau_off) return RateGroup::gamma0;
  if (p.r_p <= p.r + (p.w_star - p.theta) / p.tau_off) return RateGroup::gamma1;
  return RateGroup::gamma2;
}

struct ProgressPoint {
  double t = 0;
  double s = 0;
  double f = 0;
  double xi = 0;
  double v = 0;
  double u = 0;

  double W() const { return xi - f; }
  double U() const { return u - f; }
  double V() const { return v - f; }
};

namespace detail {

inline ProgressPoint evaluate(const ModelParams& p, double t, bool left) {
  if (!(t >= 0)) throw Error(Errc::invalid_argument, "t must be non-negative");
  constexpr double inf = std::numeric_limits<double>::infinity();
  double t_sch = scheduling_turnover(p).value_or(inf);
  double t_cvg = convergence_time(p).value_or(inf);
  auto after = [&](double at) { return left ? t > at : t >= at; };

  ProgressPoint x;
  x.t = t;
  x.s = p.r * t + p.w_star;
  x.f = p.theta + p.r * std::max(0.0, t - p.tau_off);
  // Past t_cvg the linear download curve would overshoot s; it rides s instead.
  // A starving host (r_p < r) cannot hold fewer than zero chunks.
  x.u = std::max(std::min(p.r_p * t + p.theta, x.s), x.f);
  if (after(t_cvg)) x.u = x.s;
  if (after(t_sch)) {
    x.xi = std::max(x.u, x.s - p.scope_lag);
    x.v = after(t_cvg) ? x.s : std::min(x.f + p.c_sch, x.u);
  } else {
    x.xi = x.u;
    x.v = x.u;
  }
  x.v = std::min(x.v, x.xi);
  return x;
}

}  // namespace detail

inline ProgressPoint predict(const ModelParams& p, double t) { return detail::evaluate(p, t, false); }

// Left limit at t; differs from predict() only at jump instants.
inline ProgressPoint predict_left(const ModelParams& p, double t) {
  return t <= 0 ? detail::evaluate(p, 0, false) : detail::evaluate(p, t, true);
}

struct Segment {
  double t_start = 0;
  double t_end = 0;  // +inf for the final segment
  double slope = 0;
  double value_at_start = 0;
  double jump_at_end = 0;
};

enum class Curve { f, xi, v, u, W, U, V };
inline constexpr Curve kAllCurves[] = {Curve::f, Curve::xi, Curve::v, Curve::u, Curve::W, Curve::U, Curve::V};

inline std::string_view to_string(Curve c) {
  switch (c) {
    case Curve::f: return "f";
    case Curve::xi: return "xi";
    case Curve::v: return "v";
    case Curve::u: return "u";
    case Curve::W: return "W";
    case Curve::U: return "U";
    case Curve::V: return "V";
  }
  return "?";
}

inline double value_of(const ProgressPoint& x, Curve c) {
  switch (c) {
    case Curve::f: return x.f;
    case Curve::xi: return x.xi;
    case Curve::v: return x.v;
    case Curve::u: return x.u;
    case Curve::W: return x.W();
    case Curve::U: return x.U();
    case Curve::V: return x.V();
  }
  return 0;
}

struct PiecewiseProgress {
  std::optional<double> tau_sch;  // empty if never reached
  std::optional<double> tau_cvg;  // empty if non-converging
  double tau_off = 0;
  std::vector<double> breakpoints;  // sorted, starting at 0
  std::vector<std::pair<Curve, std::vector<Segment>>> curves;

  const std::vector<Segment>& segments(Curve c) const {
    for (const auto& [k, s] : curves)
      if (k == c) return s;
    throw Error(Errc::invalid_argument, "unknown curve");
  }
};

// Every time at which some curve may change slope or jump.
inline std::vector<double> breakpoints(const ModelParams& p) {
  std::vector<double> b{0.0, p.tau_off};
  auto sch = scheduling_turnover(p);
  auto cvg = convergence_time(p);
  if (sch) b.push_back(*sch);
  if (cvg) b.push_back(*cvg);
  if (p.r_p < p.r) {
    // Starving host: u meets f, and once past turnover c_sch meets u.
    b.push_back(p.r * p.tau_off / (p.r - p.r_p));
    if (sch) b.push_back((p.c_sch - p.r * p.tau_off) / (p.r_p - p.r));
  }
  std::erase_if(b, [](double t) { return !(t >= 0) || !std::isfinite(t); });
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end(), [](double a, double c) { return std::abs(a - c) <= 1e-12 * std::max(1.0, std::abs(a)); }), b.end());
  return b;
}

inline PiecewiseProgress piecewise_table(const ModelParams& p) {
  p.validate();
  PiecewiseProgress out;
  if (auto s = scheduling_turnover(p)) out.tau_sch = *s;
  if (auto c = convergence_time(p)) out.tau_cvg = *c;
  out.tau_off = p.tau_off;
  out.breakpoints = breakpoints(p);

  const double rates[] = {0.0, p.r, p.r_p, p.r_p - p.r, -p.r, p.r - p.r_p};
  auto snap = [&](double slope) {
    for (double k : rates)
      if (std::abs(slope - k) <= 1e-9 * std::max(1.0, std::abs(k))) return k;
    return slope;
  };

  const auto& b = out.breakpoints;
  for (Curve c : kAllCurves) {
    std::vector<Segment> segs;
    for (std::size_t i = 0; i < b.size(); ++i) {
      Segment s;
      s.t_start = b[i];
      s.t_end = i + 1 < b.size() ? b[i + 1] : std::numeric_limits<double>::infinity();
      double probe = std::isfinite(s.t_end) ? 0.5 * (s.t_start + s.t_end) : s.t_start + 1.0;
      s.value_at_start = value_of(predict(p, s.t_start), c);
      s.slope = snap((value_of(predict(p, probe), c) - s.value_at_start) / (probe - s.t_start));
      if (std::isfinite(s.t_end)) {
        double jump = value_of(predict(p, s.t_end), c) - value_of(predict_left(p, s.t_end), c);
        s.jump_at_end = std::abs(jump) <= 1e-9 * std::max(1.0, std::abs(s.value_at_start)) ? 0.0 : jump;
      }
      if (!segs.empty() && segs.back().slope == s.slope && segs.back().jump_at_end == 0.0) {
        segs.back().t_end = s.t_end;
        segs.back().jump_at_end = s.jump_at_end;
      } else {
        segs.push_back(s);
      }
    }
    out.curves.emplace_back(c, std::move(segs));
  }
  return out;
}

// Minimal average download rate (in multiples of r) to fetch the first B
// chunks before the last of them expires at tau_off + B.
inline double min_download_rate(double B, double tau_off) {
  if (!(B >= 0)) throw Error(Errc::invalid_argument, "B must be non-negative");
  if (!(tau_off > 0)) throw Error(Errc::invalid_argument, "tau_off must be positive");
  return B / (tau_off + B);
}

struct BetaBounds {
  double lower = 0;
  double upper = 0;
};

// lower: beta >= W* - tracker buffer duration (threshold curve at or above
// the tracker offset). upper: beta < V* - alpha sigma_V - tau_off (turnover
// below the neighbors' playable video with high probability).
inline Result<BetaBounds> beta_bounds(double w_star, double tracker_duration, double v_star, double sigma_v, double alpha,
                                      double tau_off) {
  for (double x : {w_star, tracker_duration, v_star, sigma_v, alpha, tau_off})
    if (!(x > 0)) throw Error(Errc::invalid_argument, "beta_bounds arguments must be positive");
  BetaBounds b{w_star - tracker_duration, v_star - alpha * sigma_v - tau_off};
  if (b.lower > b.upper)
    return Result<BetaBounds>::fail(Errc::infeasible_design,
                                    "lower bound " + std::to_string(b.lower) + " exceeds upper bound " + std::to_string(b.upper));
  return b;
}

// Initial offset that lets the drained offset meet the stable peers' offset
// curve exactly at tau_off, with tau_off = W*/3.
inline double initial_offset_rule(double w_star) {
  if (!(w_star > 0)) throw Error(Errc::invalid_argument, "w_star must be positive");
  return w_star / 3.0;
}

inline void write_prediction_csv(std::ostream& os, const ModelParams& p, double t_end, double step = 1.0) {
  if (!(step > 0)) throw Error(Errc::invalid_argument, "step must be positive");
  os << "t,f,xi,v,u,W,U,V\n";
  os << std::setprecision(10);
  auto n = static_cast<long long>(std::floor(t_end / step + 1e-9));
  for (long long k = 0; k <= n; ++k) {
    double t = static_cast<double>(k) * step;
    auto x = predict(p, t);
    os << t << ',' << x.f << ',' << x.xi << ',' << x.v << ',' << x.u << ',' << x.W() << ',' << x.U() << ',' << x.V() << '\n';
  }
}

}  // namespace tblab::analytic
