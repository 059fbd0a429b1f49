#pragma once

// Residuals between a simulated or measured host trace and the piecewise-line
// prediction. Trace times are taken relative to the first sample.
//
// Besides the plain residual at each sample time, an aligned residual is
// reported: the distance from the observed value to the range the model
// covers within +-window seconds. A sample that lands within one slot of a
// jump can then match either side of it.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "tblab/analytic.hpp"
#include "tblab/error.hpp"
#include "tblab/estimators.hpp"
#include "tblab/trace.hpp"

namespace tblab::cmp {

struct SampleResidual {
  double t = 0;  // relative to the first sample
  double V = 0, W = 0, U = 0;  // observed buffer curves
  double model_V = 0, model_W = 0, model_U = 0;
  double dV = 0, dW = 0, dU = 0;                       // observed - model(t)
  double aligned_V = 0, aligned_W = 0, aligned_U = 0;  // distance to model range over the window
};

struct Summary {
  double max_abs = 0;
  double mean_abs = 0;
};

struct Comparison {
  std::vector<SampleResidual> samples;
  Summary plain, aligned;  // over all of V, W, U
  Summary aligned_V, aligned_W, aligned_U;
};

// Range of curve c over [a, b], including one-sided limits at breakpoints.
inline std::pair<double, double> model_range(const analytic::ModelParams& p, const std::vector<double>& breaks, analytic::Curve c,
                                             double a, double b) {
  a = std::max(0.0, a);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  auto take = [&](double x) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  };
  take(analytic::value_of(analytic::predict(p, a), c));
  take(analytic::value_of(analytic::predict_left(p, b), c));
  take(analytic::value_of(analytic::predict(p, b), c));
  for (double t : breaks) {
    if (t > a && t <= b) {
      take(analytic::value_of(analytic::predict_left(p, t), c));
      take(analytic::value_of(analytic::predict(p, t), c));
    }
  }
  return {lo, hi};
}

inline double distance_to(std::pair<double, double> range, double x) {
  if (x < range.first) return range.first - x;
  if (x > range.second) return x - range.second;
  return 0.0;
}

// p must be in chunk units of the trace (see ModelParams::scaled).
inline Comparison compare(const Trace& tr, const analytic::ModelParams& p, double window) {
  if (tr.empty()) throw Error(Errc::insufficient_data, "empty trace");
  p.validate();
  auto breaks = analytic::breakpoints(p);
  Comparison out;
  double t0 = tr.samples.front().t;
  double sum_plain = 0, sum_aligned = 0;
  double sum_v = 0, sum_w = 0, sum_u = 0;
  for (const auto& s : tr.samples) {
    SampleResidual r;
    r.t = s.t - t0;
    r.V = static_cast<double>(s.m.playable);
    r.W = static_cast<double>(s.m.width);
    r.U = static_cast<double>(s.m.fill);
    auto x = analytic::predict(p, r.t);
    r.model_V = x.V();
    r.model_W = x.W();
    r.model_U = x.U();
    r.dV = r.V - r.model_V;
    r.dW = r.W - r.model_W;
    r.dU = r.U - r.model_U;
    r.aligned_V = distance_to(model_range(p, breaks, analytic::Curve::V, r.t - window, r.t + window), r.V);
    r.aligned_W = distance_to(model_range(p, breaks, analytic::Curve::W, r.t - window, r.t + window), r.W);
    r.aligned_U = distance_to(model_range(p, breaks, analytic::Curve::U, r.t - window, r.t + window), r.U);

    for (double d : {std::abs(r.dV), std::abs(r.dW), std::abs(r.dU)}) {
      out.plain.max_abs = std::max(out.plain.max_abs, d);
      sum_plain += d;
    }
    for (double d : {r.aligned_V, r.aligned_W, r.aligned_U}) {
      out.aligned.max_abs = std::max(out.aligned.max_abs, d);
      sum_aligned += d;
    }
    out.aligned_V.max_abs = std::max(out.aligned_V.max_abs, r.aligned_V);
    out.aligned_W.max_abs = std::max(out.aligned_W.max_abs, r.aligned_W);
    out.aligned_U.max_abs = std::max(out.aligned_U.max_abs, r.aligned_U);
    sum_v += r.aligned_V;
    sum_w += r.aligned_W;
    sum_u += r.aligned_U;
    out.samples.push_back(r);
  }
  double n = static_cast<double>(tr.size());
  out.plain.mean_abs = sum_plain / (3 * n);
  out.aligned.mean_abs = sum_aligned / (3 * n);
  out.aligned_V.mean_abs = sum_v / n;
  out.aligned_W.mean_abs = sum_w / n;
  out.aligned_U.mean_abs = sum_u / n;
  return out;
}

// Model parameters for a host trace: the caller's normalized parameters scaled
// by r, with theta taken from the trace's initial offset lag when available.
inline analytic::ModelParams params_for_trace(const Trace& tr, double r, double gamma, double beta, double tau_off, double w_star) {
  auto p = analytic::ModelParams::normalized(gamma, beta, tau_off, w_star);
  if (!tr.empty() && tr.samples.front().service_head) {
    double lag = static_cast<double>(*tr.samples.front().service_head - tr.samples.front().offset) / r;
    p.theta = w_star - lag;
  }
  return p.scaled(r);
}

inline void write_residuals_csv(std::ostream& os, const Comparison& c) {
  os << "t,V,W,U,model_V,model_W,model_U,dV,dW,dU,aligned_V,aligned_W,aligned_U\n";
  for (const auto& r : c.samples)
    os << r.t << ',' << r.V << ',' << r.W << ',' << r.U << ',' << r.model_V << ',' << r.model_W << ',' << r.model_U << ',' << r.dV << ','
       << r.dW << ',' << r.dU << ',' << r.aligned_V << ',' << r.aligned_W << ',' << r.aligned_U << '\n';
}

}  // namespace tblab::cmp
