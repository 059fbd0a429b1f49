#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace tblab {

enum class Errc {
  out_of_range,        // chunk below buffer head
  capacity_exceeded,   // bitmap would exceed configured max width
  malformed,           // unparsable or ill-formed input
  inconsistent_trace,  // e.g. service head below offset
  invalid_argument,
  never_reached,       // threshold curve never met
  non_converging,      // r_p <= r
  infeasible_design,
  join_too_early,
  no_drain_observed,
  left_censored,
  turnover_not_observed,
  insufficient_data,
  not_saturated,
  not_a_host,
};

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::out_of_range: return "out-of-range";
    case Errc::capacity_exceeded: return "capacity-exceeded";
    case Errc::malformed: return "malformed";
    case Errc::inconsistent_trace: return "inconsistent-trace";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::never_reached: return "never-reached";
    case Errc::non_converging: return "non-converging";
    case Errc::infeasible_design: return "infeasible-design";
    case Errc::join_too_early: return "join-too-early";
    case Errc::no_drain_observed: return "no-drain-observed";
    case Errc::left_censored: return "left-censored";
    case Errc::turnover_not_observed: return "turnover-not-observed";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::not_saturated: return "not-saturated";
    case Errc::not_a_host: return "not-a-host";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct Failure {
  Errc code;
  std::string reason;
};

// Either a value or a Failure. Domain outcomes (non-convergence, estimator
// misses) travel through this; contract violations throw Error.
template <typename T>
class Result {
 public:
  Result(T value) : v_(std::move(value)) {}
  Result(Failure f) : v_(std::move(f)) {}

  static Result fail(Errc code, std::string reason) { return Result(Failure{code, std::move(reason)}); }

  bool ok() const noexcept { return std::holds_alternative<T>(v_); }
  explicit operator bool() const noexcept { return ok(); }

  const T& value() const {
    if (!ok()) throw Error(error().code, error().reason);
    return std::get<T>(v_);
  }
  const T& operator*() const { return value(); }
  const T* operator->() const { return &value(); }

  T value_or(T fallback) const { return ok() ? std::get<T>(v_) : fallback; }

  const Failure& error() const { return std::get<Failure>(v_); }

 private:
  std::variant<T, Failure> v_;
};

}  // namespace tblab
