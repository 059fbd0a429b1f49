#pragma once

// Threshold Bipolar chunk fetching.
//
// While the host's playable video V is at or below the threshold C_sch it
// fetches the lowest chunk it is missing that some neighbor advertises. Above
// the threshold it fetches the highest such chunk, and additionally asks the
// tracker for its head s whenever s lies beyond the host's bitmap.
//
// Everything here is a pure function of (host state, neighbor snapshot); the
// simulator owns request parallelism, rejection and latency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tblab/buffer.hpp"
#include "tblab/error.hpp"

namespace tblab {

struct TBParams {
  double beta = 90.0;     // turnover factor, C_sch / r
  double tau_off = 70.0;  // offset setup time [s]
  double w_star = 210.0;  // saturated width [s of content]
  ChunkId theta{};        // initial offset, set at join

  void validate() const {
    if (!(beta > 0)) throw Error(Errc::invalid_argument, "beta must be positive");
    if (!(tau_off > 0)) throw Error(Errc::invalid_argument, "tau_off must be positive");
    if (!(w_star > beta)) throw Error(Errc::invalid_argument, "w_star must exceed beta");
  }
};

inline std::int64_t threshold_chunks(double beta, double r) {
  return std::max<std::int64_t>(1, std::llround(beta * r));
}

struct HostState {
  BufferMessage bm;
  std::int64_t threshold_chunks = 1;  // C_sch
  bool draining = false;
  double up_time = 0.0;  // t_h
  double tau_off = 0.0;
  ChunkId theta{};
  std::int64_t downloaded = 0;
  std::int64_t misses = 0;      // head chunks missing when played
  std::optional<ChunkId> first_miss;
  std::int64_t duplicates = 0;  // completions of chunks already held
  std::int64_t wasted = 0;      // completions that arrived below the offset

  double offset_time() const noexcept { return up_time + tau_off; }
};

inline HostState make_host(const TBParams& tb, double r, double up_time, std::size_t max_width = kDefaultMaxWidth) {
  tb.validate();
  HostState h;
  h.bm = BufferMessage(tb.theta, max_width);
  h.threshold_chunks = threshold_chunks(tb.beta, r);
  h.up_time = up_time;
  h.tau_off = tb.tau_off;
  h.theta = tb.theta;
  return h;
}

// Union of what a set of neighbors advertises, in absolute chunk IDs.
class Availability {
 public:
  Availability() = default;

  explicit Availability(std::span<const BufferMessage> neighbors) {
    bool first = true;
    for (const auto& n : neighbors) {
      if (n.empty()) continue;
      if (first || n.offset() < base_) base_ = n.offset();
      if (first || n.end() > end_) end_ = n.end();
      first = false;
    }
    if (first) return;
    present_.assign(static_cast<std::size_t>(end_ - base_), false);
    for (const auto& n : neighbors)
      for (std::size_t i = 0; i < n.size(); ++i)
        if (n.bit(i)) present_[static_cast<std::size_t>(n.offset() - base_) + i] = true;
  }

  bool contains(ChunkId x) const noexcept {
    if (present_.empty() || x < base_ || x >= end_) return false;
    return present_[static_cast<std::size_t>(x - base_)];
  }

  ChunkId base() const noexcept { return base_; }
  ChunkId end() const noexcept { return end_; }
  bool empty() const noexcept { return present_.empty(); }

 private:
  ChunkId base_{};
  ChunkId end_{};
  std::vector<bool> present_;
};

// Chunks at or above the host offset that the host lacks and at least one
// neighbor holds. Kept sorted ascending.
struct CandidateSet {
  std::vector<ChunkId> ids;

  bool empty() const noexcept { return ids.empty(); }
  std::size_t size() const noexcept { return ids.size(); }
  ChunkId min() const { return ids.front(); }
  ChunkId max() const { return ids.back(); }
  bool contains(ChunkId x) const { return std::binary_search(ids.begin(), ids.end(), x); }
};

inline CandidateSet candidate_set(const HostState& host, const Availability& avail) {
  CandidateSet c;
  if (avail.empty()) return c;
  ChunkId lo = std::max(host.bm.offset(), avail.base());
  for (ChunkId x = lo; x < avail.end(); ++x)
    if (avail.contains(x) && !host.bm.holds(x)) c.ids.push_back(x);
  return c;
}

inline CandidateSet candidate_set(const HostState& host, std::span<const BufferMessage> neighbors) {
  return candidate_set(host, Availability(neighbors));
}

enum class Mode { low, high };
enum class FetchKind { low, high, tracker };

inline std::string_view to_string(FetchKind k) {
  switch (k) {
    case FetchKind::low: return "fetch_low";
    case FetchKind::high: return "fetch_high";
    case FetchKind::tracker: return "fetch_tracker";
  }
  return "?";
}

struct Fetch {
  FetchKind kind;
  ChunkId id;
  friend bool operator==(const Fetch&, const Fetch&) = default;
};

// One scheduler invocation. No fetches means Idle. In high mode the neighbor
// fetch (if any) comes first, then the tracker fetch.
struct Decision {
  Mode mode = Mode::low;
  std::vector<Fetch> fetches;

  bool idle() const noexcept { return fetches.empty(); }
};

inline Decision next_request(const HostState& host, const CandidateSet& candidates, std::optional<ChunkId> service_head) {
  Decision d;
  if (host.bm.playable() <= host.threshold_chunks) {
    d.mode = Mode::low;
    // The stored prefix below f+V is contiguous, so min X_h >= f+V.
    if (!candidates.empty()) d.fetches.push_back({FetchKind::low, candidates.min()});
    return d;
  }
  d.mode = Mode::high;
  if (!candidates.empty()) d.fetches.push_back({FetchKind::high, candidates.max()});
  if (service_head && *service_head > host.bm.end()) {
    if (d.fetches.empty() || d.fetches.front().id != *service_head)
      d.fetches.push_back({FetchKind::tracker, *service_head});
  }
  return d;
}

// In-place completion of a fetch for id.
inline void apply_fetch(HostState& host, ChunkId id) {
  if (id < host.bm.offset()) {
    ++host.wasted;
    return;
  }
  if (host.bm.write(id))
    ++host.downloaded;
  else
    ++host.duplicates;
}

inline HostState on_fetch_complete(HostState host, ChunkId id) {
  apply_fetch(host, id);
  return host;
}

// Advances the offset to theta + round(r * (now - t_off)) once now >= t_off,
// counting every missing head chunk as a playback miss.
inline void apply_drain(HostState& host, double now, double r) {
  constexpr double eps = 1e-9;
  double since = now - host.offset_time();
  if (since < -eps) return;
  host.draining = true;
  ChunkId target = host.theta + static_cast<std::uint64_t>(std::llround(r * std::max(0.0, since)));
  while (host.bm.offset() < target) {
    ChunkId head = host.bm.offset();
    if (!host.bm.drop_head()) {
      ++host.misses;
      if (!host.first_miss) host.first_miss = head;
    }
  }
}

inline HostState drain_tick(HostState host, double now, double r) {
  apply_drain(host, now, r);
  return host;
}

}  // namespace tblab
