#pragma once

// Slotted simulator of a live-streaming swarm around one joining host.
//
// The tracker injects chunks at rate r and buffers the last 120 s of content.
// Stable peers are synthesized from the service curve: each holds exactly
// [s(t) - W* r, s(t) - scope_lag]. The host joins with offset lag W* and
// headroom W*/3, then runs the TB scheduler against fresh neighbor snapshots
// every slot. A chunk that has left every stable peer's window can no longer
// be fetched.
//
// Per slot: advance tracker, rebuild neighbor snapshots, issue the host's
// request budget, drain, and sample every report_interval.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tblab/analytic.hpp"
#include "tblab/buffer.hpp"
#include "tblab/error.hpp"
#include "tblab/scheduler.hpp"
#include "tblab/trace.hpp"

namespace tblab::sim {

inline constexpr double kTrackerSeconds = 120.0;

struct SwarmConfig {
  double r = 10.0;        // playback rate [chunks/s]
  double gamma_p = 3.0;   // host download rate in multiples of r
  TBParams tb{};
  int n_stable = 8;
  std::int64_t scope_lag = 1;  // stable peers' scope trails s by this many chunks
  double reject_prob = 0.0;
  double report_interval = 5.0;
  double slot = 0.1;
  double duration = 300.0;
  std::uint64_t seed = 1;
  double rtt = 0.0;         // fetch completion delay [s]; 0 = same slot
  double preroll = 0.0;     // host joins at this time
  double stream_age = 600.0;  // content already injected when the run starts [s]
  std::size_t max_width = kDefaultMaxWidth;
  bool log_decisions = false;

  double r_p() const { return gamma_p * r; }

  // Throws Error(invalid_argument) whose message starts with the field name.
  void validate() const {
    auto bad = [](const std::string& field, const std::string& why) { throw Error(Errc::invalid_argument, field + ": " + why); };
    if (!(r > 0) || !std::isfinite(r)) bad("r", "must be positive");
    if (!(gamma_p >= 0) || !std::isfinite(gamma_p)) bad("gamma_p", "must be non-negative");
    if (!(tb.beta > 0)) bad("tb.beta", "must be positive");
    if (!(tb.tau_off > 0)) bad("tb.tau_off", "must be positive");
    if (!(tb.w_star > tb.beta)) bad("tb.w_star", "must exceed tb.beta");
    if (n_stable < 0) bad("n_stable", "must be non-negative");
    if (scope_lag < 0) bad("scope_lag", "must be non-negative");
    if (!(reject_prob >= 0 && reject_prob < 1)) bad("reject_prob", "must lie in [0, 1)");
    if (!(slot > 0)) bad("slot", "must be positive");
    if (!(report_interval >= slot)) bad("report_interval", "must be at least one slot");
    if (!(duration > 0)) bad("duration", "must be positive");
    if (!(rtt >= 0)) bad("rtt", "must be non-negative");
    if (!(preroll >= 0)) bad("preroll", "must be non-negative");
    if (!(stream_age >= std::max(tb.w_star, kTrackerSeconds))) bad("stream_age", "stream must be at least max(w_star, 120) seconds old");
    if (std::llround(tb.w_star * r) + 1 >= static_cast<long long>(max_width)) bad("max_width", "too small for w_star * r");
    if (static_cast<std::int64_t>(std::llround(tb.w_star * r)) <= scope_lag) bad("scope_lag", "must be below w_star * r");
  }
};

inline nlohmann::json to_json(const SwarmConfig& c) {
  return nlohmann::json{
      {"r", c.r},
      {"gamma_p", c.gamma_p},
      {"tb", {{"beta", c.tb.beta}, {"tau_off", c.tb.tau_off}, {"w_star", c.tb.w_star}}},
      {"n_stable", c.n_stable},
      {"scope_lag", c.scope_lag},
      {"reject_prob", c.reject_prob},
      {"report_interval", c.report_interval},
      {"slot", c.slot},
      {"duration", c.duration},
      {"seed", c.seed},
      {"rtt", c.rtt},
      {"preroll", c.preroll},
      {"stream_age", c.stream_age},
      {"max_width", c.max_width},
      {"log_decisions", c.log_decisions},
  };
}

// Missing keys keep their defaults. Unknown keys and type mismatches throw
// Error(invalid_argument) naming the key; the result is validated.
inline SwarmConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::invalid_argument, "config: must be a JSON object");
  SwarmConfig c;
  auto get = [](const nlohmann::json& obj, const std::string& prefix, const std::string& key, auto& dst) {
    if (!obj.contains(key)) return;
    try {
      dst = obj.at(key).get<std::remove_reference_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::invalid_argument, prefix + key + ": wrong type");
    }
  };
  static const char* top[] = {"r", "gamma_p", "tb", "n_stable", "scope_lag", "reject_prob", "report_interval", "slot",
                              "duration", "seed", "rtt", "preroll", "stream_age", "max_width", "log_decisions"};
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* name : top) known = known || k == name;
    if (!known) throw Error(Errc::invalid_argument, k + ": unknown field");
  }
  get(j, "", "r", c.r);
  get(j, "", "gamma_p", c.gamma_p);
  if (j.contains("tb")) {
    const auto& tb = j.at("tb");
    if (!tb.is_object()) throw Error(Errc::invalid_argument, "tb: must be an object");
    for (const auto& [k, v] : tb.items())
      if (k != "beta" && k != "tau_off" && k != "w_star") throw Error(Errc::invalid_argument, "tb." + k + ": unknown field");
    get(tb, "tb.", "beta", c.tb.beta);
    get(tb, "tb.", "tau_off", c.tb.tau_off);
    get(tb, "tb.", "w_star", c.tb.w_star);
  }
  get(j, "", "n_stable", c.n_stable);
  get(j, "", "scope_lag", c.scope_lag);
  get(j, "", "reject_prob", c.reject_prob);
  get(j, "", "report_interval", c.report_interval);
  get(j, "", "slot", c.slot);
  get(j, "", "duration", c.duration);
  get(j, "", "seed", c.seed);
  get(j, "", "rtt", c.rtt);
  get(j, "", "preroll", c.preroll);
  get(j, "", "stream_age", c.stream_age);
  get(j, "", "max_width", c.max_width);
  get(j, "", "log_decisions", c.log_decisions);
  c.validate();
  return c;
}

// FNV-1a over the canonical (sorted-key) JSON of the config.
inline std::uint64_t config_hash(const SwarmConfig& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

struct TrackerState {
  ChunkId head{};           // s(t)
  std::int64_t width = 0;   // W_tk

  ChunkId offset() const { return head - static_cast<std::uint64_t>(width); }
};

inline std::int64_t tracker_width(double r) { return std::llround(kTrackerSeconds * r); }

struct Budget {
  std::int64_t requests = 0;
  double carry = 0;
};

// Quantizes a download rate into whole requests per slot, carrying the
// fractional remainder so the long-run request rate is exactly r_p.
inline Budget host_budget(double r_p, double slot, double carry) {
  if (!(r_p >= 0)) throw Error(Errc::invalid_argument, "r_p must be non-negative");
  double total = r_p * slot + carry;
  auto n = static_cast<std::int64_t>(std::floor(total + 1e-9));
  double rest = total - static_cast<double>(n);
  if (std::abs(rest) < 1e-9) rest = 0;
  return {n, rest};
}

// theta = s(t_h) - round(W* r) + round(W*/3 r): offset lag W*, headroom W*/3.
inline ChunkId choose_initial_offset(const TrackerState& tracker, const TBParams& tb, double r) {
  auto lag = static_cast<std::uint64_t>(std::llround(tb.w_star * r));
  if (tracker.head.value < lag)
    throw Error(Errc::join_too_early, "stream younger than w_star: head " + std::to_string(tracker.head.value));
  auto headroom = static_cast<std::uint64_t>(std::llround(analytic::initial_offset_rule(tb.w_star) * r));
  return tracker.head - lag + headroom;
}

// Model parameters (in chunks) matching a config, with theta = W*/3.
inline analytic::ModelParams model_params(const SwarmConfig& c) {
  auto p = analytic::ModelParams::normalized(c.gamma_p, c.tb.beta, c.tb.tau_off, c.tb.w_star);
  return p.scaled(c.r);
}

struct SlotView {
  std::int64_t slot_index = 0;
  double now = 0;
  const TrackerState& tracker;
  const HostState* host;  // null before the host joins
};

struct Observer {
  std::function<void(const SlotView&)> on_slot;
  // Called for every granted (non-rejected) fetch, before it completes.
  // source is the serving neighbor's index, or -1 for the tracker.
  std::function<void(double now, const Fetch&, int source, const TrackerState&)> on_grant;
};

struct HostSummary {
  ChunkId theta{};
  double up_time = 0;
  std::int64_t downloaded = 0;
  std::int64_t misses = 0;
  std::optional<ChunkId> first_miss;
  std::int64_t duplicates = 0;
  std::int64_t wasted = 0;
  std::int64_t requests = 0;
  std::int64_t rejected = 0;
};

struct RunResult {
  std::vector<Trace> traces;  // host first (peer 0), then stable peers 1..n
  HostSummary host;

  const Trace& host_trace() const { return traces.front(); }
};

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

inline RunResult run(const SwarmConfig& cfg, const Observer& obs = {}) {
  cfg.validate();
  constexpr double eps = 1e-9;
  std::mt19937_64 rng(cfg.seed);

  const auto slots = static_cast<std::int64_t>(std::llround(cfg.duration / cfg.slot));
  const auto report_slots = std::max<std::int64_t>(1, std::llround(cfg.report_interval / cfg.slot));
  const auto join_slot = static_cast<std::int64_t>(std::llround(cfg.preroll / cfg.slot));
  const auto rtt_slots = static_cast<std::int64_t>(std::llround(cfg.rtt / cfg.slot));
  const auto stable_lag = static_cast<std::uint64_t>(std::llround(cfg.tb.w_star * cfg.r));
  const ChunkId s0(static_cast<std::uint64_t>(std::llround(cfg.stream_age * cfg.r)));

  TrackerState tracker{s0, tracker_width(cfg.r)};
  auto advance_tracker = [&](double now) {
    tracker.head = s0 + static_cast<std::uint64_t>(std::floor(cfg.r * now + eps));
    tracker.width = tracker_width(cfg.r);
  };

  RunResult out;
  Trace host_trace;
  host_trace.peer = 0;
  std::vector<Trace> stable_traces(static_cast<std::size_t>(cfg.n_stable));
  for (int i = 0; i < cfg.n_stable; ++i) stable_traces[static_cast<std::size_t>(i)].peer = i + 1;

  std::optional<HostState> host;
  double carry = 0;
  std::multimap<std::int64_t, ChunkId> in_flight;  // completion slot -> chunk
  std::vector<BufferMessage> neighbors;

  auto stable_snapshot = [&]() {
    ChunkId lo = tracker.head - stable_lag;
    BufferMessage bm(lo, cfg.max_width);
    bm.write(tracker.head - static_cast<std::uint64_t>(cfg.scope_lag));
    for (ChunkId x = lo; x < bm.scope(); ++x) bm.write(x);
    return bm;
  };

  auto sample_all = [&](std::int64_t k, double now) {
    if (k % report_slots == 0 && !neighbors.empty()) {
      ChunkId first_offset = s0 - stable_lag;
      for (auto& tr : stable_traces) {
        const auto& bm = neighbors.front();
        tr.samples.push_back(make_sample(now, bm, (bm.offset() + static_cast<std::uint64_t>(bm.fill())) - first_offset, tracker.head));
      }
    }
    if (host && (k - join_slot) % report_slots == 0) host_trace.samples.push_back(make_sample(now, host->bm, host->downloaded, tracker.head));
  };

  auto join = [&](double now) {
    TBParams tb = cfg.tb;
    tb.theta = choose_initial_offset(tracker, cfg.tb, cfg.r);
    host = make_host(tb, cfg.r, now, cfg.max_width);
    out.host.theta = tb.theta;
    out.host.up_time = now;
  };

  auto complete = [&](ChunkId id) { apply_fetch(*host, id); };

  auto rebuild_neighbors = [&]() {
    neighbors.clear();
    if (cfg.n_stable > 0) neighbors.assign(static_cast<std::size_t>(cfg.n_stable), stable_snapshot());
  };

  // t = 0
  advance_tracker(0.0);
  rebuild_neighbors();
  if (join_slot == 0) join(0.0);
  sample_all(0, 0.0);

  for (std::int64_t k = 1; k <= slots; ++k) {
    const double now = static_cast<double>(k) * cfg.slot;
    advance_tracker(now);
    rebuild_neighbors();
    if (!host && k >= join_slot) join(now);

    if (host && k > join_slot) {
      for (auto it = in_flight.begin(); it != in_flight.end() && it->first <= k;) {
        complete(it->second);
        it = in_flight.erase(it);
      }
      Availability avail(neighbors);
      auto budget = host_budget(cfg.r_p(), cfg.slot, carry);
      carry = budget.carry;
      std::int64_t left = budget.requests;
      while (left > 0) {
        auto cands = candidate_set(*host, avail);
        if (!in_flight.empty())
          std::erase_if(cands.ids, [&](ChunkId x) {
            for (const auto& [_, id] : in_flight)
              if (id == x) return true;
            return false;
          });
        std::optional<ChunkId> head = tracker.head;
        for (const auto& [_, id] : in_flight)
          if (id == tracker.head) head.reset();
        auto d = next_request(*host, cands, head);
        if (d.idle()) break;
        for (const auto& fetch : d.fetches) {
          if (left == 0) break;
          --left;
          ++out.host.requests;
          if (cfg.log_decisions) host_trace.decisions.push_back({tidy_time(now), std::string(to_string(fetch.kind)), fetch.id.value});
          // The tracker always serves its head; a neighbor may refuse.
          bool rejected = false;
          int source = -1;
          if (fetch.kind != FetchKind::tracker) {
            std::vector<int> holders;
            for (std::size_t i = 0; i < neighbors.size(); ++i)
              if (neighbors[i].holds(fetch.id)) holders.push_back(static_cast<int>(i));
            if (!holders.empty()) source = holders[rng() % holders.size()];
            rejected = detail::unit_uniform(rng) < cfg.reject_prob;
          }
          if (rejected) {
            ++out.host.rejected;
            continue;
          }
          if (obs.on_grant) obs.on_grant(now, fetch, source, tracker);
          if (rtt_slots == 0)
            complete(fetch.id);
          else
            in_flight.emplace(k + rtt_slots, fetch.id);
        }
      }
      apply_drain(*host, now, cfg.r);
    }

    if (obs.on_slot) obs.on_slot(SlotView{k, now, tracker, host ? &*host : nullptr});
    sample_all(k, now);
  }

  if (host) {
    out.host.downloaded = host->downloaded;
    out.host.misses = host->misses;
    out.host.first_miss = host->first_miss;
    out.host.duplicates = host->duplicates;
    out.host.wasted = host->wasted;
  }
  out.traces.push_back(std::move(host_trace));
  for (auto& t : stable_traces) out.traces.push_back(std::move(t));
  return out;
}

}  // namespace tblab::sim
