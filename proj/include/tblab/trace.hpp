#pragma once

// Time-stamped buffer-message traces, stored as JSON Lines:
//
//   {"t":5.0,"peer":0,"offset":3600,"bits":"1x150","fill":150,"playable":150,
//    "width":149,"downloaded":150,"service_head":5050}
//
// Only t, peer, offset and bits are required on input; fill, playable and
// width are re-derived from the bitmap and checked when present. Scheduler
// decision records {"t","decision","chunk"} may be interleaved.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tblab/buffer.hpp"
#include "tblab/error.hpp"

namespace tblab {

struct ProgressSample {
  double t = 0;
  ChunkId offset{};
  std::vector<bool> bits;
  BufferMetrics m;
  std::int64_t downloaded = 0;
  std::optional<ChunkId> service_head;

  // Absolute peer-progress positions.
  std::int64_t f() const { return static_cast<std::int64_t>(offset.value); }
  std::int64_t u() const { return f() + m.fill; }
  std::int64_t v() const { return f() + m.playable; }
  std::int64_t xi() const { return f() + m.width; }

  LagSet lags() const {
    if (!service_head) throw Error(Errc::insufficient_data, "sample has no service head");
    return tblab::lags(offset, m, *service_head);
  }
};

struct DecisionRecord {
  double t = 0;
  std::string decision;
  std::uint64_t chunk = 0;
};

struct Trace {
  std::int64_t peer = 0;
  std::vector<ProgressSample> samples;
  std::vector<DecisionRecord> decisions;

  bool empty() const noexcept { return samples.empty(); }
  std::size_t size() const noexcept { return samples.size(); }
};

// Snaps a slot-derived time to the nearest 1e-9 so that k*0.1 prints as a
// short decimal.
inline double tidy_time(double t) { return std::round(t * 1e9) / 1e9; }

inline ProgressSample make_sample(double t, const BufferMessage& bm, std::int64_t downloaded, std::optional<ChunkId> service_head) {
  ProgressSample s;
  s.t = tidy_time(t);
  s.offset = bm.offset();
  s.bits = bm.bits();
  s.m = BufferMetrics{bm.width(), bm.fill(), bm.playable()};
  s.downloaded = downloaded;
  s.service_head = service_head;
  return s;
}

inline nlohmann::ordered_json to_json(const ProgressSample& s, std::int64_t peer) {
  nlohmann::ordered_json j;
  j["t"] = s.t;
  j["peer"] = peer;
  j["offset"] = s.offset.value;
  j["bits"] = encode_rle(s.bits);
  j["fill"] = s.m.fill;
  j["playable"] = s.m.playable;
  j["width"] = s.m.width;
  j["downloaded"] = s.downloaded;
  if (s.service_head) j["service_head"] = s.service_head->value;
  return j;
}

inline void write_jsonl(std::ostream& os, const Trace& trace) {
  std::size_t d = 0;
  for (const auto& s : trace.samples) {
    // Decisions up to and including this sample time precede it.
    while (d < trace.decisions.size() && trace.decisions[d].t <= s.t) {
      nlohmann::ordered_json j;
      j["t"] = trace.decisions[d].t;
      j["decision"] = trace.decisions[d].decision;
      j["chunk"] = trace.decisions[d].chunk;
      os << j.dump() << '\n';
      ++d;
    }
    os << to_json(s, trace.peer).dump() << '\n';
  }
  for (; d < trace.decisions.size(); ++d) {
    nlohmann::ordered_json j{{"t", trace.decisions[d].t}, {"decision", trace.decisions[d].decision}, {"chunk", trace.decisions[d].chunk}};
    os << j.dump() << '\n';
  }
}

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw Error(Errc::malformed, "line " + std::to_string(line) + ": missing \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::malformed, "line " + std::to_string(line) + ": bad \"" + key + "\"");
  }
}

}  // namespace detail

// Throws Error(malformed) on unparsable lines, mixed peers, non-increasing
// times or metric fields that disagree with the bitmap.
inline Trace read_jsonl(std::istream& is, std::size_t max_width = kDefaultMaxWidth) {
  Trace trace;
  bool have_peer = false;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::malformed, "line " + std::to_string(n) + ": " + e.what());
    }
    if (!j.is_object()) throw Error(Errc::malformed, "line " + std::to_string(n) + ": not an object");
    if (j.contains("decision")) {
      trace.decisions.push_back({detail::field<double>(j, "t", n), detail::field<std::string>(j, "decision", n),
                                 detail::field<std::uint64_t>(j, "chunk", n)});
      continue;
    }
    ProgressSample s;
    s.t = detail::field<double>(j, "t", n);
    auto peer = detail::field<std::int64_t>(j, "peer", n);
    if (have_peer && peer != trace.peer) throw Error(Errc::malformed, "line " + std::to_string(n) + ": trace mixes peers");
    trace.peer = peer;
    have_peer = true;
    s.offset = ChunkId(detail::field<std::uint64_t>(j, "offset", n));
    try {
      s.bits = decode_rle(detail::field<std::string>(j, "bits", n), max_width);
      s.m = metrics(BufferMessage(s.offset, s.bits, max_width));
    } catch (const Error& e) {
      throw Error(Errc::malformed, "line " + std::to_string(n) + ": " + e.what());
    }
    auto check = [&](const char* key, std::int64_t derived) {
      if (j.contains(key) && detail::field<std::int64_t>(j, key, n) != derived)
        throw Error(Errc::malformed, "line " + std::to_string(n) + ": \"" + key + "\" disagrees with bits");
    };
    check("fill", s.m.fill);
    check("playable", s.m.playable);
    check("width", s.m.width);
    s.downloaded = j.contains("downloaded") ? detail::field<std::int64_t>(j, "downloaded", n) : s.m.fill;
    if (j.contains("service_head")) s.service_head = ChunkId(detail::field<std::uint64_t>(j, "service_head", n));
    if (!trace.samples.empty() && !(s.t > trace.samples.back().t))
      throw Error(Errc::malformed, "line " + std::to_string(n) + ": samples not time-ordered");
    trace.samples.push_back(std::move(s));
  }
  return trace;
}

inline Trace read_jsonl_file(const std::string& path, std::size_t max_width = kDefaultMaxWidth) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::insufficient_data, "cannot open " + path);
  return read_jsonl(in, max_width);
}

inline std::string to_jsonl(const Trace& trace) {
  std::ostringstream os;
  write_jsonl(os, trace);
  return os.str();
}

}  // namespace tblab
