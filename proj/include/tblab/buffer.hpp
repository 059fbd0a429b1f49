#pragma once

// Chunk-ID arithmetic, buffer messages and the derived buffer metrics.
//
// A BufferMessage is an offset (the chunk at the buffer head) plus a presence
// bitmap where bit i stands for chunk offset+i. The bitmap always ends on a 1:
// the last stored chunk (the scope) defines its length.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "tblab/error.hpp"

namespace tblab {

struct ChunkId {
  std::uint64_t value = 0;

  constexpr ChunkId() = default;
  constexpr explicit ChunkId(std::uint64_t v) : value(v) {}

  friend constexpr auto operator<=>(ChunkId, ChunkId) = default;

  friend constexpr ChunkId operator+(ChunkId a, std::uint64_t n) { return ChunkId(a.value + n); }
  friend constexpr ChunkId operator-(ChunkId a, std::uint64_t n) { return ChunkId(a.value - n); }
  // Signed distance a - b in chunks.
  friend constexpr std::int64_t operator-(ChunkId a, ChunkId b) {
    return static_cast<std::int64_t>(a.value) - static_cast<std::int64_t>(b.value);
  }
  ChunkId& operator++() {
    ++value;
    return *this;
  }
};

inline constexpr std::size_t kDefaultMaxWidth = 4096;

struct BufferMetrics {
  std::int64_t width = 0;     // index of the last stored chunk, 0 when empty
  std::int64_t fill = 0;      // stored chunks
  std::int64_t playable = 0;  // length of the stored run starting at the offset

  friend bool operator==(const BufferMetrics&, const BufferMetrics&) = default;
};

// Progress lags against a service head s. Negative values are possible when
// s is not the true service curve.
struct LagSet {
  std::int64_t offset_lag = 0;
  std::int64_t scope_lag = 0;
  std::int64_t download_lag = 0;
  std::int64_t playable_lag = 0;

  friend bool operator==(const LagSet&, const LagSet&) = default;
};

class BufferMessage {
 public:
  BufferMessage() = default;
  explicit BufferMessage(ChunkId offset, std::size_t max_width = kDefaultMaxWidth)
      : offset_(offset), max_width_(max_width) {}

  // Throws Error(malformed) if the bitmap ends with a 0, or
  // Error(capacity_exceeded) if it is longer than max_width.
  BufferMessage(ChunkId offset, const std::vector<bool>& bits, std::size_t max_width = kDefaultMaxWidth)
      : offset_(offset), bits_(bits.begin(), bits.end()), max_width_(max_width) {
    if (!bits_.empty() && !bits_.back()) throw Error(Errc::malformed, "buffer map must end with a stored chunk");
    if (bits_.size() > max_width_) throw Error(Errc::capacity_exceeded, "buffer map longer than max width");
    fill_ = std::count(bits_.begin(), bits_.end(), true);
    playable_ = prefix_run(0);
  }

  ChunkId offset() const noexcept { return offset_; }
  std::size_t size() const noexcept { return bits_.size(); }
  bool empty() const noexcept { return bits_.empty(); }
  std::size_t max_width() const noexcept { return max_width_; }
  bool bit(std::size_t i) const { return bits_.at(i); }
  std::vector<bool> bits() const { return {bits_.begin(), bits_.end()}; }

  // Incrementally maintained counters; metrics() re-derives them.
  std::int64_t fill() const noexcept { return fill_; }
  std::int64_t playable() const noexcept { return playable_; }
  std::int64_t width() const noexcept { return bits_.empty() ? 0 : static_cast<std::int64_t>(bits_.size()) - 1; }

  // Highest stored chunk; equals offset() for an empty buffer.
  ChunkId scope() const noexcept { return offset_ + static_cast<std::uint64_t>(width()); }
  // One past the bitmap end, f + |BM|.
  ChunkId end() const noexcept { return offset_ + bits_.size(); }

  bool holds(ChunkId x) const noexcept {
    if (x < offset_) return false;
    auto i = static_cast<std::uint64_t>(x - offset_);
    return i < bits_.size() && bits_[i];
  }

  // Marks x as stored, expanding the bitmap when x lies beyond it. Returns
  // false if x was already stored.
  bool write(ChunkId x) {
    if (x < offset_) throw Error(Errc::out_of_range, "chunk " + std::to_string(x.value) + " is below offset " + std::to_string(offset_.value));
    auto i = static_cast<std::uint64_t>(x - offset_);
    if (i >= max_width_) throw Error(Errc::capacity_exceeded, "chunk " + std::to_string(x.value) + " exceeds max buffer width");
    if (i < bits_.size()) {
      if (bits_[i]) return false;
      bits_[i] = true;
    } else {
      bits_.resize(i + 1, false);
      bits_.back() = true;
    }
    ++fill_;
    if (static_cast<std::int64_t>(i) == playable_) playable_ = prefix_run(static_cast<std::size_t>(playable_));
    return true;
  }

  // Drops the head chunk and advances the offset by one. Returns whether the
  // dropped chunk was stored.
  bool drop_head() {
    ++offset_;
    if (bits_.empty()) return false;
    bool head = bits_.front();
    bits_.pop_front();
    if (head) {
      --fill_;
      --playable_;
    } else {
      playable_ = prefix_run(0);
    }
    return head;
  }

  friend bool operator==(const BufferMessage& a, const BufferMessage& b) {
    return a.offset_ == b.offset_ && a.bits_ == b.bits_;
  }

 private:
  std::int64_t prefix_run(std::size_t from) const {
    std::size_t k = from;
    while (k < bits_.size() && bits_[k]) ++k;
    return static_cast<std::int64_t>(k);
  }

  ChunkId offset_{};
  std::deque<bool> bits_;
  std::size_t max_width_ = kDefaultMaxWidth;
  std::int64_t fill_ = 0;
  std::int64_t playable_ = 0;
};

// Re-derives width/fill/playable from the bitmap alone.
inline BufferMetrics metrics(const BufferMessage& bm) {
  BufferMetrics m;
  bool prefix = true;
  for (std::size_t i = 0; i < bm.size(); ++i) {
    if (bm.bit(i)) {
      ++m.fill;
      m.width = static_cast<std::int64_t>(i);
      if (prefix) ++m.playable;
    } else {
      prefix = false;
    }
  }
  return m;
}

inline BufferMessage write_bm(BufferMessage bm, ChunkId x) {
  bm.write(x);
  return bm;
}

inline BufferMessage dec(BufferMessage bm) {
  bm.drop_head();
  return bm;
}

inline LagSet lags(ChunkId offset, const BufferMetrics& m, ChunkId s) {
  if (s < offset) throw Error(Errc::inconsistent_trace, "service head " + std::to_string(s.value) + " below offset " + std::to_string(offset.value));
  LagSet l;
  l.offset_lag = s - offset;
  l.scope_lag = l.offset_lag - m.width;
  l.download_lag = l.offset_lag - m.fill;
  l.playable_lag = l.offset_lag - m.playable;
  return l;
}

inline LagSet lags(const BufferMessage& bm, ChunkId s) {
  return lags(bm.offset(), BufferMetrics{bm.width(), bm.fill(), bm.playable()}, s);
}

// Run-length encoding of a bitmap: "1x200,0x3,1x7". The empty bitmap encodes
// to "". Decoding accepts only the canonical form (positive counts,
// alternating bits), so encode(decode(s)) == s.
inline std::string encode_rle(const std::vector<bool>& bits) {
  std::string out;
  std::size_t i = 0;
  while (i < bits.size()) {
    std::size_t j = i;
    while (j < bits.size() && bits[j] == bits[i]) ++j;
    if (!out.empty()) out += ',';
    out += bits[i] ? '1' : '0';
    out += 'x';
    out += std::to_string(j - i);
    i = j;
  }
  return out;
}

inline std::vector<bool> decode_rle(std::string_view s, std::size_t max_len = kDefaultMaxWidth) {
  std::vector<bool> bits;
  if (s.empty()) return bits;
  int prev = -1;
  while (true) {
    auto comma = s.find(',');
    std::string_view run = s.substr(0, comma);
    if (run.size() < 3 || (run[0] != '0' && run[0] != '1') || run[1] != 'x')
      throw Error(Errc::malformed, "bad run '" + std::string(run) + "'");
    int bit = run[0] - '0';
    if (bit == prev) throw Error(Errc::malformed, "adjacent runs share a bit value");
    std::uint64_t count = 0;
    auto digits = run.substr(2);
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), count);
    if (ec != std::errc{} || p != digits.data() + digits.size() || count == 0 || digits[0] == '0')
      throw Error(Errc::malformed, "bad run length in '" + std::string(run) + "'");
    if (bits.size() + count > max_len) throw Error(Errc::capacity_exceeded, "bitmap exceeds max width");
    bits.insert(bits.end(), count, bit == 1);
    prev = bit;
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return bits;
}

}  // namespace tblab
