#pragma once

#include <cstdint>
#include <limits>

namespace nbfa {

namespace detail {
inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
} // namespace detail

/// Counter-based random stream. The output at position `counter` depends only
/// on (seed, stream_id, counter), so per-document or per-factor streams can be
/// derived and replayed independently of scheduling.
///
/// Satisfies UniformRandomBitGenerator so it can drive <random> distributions.
class RngStream {
public:
  using result_type = std::uint64_t;

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id),
        key_(detail::mix64(seed ^ detail::mix64(stream_id + detail::kGolden))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Child stream; distinct ids give independent sequences.
  RngStream derive(std::uint64_t id) const {
    return RngStream(key_, detail::mix64(id ^ 0x2545f4914f6cdd1dULL) + stream_id_);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  /// Restores a stream position (checkpoint reload).
  void set_counter(std::uint64_t counter) { counter_ = counter; }

  friend bool operator==(const RngStream &a, const RngStream &b) {
    return a.seed_ == b.seed_ && a.stream_id_ == b.stream_id_ && a.counter_ == b.counter_;
  }

private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace nbfa
