#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <iterator>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

namespace rslab {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Derives a 64-bit key as a pure function of its inputs. Used to name
/// substreams, e.g. (seed, purpose, t) or (seed, replicate).
constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
  std::uint64_t k = detail::mix64(seed + detail::kGolden);
  k = detail::mix64(k ^ detail::mix64(a + 0x632be59bd9b4e019ULL));
  k = detail::mix64(k ^ detail::mix64(b + 0x85ebca77c2b2ae63ULL));
  return k;
}

/// Anything that hands out uniforms on [0,1) one at a time.
template <typename S>
concept UniformSource = requires(S s) {
  { s.next() } -> std::convertible_to<double>;
};

/// Counter-based stream of uniforms. Draw i of the stream keyed by k is
/// SplitMix64(k + (i+1)*golden), so a stream is fully determined by its key
/// and position. Values lie in the open interval (0,1).
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id), key_(derive_key(seed, stream_id)) {}

  /// Substream `k` at step `t` of `seed`.
  static UniformStream substream(std::uint64_t seed, std::uint64_t t, std::uint64_t k) {
    UniformStream s(seed);
    s.stream_id_ = derive_key(t, k);
    s.key_ = derive_key(seed, t, k);
    return s;
  }

  double next() noexcept {
    ++counter_;
    const std::uint64_t bits = detail::mix64(key_ + counter_ * detail::kGolden);
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  double operator()() noexcept { return next(); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Replays a fixed list of uniforms; used to pin exact draws in tests and
/// hand traces. Cycles if exhausted.
class FixedUniforms {
 public:
  explicit FixedUniforms(std::initializer_list<double> values) : values_(values) {}
  template <typename Range>
  explicit FixedUniforms(const Range& values) : values_(std::begin(values), std::end(values)) {}

  double next() {
    const double u = values_[pos_ % values_.size()];
    ++pos_;
    return u;
  }

  std::size_t consumed() const noexcept { return pos_; }

 private:
  std::vector<double> values_;
  std::size_t pos_ = 0;
};

/// Standard normals by Box-Muller over a uniform source; the second variate
/// of each pair is cached.
template <UniformSource S>
class NormalSampler {
 public:
  explicit NormalSampler(S source) : source_(std::move(source)) {}

  double next() {
    if (cached_) {
      const double z = *cached_;
      cached_.reset();
      return z;
    }
    const double u1 = source_.next();
    const double u2 = source_.next();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  S& source() noexcept { return source_; }

 private:
  S source_;
  std::optional<double> cached_;
};

}  // namespace rslab
