#pragma once

// Hilbert curve on the dyadic grid of [0,1)^d, the cubifying maps that carry
// R^d (or a box) into (0,1)^d, and the induced ordering of a particle system.
//
// The curve is Skilling's transpose construction ("Programming the Hilbert
// curve", AIP Conf. Proc. 707, 2004). It starts in the cell at the origin and,
// for d = 2 at one level, visits (0,0), (0,1), (1,1), (1,0) in cell units.
// Keys interleave the transposed bits with axis 0 most significant. For d = 1
// the curve is the identity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rslab/errors.hpp"
#include "rslab/particles.hpp"

namespace rslab {

using HilbertKey = std::uint64_t;

class HilbertCodec {
 public:
  static constexpr unsigned kMaxBits = 62;

  /// Default precision packs floor(62/d) bits per axis into one key.
  explicit HilbertCodec(unsigned dim) : HilbertCodec(dim, dim == 0 ? 0 : kMaxBits / dim) {}

  HilbertCodec(unsigned dim, unsigned levels) : dim_(dim), levels_(levels) {
    if (dim_ < 1) throw Error(ErrorCode::InvalidArgument, "Hilbert dimension must be >= 1");
    if (levels_ < 1 || levels_ * dim_ > kMaxBits)
      throw Error(ErrorCode::InvalidArgument, "Hilbert precision needs 1 <= m and m*d <= 62 (d=" +
                                                  std::to_string(dim_) + ", m=" + std::to_string(levels_) + ")");
  }

  unsigned dim() const noexcept { return dim_; }
  unsigned levels() const noexcept { return levels_; }
  HilbertKey key_count() const noexcept { return HilbertKey{1} << (levels_ * dim_); }
  double cell_width() const noexcept { return std::ldexp(1.0, -static_cast<int>(levels_)); }

  /// Key of an integer cell (each coordinate in 0..2^m-1).
  HilbertKey encode_cell(std::span<const std::uint64_t> cell) const {
    check_dim(cell.size());
    const std::uint64_t side = std::uint64_t{1} << levels_;
    for (auto c : cell)
      if (c >= side) throw Error(ErrorCode::CoordinateOutOfRange, "cell coordinate " + std::to_string(c));
    if (dim_ == 1) return cell[0];
    std::vector<std::uint64_t> x(cell.begin(), cell.end());
    axes_to_transpose(x);
    return interleave(x);
  }

  std::vector<std::uint64_t> decode_cell(HilbertKey key) const {
    check_key(key);
    if (dim_ == 1) return {key};
    auto x = deinterleave(key);
    transpose_to_axes(x);
    return x;
  }

  /// Key of the half-open cell containing x in [0,1)^d.
  HilbertKey encode(std::span<const double> x) const {
    check_dim(x.size());
    std::vector<std::uint64_t> cell(dim_);
    for (unsigned i = 0; i < dim_; ++i) {
      if (!(x[i] >= 0.0 && x[i] < 1.0))
        throw Error(ErrorCode::CoordinateOutOfRange, "coordinate " + std::to_string(x[i]) + " outside [0,1)");
      cell[i] = static_cast<std::uint64_t>(std::floor(std::ldexp(x[i], static_cast<int>(levels_))));
    }
    return encode_cell(cell);
  }

  /// Lower corner of the key-th cell along the curve.
  std::vector<double> decode(HilbertKey key) const {
    const auto cell = decode_cell(key);
    std::vector<double> out(dim_);
    for (unsigned i = 0; i < dim_; ++i)
      out[i] = std::ldexp(static_cast<double>(cell[i]), -static_cast<int>(levels_));
    return out;
  }

 private:
  void check_dim(std::size_t n) const {
    if (n != dim_)
      throw Error(ErrorCode::InvalidArgument,
                  "point has " + std::to_string(n) + " coordinates, codec expects " + std::to_string(dim_));
  }
  void check_key(HilbertKey key) const {
    if (key >= key_count()) throw Error(ErrorCode::KeyOutOfRange, "key " + std::to_string(key));
  }

  void axes_to_transpose(std::vector<std::uint64_t>& x) const {
    const std::uint64_t top = std::uint64_t{1} << (levels_ - 1);
    for (std::uint64_t q = top; q > 1; q >>= 1) {
      const std::uint64_t p = q - 1;
      for (unsigned i = 0; i < dim_; ++i) {
        if (x[i] & q) {
          x[0] ^= p;
        } else {
          const std::uint64_t t = (x[0] ^ x[i]) & p;
          x[0] ^= t;
          x[i] ^= t;
        }
      }
    }
    for (unsigned i = 1; i < dim_; ++i) x[i] ^= x[i - 1];
    std::uint64_t t = 0;
    for (std::uint64_t q = top; q > 1; q >>= 1)
      if (x[dim_ - 1] & q) t ^= q - 1;
    for (auto& xi : x) xi ^= t;
  }

  void transpose_to_axes(std::vector<std::uint64_t>& x) const {
    const std::uint64_t end = std::uint64_t{2} << (levels_ - 1);
    std::uint64_t t = x[dim_ - 1] >> 1;
    for (unsigned i = dim_ - 1; i > 0; --i) x[i] ^= x[i - 1];
    x[0] ^= t;
    for (std::uint64_t q = 2; q != end; q <<= 1) {
      const std::uint64_t p = q - 1;
      for (unsigned i = dim_; i-- > 0;) {
        if (x[i] & q) {
          x[0] ^= p;
        } else {
          t = (x[0] ^ x[i]) & p;
          x[0] ^= t;
          x[i] ^= t;
        }
      }
    }
  }

  HilbertKey interleave(std::span<const std::uint64_t> x) const {
    HilbertKey key = 0;
    for (unsigned b = levels_; b-- > 0;)
      for (unsigned i = 0; i < dim_; ++i) key = (key << 1) | ((x[i] >> b) & 1U);
    return key;
  }

  std::vector<std::uint64_t> deinterleave(HilbertKey key) const {
    std::vector<std::uint64_t> x(dim_, 0);
    unsigned shift = levels_ * dim_;
    for (unsigned b = levels_; b-- > 0;)
      for (unsigned i = 0; i < dim_; ++i) {
        --shift;
        x[i] |= ((key >> shift) & 1U) << b;
      }
    return x;
  }

  unsigned dim_;
  unsigned levels_;
};

/// psi(x) = 1/2 + (sqrt(4+x^2) - 2) / (2x), with psi(0) = 1/2. Strictly
/// increasing bijection R -> (0,1).
inline double psi_tilde(double x) {
  if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "psi_tilde argument is not finite");
  // (sqrt(4+x^2) - 2) / (2x) == x / (2 (sqrt(4+x^2) + 2)), free of cancellation.
  return 0.5 + x / (2.0 * (std::hypot(2.0, x) + 2.0));
}

inline double psi_tilde_inverse(double y) {
  if (!(y > 0.0 && y < 1.0)) throw Error(ErrorCode::DomainViolation, "psi_tilde inverse needs y in (0,1)");
  return (2.0 * y - 1.0) / (y * (1.0 - y));
}

/// Per-axis map into (0,1): psi_tilde on the real line, affine on a box.
class CubifyingMap {
 public:
  struct RealLine {};
  struct Interval {
    double lower;
    double upper;
  };
  using Axis = std::variant<RealLine, Interval>;

  CubifyingMap() = default;
  explicit CubifyingMap(std::vector<Axis> axes) : axes_(std::move(axes)) {
    for (const auto& a : axes_)
      if (const auto* box = std::get_if<Interval>(&a); box && !(box->lower < box->upper))
        throw Error(ErrorCode::InvalidArgument, "interval axis needs lower < upper");
  }

  static CubifyingMap real_line(std::size_t dim) { return CubifyingMap(std::vector<Axis>(dim, RealLine{})); }
  static CubifyingMap unit_cube(std::size_t dim) { return CubifyingMap(std::vector<Axis>(dim, Interval{0.0, 1.0})); }

  std::size_t dim() const noexcept { return axes_.size(); }

  double apply(std::size_t axis, double x) const {
    if (const auto* box = std::get_if<Interval>(&axes_.at(axis))) {
      if (!(x >= box->lower && x < box->upper))
        throw Error(ErrorCode::DomainViolation, "state " + std::to_string(x) + " outside [" +
                                                    std::to_string(box->lower) + ", " + std::to_string(box->upper) + ")");
      return (x - box->lower) / (box->upper - box->lower);
    }
    if (!std::isfinite(x)) throw Error(ErrorCode::DomainViolation, "state is not finite");
    return psi_tilde(x);
  }

  double inverse(std::size_t axis, double y) const {
    if (const auto* box = std::get_if<Interval>(&axes_.at(axis))) return box->lower + y * (box->upper - box->lower);
    return psi_tilde_inverse(y);
  }

 private:
  std::vector<Axis> axes_;
};

/// Permutation sigma with h(psi(X^sigma(0))) <= h(psi(X^sigma(1))) <= ...,
/// ties broken by original index. In one dimension this is a plain stable
/// sort of the states.
inline std::vector<std::size_t> hilbert_sort(const WeightedParticleSystem& sys, const CubifyingMap& map,
                                             const HilbertCodec& codec) {
  const std::size_t n = sys.size();
  const std::size_t d = sys.dim();
  if (map.dim() != d || codec.dim() != d)
    throw Error(ErrorCode::InvalidArgument, "map/codec dimension does not match the particle dimension");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const auto& x = sys.states();

  if (d == 1) {
    for (std::size_t i = 0; i < n; ++i) map.apply(0, x(static_cast<Eigen::Index>(i), 0));
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
      return x(static_cast<Eigen::Index>(a), 0) < x(static_cast<Eigen::Index>(b), 0);
    });
    return perm;
  }

  constexpr double kBelowOne = 1.0 - 0x1.0p-53;
  std::vector<HilbertKey> keys(n);
  std::vector<double> point(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      point[j] = std::min(map.apply(j, x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))), kBelowOne);
    keys[i] = codec.encode(point);
  }
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  return perm;
}

}  // namespace rslab
