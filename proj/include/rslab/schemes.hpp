#pragma once

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rslab/errors.hpp"
#include "rslab/hilbert.hpp"
#include "rslab/particles.hpp"
#include "rslab/random.hpp"
#include "rslab/resamplers.hpp"

namespace rslab {

enum class SchemeKind {
  multinomial,
  stratified,
  systematic,
  residual_multinomial,
  residual_stratified,
  ssp,
  deterministic_alpha,
  ordered_stratified,
  ordered_systematic,
  ordered_alpha,
};

/// A resampling scheme, optionally preceded by Hilbert ordering of the input.
struct Scheme {
  SchemeKind kind = SchemeKind::multinomial;
  double alpha = 0.5;  // deterministic_alpha / ordered_alpha only

  bool is_ordered() const noexcept {
    return kind == SchemeKind::ordered_stratified || kind == SchemeKind::ordered_systematic ||
           kind == SchemeKind::ordered_alpha;
  }

  std::string name() const {
    switch (kind) {
      case SchemeKind::multinomial: return "multinomial";
      case SchemeKind::stratified: return "stratified";
      case SchemeKind::systematic: return "systematic";
      case SchemeKind::residual_multinomial: return "residual_multinomial";
      case SchemeKind::residual_stratified: return "residual_stratified";
      case SchemeKind::ssp: return "ssp";
      case SchemeKind::deterministic_alpha: return alpha == 0.5 ? "deterministic_alpha" : "deterministic_alpha:" + format_alpha();
      case SchemeKind::ordered_stratified: return "ordered_stratified";
      case SchemeKind::ordered_systematic: return "ordered_systematic";
      case SchemeKind::ordered_alpha: return alpha == 0.5 ? "ordered_alpha" : "ordered_alpha:" + format_alpha();
    }
    return "unknown";
  }

  /// Accepts the names produced by name(); the alpha variants take an
  /// optional ":<alpha>" suffix.
  static Scheme parse(std::string_view text) {
    const auto colon = text.find(':');
    const std::string_view head = text.substr(0, colon);
    Scheme s;
    if (head == "multinomial") s.kind = SchemeKind::multinomial;
    else if (head == "stratified") s.kind = SchemeKind::stratified;
    else if (head == "systematic") s.kind = SchemeKind::systematic;
    else if (head == "residual_multinomial") s.kind = SchemeKind::residual_multinomial;
    else if (head == "residual_stratified") s.kind = SchemeKind::residual_stratified;
    else if (head == "ssp") s.kind = SchemeKind::ssp;
    else if (head == "deterministic_alpha") s.kind = SchemeKind::deterministic_alpha;
    else if (head == "ordered_stratified") s.kind = SchemeKind::ordered_stratified;
    else if (head == "ordered_systematic") s.kind = SchemeKind::ordered_systematic;
    else if (head == "ordered_alpha") s.kind = SchemeKind::ordered_alpha;
    else throw Error(ErrorCode::InvalidArgument, "unknown scheme '" + std::string(text) + "'");

    const bool has_alpha = s.kind == SchemeKind::deterministic_alpha || s.kind == SchemeKind::ordered_alpha;
    if (colon != std::string_view::npos) {
      if (!has_alpha) throw Error(ErrorCode::InvalidArgument, "scheme '" + std::string(head) + "' takes no parameter");
      const std::string arg(text.substr(colon + 1));
      char* end = nullptr;
      s.alpha = std::strtod(arg.c_str(), &end);
      if (arg.empty() || end != arg.c_str() + arg.size())
        throw Error(ErrorCode::InvalidArgument, "bad alpha in '" + std::string(text) + "'");
    }
    if (has_alpha && !(s.alpha > 0.0 && s.alpha < 1.0))
      throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in (0,1)");
    return s;
  }

  friend bool operator==(const Scheme&, const Scheme&) = default;

 private:
  std::string format_alpha() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", alpha);
    return buf;
  }
};

/// Cubifying map and curve used by the ordered schemes.
struct Ordering {
  CubifyingMap map;
  HilbertCodec codec;

  /// psi_tilde on every axis, default curve precision.
  static Ordering real_line(std::size_t dim) {
    return {CubifyingMap::real_line(dim), HilbertCodec(static_cast<unsigned>(dim))};
  }
};

/// Runs `base` on the Hilbert-sorted system and reports ancestors in the
/// caller's original indexing. `base` must be stratified, systematic or
/// deterministic_alpha.
template <UniformSource S>
ResampleResult ordered_resample(const WeightedParticleSystem& sys, const Scheme& base, const CubifyingMap& map,
                                const HilbertCodec& codec, S& stream) {
  const auto perm = hilbert_sort(sys, map, codec);
  const auto sorted = sys.permuted(perm);
  ResampleResult inner;
  switch (base.kind) {
    case SchemeKind::stratified: inner = stratified(sorted, stream); break;
    case SchemeKind::systematic: inner = systematic(sorted, stream); break;
    case SchemeKind::deterministic_alpha: inner = deterministic_alpha(sorted, base.alpha); break;
    default: throw Error(ErrorCode::InvalidArgument, "ordered_resample does not support " + base.name());
  }
  std::vector<std::size_t> ancestors(inner.ancestors.size());
  for (std::size_t i = 0; i < ancestors.size(); ++i) ancestors[i] = perm[inner.ancestors[i]];
  return ResampleResult::from_ancestors(std::move(ancestors), sys.weights());
}

/// Dispatches on the scheme. Ordered schemes use `ordering` when given and
/// psi_tilde with the default curve precision otherwise.
template <UniformSource S>
ResampleResult resample(const Scheme& scheme, const WeightedParticleSystem& sys, S& stream,
                        const Ordering* ordering = nullptr) {
  auto run_ordered = [&](SchemeKind base) {
    const Scheme inner{base, scheme.alpha};
    if (ordering) return ordered_resample(sys, inner, ordering->map, ordering->codec, stream);
    const auto fallback = Ordering::real_line(sys.dim());
    return ordered_resample(sys, inner, fallback.map, fallback.codec, stream);
  };
  switch (scheme.kind) {
    case SchemeKind::multinomial: return multinomial(sys, stream);
    case SchemeKind::stratified: return stratified(sys, stream);
    case SchemeKind::systematic: return systematic(sys, stream);
    case SchemeKind::residual_multinomial: return residual(sys, stream, ResidualInner::multinomial);
    case SchemeKind::residual_stratified: return residual(sys, stream, ResidualInner::stratified);
    case SchemeKind::ssp: return ssp(sys, stream);
    case SchemeKind::deterministic_alpha: return deterministic_alpha(sys, scheme.alpha);
    case SchemeKind::ordered_stratified: return run_ordered(SchemeKind::stratified);
    case SchemeKind::ordered_systematic: return run_ordered(SchemeKind::systematic);
    case SchemeKind::ordered_alpha: return run_ordered(SchemeKind::deterministic_alpha);
  }
  throw Error(ErrorCode::InvalidArgument, "unhandled scheme");
}

/// Repeated resampling of one fixed system. Ordered schemes sort once up
/// front; each draw equals resample(scheme, sys, stream, ordering).
class PreparedResampler {
 public:
  PreparedResampler(const Scheme& scheme, const WeightedParticleSystem& sys, const Ordering* ordering = nullptr)
      : scheme_(scheme), sys_(&sys) {
    if (!scheme.is_ordered()) return;
    const Ordering fallback = Ordering::real_line(sys.dim());
    const Ordering& ord = ordering ? *ordering : fallback;
    perm_ = hilbert_sort(sys, ord.map, ord.codec);
    sorted_.emplace(sys.permuted(perm_));
    switch (scheme.kind) {
      case SchemeKind::ordered_stratified: scheme_ = Scheme{SchemeKind::stratified}; break;
      case SchemeKind::ordered_systematic: scheme_ = Scheme{SchemeKind::systematic}; break;
      default: scheme_ = Scheme{SchemeKind::deterministic_alpha, scheme.alpha}; break;
    }
  }

  template <UniformSource S>
  ResampleResult operator()(S& stream) const {
    if (!sorted_) return resample(scheme_, *sys_, stream);
    auto inner = resample(scheme_, *sorted_, stream);
    for (auto& a : inner.ancestors) a = perm_[a];
    return ResampleResult::from_ancestors(std::move(inner.ancestors), sys_->weights());
  }

  /// Ancestors only, skipping the count bookkeeping; ordered schemes return
  /// ancestors in sorted order mapped back to original indices.
  template <UniformSource S>
  std::vector<std::size_t> ancestors(S& stream) const {
    if (!sorted_) return resample(scheme_, *sys_, stream).ancestors;
    auto inner = resample(scheme_, *sorted_, stream).ancestors;
    for (auto& a : inner) a = perm_[a];
    return inner;
  }

 private:
  Scheme scheme_;
  const WeightedParticleSystem* sys_;
  std::vector<std::size_t> perm_;
  std::optional<WeightedParticleSystem> sorted_;
};

}  // namespace rslab
