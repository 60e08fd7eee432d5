#pragma once

// FIR primitives shared by the distortion models, the linearizers and the
// signal generators: causal filtering, zero-insertion upsampling, windows and
// polyphase decomposition.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "fdlin/error.hpp"

namespace fdlin {

using Taps = std::vector<double>;

/// Causal FIR filtering with zero initial state; the output has x.size() samples.
inline std::vector<double> filter(std::span<const double> taps, std::span<const double> x) {
  std::vector<double> y(x.size(), 0.0);
  const std::size_t ntaps = taps.size();
  for (std::size_t n = 0; n < x.size(); ++n) {
    const std::size_t kmax = std::min(ntaps, n + 1);
    double acc = 0.0;
    for (std::size_t k = 0; k < kmax; ++k) acc += taps[k] * x[n - k];
    y[n] = acc;
  }
  return y;
}

/// y(n) += sum_k taps(k) x(n - delay - k), zero for negative indices.
inline void filter_accumulate(std::span<const double> taps, std::span<const double> x, std::size_t delay,
                              std::span<double> y) {
  const std::size_t len = std::min(x.size(), y.size());
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const double c = taps[k];
    if (c == 0.0) continue;
    const std::size_t shift = delay + k;
    for (std::size_t n = shift; n < len; ++n) y[n] += c * x[n - shift];
  }
}

/// Delays x by d samples (zero-filled), keeping the length.
inline std::vector<double> delay(std::span<const double> x, std::size_t d) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t n = d; n < x.size(); ++n) y[n] = x[n - d];
  return y;
}

inline std::vector<double> upsample(std::span<const double> x, std::size_t factor) {
  std::vector<double> y(x.size() * factor, 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) y[n * factor] = x[n];
  return y;
}

inline std::vector<double> downsample(std::span<const double> x, std::size_t factor, std::size_t phase = 0) {
  std::vector<double> y;
  y.reserve(x.size() / factor + 1);
  for (std::size_t n = phase; n < x.size(); n += factor) y.push_back(x[n]);
  return y;
}

/// Periodic (DFT-even) Hann window: on-grid tones leak into exactly one neighbour bin each side.
inline std::vector<double> hann_periodic(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
  return w;
}

/// Symmetric Hann window of `length` points (filter design flavour, non-zero end points).
inline std::vector<double> hann_symmetric(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n + 1) / static_cast<double>(length + 1));
  return w;
}

inline std::vector<double> kaiser(std::size_t length, double beta) {
  std::vector<double> w(length, 1.0);
  if (length == 1) return w;
  const double denom = std::cyl_bessel_i(0.0, beta);
  const double half = static_cast<double>(length - 1) / 2.0;
  for (std::size_t n = 0; n < length; ++n) {
    const double r = (static_cast<double>(n) - half) / half;
    w[n] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

/// Normalized sinc, sin(pi t)/(pi t).
inline double sinc(double t) {
  if (t == 0.0) return 1.0;
  const double a = std::numbers::pi * t;
  return std::sin(a) / a;
}

enum class PolyphaseType {
  /// H(z) = sum_i z^{-i} E_i(z^P), E_i(r) = h(rP + i).
  type1,
  /// H(z) = sum_i z^{+i} E_i(z^P). E_i(r) = h(rP - i); for i > 0 the leading
  /// tap E_i(0) is identically zero, which absorbs the z^{+i} advance as a
  /// one-sample low-rate delay. `advance[i]` records the i high-rate samples.
  type2,
};

struct PolyphaseComponents {
  PolyphaseType type = PolyphaseType::type1;
  std::size_t factor = 1;
  std::size_t length = 0;  // taps in the original filter
  std::vector<Taps> phases;
  std::vector<std::size_t> advance;
};

inline PolyphaseComponents polyphase_decompose(std::span<const double> h, std::size_t factor,
                                               PolyphaseType type = PolyphaseType::type1) {
  if (factor < 1) throw ConfigError("polyphase_decompose: factor must be >= 1");
  PolyphaseComponents out;
  out.type = type;
  out.factor = factor;
  out.length = h.size();
  out.phases.resize(factor);
  out.advance.assign(factor, 0);
  const std::size_t len = h.size();
  for (std::size_t i = 0; i < factor; ++i) {
    Taps& e = out.phases[i];
    if (type == PolyphaseType::type1) {
      for (std::size_t k = i; k < len; k += factor) e.push_back(h[k]);
    } else {
      out.advance[i] = i;
      if (i == 0) {
        for (std::size_t k = 0; k < len; k += factor) e.push_back(h[k]);
      } else {
        e.push_back(0.0);
        for (std::size_t k = factor - i; k < len; k += factor) e.push_back(h[k]);
      }
    }
  }
  return out;
}

/// Inverse of polyphase_decompose: interleaves the components back into one filter.
inline Taps polyphase_reconstruct(const PolyphaseComponents& pc) {
  const std::size_t p = pc.factor;
  const std::size_t len = pc.length;
  Taps h(len, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const auto& e = pc.phases[i];
    for (std::size_t r = 0; r < e.size(); ++r) {
      const std::size_t k = pc.type == PolyphaseType::type1 ? r * p + i : r * p - i;
      if ((pc.type == PolyphaseType::type1 || r * p >= i) && k < len) h[k] = e[r];
    }
  }
  return h;
}

/// Polyphase interpolation: y(nP + i) = sum_r h(rP + i) x(n - r); equals
/// filter(h, upsample(x, P)) without touching the inserted zeros.
inline std::vector<double> interpolate(std::span<const double> h, std::span<const double> x, std::size_t factor) {
  const auto pc = polyphase_decompose(h, factor, PolyphaseType::type1);
  std::vector<double> y(x.size() * factor, 0.0);
  for (std::size_t i = 0; i < factor; ++i) {
    const auto phase = filter(pc.phases[i], x);
    for (std::size_t n = 0; n < x.size(); ++n) y[n * factor + i] = phase[n];
  }
  return y;
}

}  // namespace fdlin
