#pragma once

// Metrics (SNDR, SFDR, periodograms) and the arithmetic-complexity accountant.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "fdlin/error.hpp"
#include "fdlin/fir.hpp"
#include "fdlin/types.hpp"

namespace fdlin {

inline constexpr double kInfiniteSndr = std::numeric_limits<double>::infinity();

/// 10 log10(sum x^2 / sum (x - v)^2); +inf when v reproduces x exactly.
inline double sndr_db(std::span<const double> x, std::span<const double> v) {
  if (x.size() != v.size()) throw ConfigError("sndr_db: length mismatch");
  double signal = 0.0;
  double error = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    signal += x[n] * x[n];
    const double e = x[n] - v[n];
    error += e * e;
  }
  if (signal == 0.0) throw MetricError("sndr_db: reference has zero energy");
  if (error == 0.0) return kInfiniteSndr;
  return 10.0 * std::log10(signal / error);
}

inline double enob(double sndr) { return (sndr - 1.76) / 6.02; }

enum class Window { hann, rectangular };

/// One-sided periodogram, bins k = 0..L/2.
struct Spectrum {
  std::size_t length = 0;
  /// |X(k)|^2 of the windowed DFT (two-sided value, not doubled).
  std::vector<double> power;
  /// |X(k)|^2 produced by a full-scale (unit amplitude) on-grid sine with this window.
  double full_scale_power = 1.0;

  std::size_t bins() const noexcept { return power.size(); }
  double dbfs(std::size_t k) const {
    return power[k] > 0.0 ? 10.0 * std::log10(power[k] / full_scale_power) : -std::numeric_limits<double>::infinity();
  }
  /// Frequency of bin k in cycles/sample (0 .. 0.5).
  double frequency(std::size_t k) const { return static_cast<double>(k) / static_cast<double>(length); }
  /// Sum over all L two-sided bins, for Parseval checks.
  double total_power() const {
    double s = power.front() + (length > 1 ? power.back() : 0.0);
    for (std::size_t k = 1; k + 1 < power.size(); ++k) s += 2.0 * power[k];
    return s;
  }
};

inline std::vector<double> window_taps(Window w, std::size_t length) {
  return w == Window::hann ? hann_periodic(length) : std::vector<double>(length, 1.0);
}

inline Spectrum spectrum(std::span<const double> v, Window window = Window::hann) {
  const std::size_t len = v.size();
  if (len < 2 || (len & (len - 1)) != 0) throw ConfigError("spectrum: length must be a power of two");
  const auto w = window_taps(window, len);
  std::vector<double> xw(len);
  double wsum = 0.0;
  for (std::size_t n = 0; n < len; ++n) {
    xw[n] = v[n] * w[n];
    wsum += w[n];
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> bins;
  fft.fwd(bins, xw);
  Spectrum s;
  s.length = len;
  s.power.resize(len / 2 + 1);
  for (std::size_t k = 0; k <= len / 2; ++k) s.power[k] = std::norm(bins[k]);
  s.full_scale_power = 0.25 * wsum * wsum;
  return s;
}

inline void write_spectrum_csv(std::ostream& os, const Spectrum& s) {
  os << "frequency,dbfs\r\n";
  os.precision(17);
  for (std::size_t k = 0; k < s.bins(); ++k) os << s.frequency(k) << ',' << s.dbfs(k) << "\r\n";
}

/// Spurious-free dynamic range in dB relative to full scale: minus the largest
/// periodogram value outside signal_bins +/- 1.
inline double sfdr_dbfs(std::span<const double> v, const std::set<std::size_t>& signal_bins,
                        Window window = Window::hann) {
  const Spectrum s = spectrum(v, window);
  std::vector<bool> excluded(s.bins(), false);
  for (std::size_t b : signal_bins) {
    for (std::size_t k = b == 0 ? 0 : b - 1; k <= b + 1 && k < s.bins(); ++k) excluded[k] = true;
  }
  double worst = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t k = 0; k < s.bins(); ++k) {
    if (excluded[k]) continue;
    any = true;
    worst = std::max(worst, s.dbfs(k));
  }
  if (!any) throw MetricError("sfdr_dbfs: every bin is a signal bin");
  return -worst;
}

// ---------------------------------------------------------------------------
// Addition chains

inline constexpr int kMaxChainTarget = 64;

namespace detail {

inline bool extend_chain(std::vector<int>& chain, int target, int steps_left) {
  const int last = chain.back();
  if (last == target) return true;
  if (steps_left == 0) return false;
  // doubling every remaining step is the fastest possible growth
  if ((static_cast<std::int64_t>(last) << steps_left) < target) return false;
  std::array<bool, 2 * kMaxChainTarget + 1> tried{};
  for (std::size_t i = chain.size(); i-- > 0;) {
    for (std::size_t j = i + 1; j-- > 0;) {
      const int s = chain[i] + chain[j];
      if (s <= last || s > target || tried[static_cast<std::size_t>(s)]) continue;
      tried[static_cast<std::size_t>(s)] = true;
      chain.push_back(s);
      if (extend_chain(chain, target, steps_left - 1)) return true;
      chain.pop_back();
    }
  }
  return false;
}

inline std::vector<int> shortest_chain(int k) {
  std::vector<int> chain{1};
  for (int len = 0;; ++len) {
    chain.assign(1, 1);
    if (extend_chain(chain, k, len)) return chain;
  }
}

}  // namespace detail

/// A minimal-length addition chain 1 = c_0 < c_1 < ... < c_r = k.
inline std::vector<int> addition_chain(int k) {
  if (k < 1 || k > kMaxChainTarget) throw ConfigError("addition_chain: k must be in [1, 64]");
  return detail::shortest_chain(k);
}

/// Minimum number of multiplications needed to form (.)^k.
inline int addition_chain_phi(int k) {
  if (k < 1 || k > kMaxChainTarget) throw ConfigError("addition_chain_phi: k must be in [1, 64]");
  static const std::array<int, kMaxChainTarget + 1> table = [] {
    std::array<int, kMaxChainTarget + 1> t{};
    for (int j = 1; j <= kMaxChainTarget; ++j) t[static_cast<std::size_t>(j)] = static_cast<int>(detail::shortest_chain(j).size()) - 1;
    return t;
  }();
  return table[static_cast<std::size_t>(k)];
}

/// S_k = min(k, M+1) phi(k) for k = 2..p_max: each of the non-zero polyphase
/// phases of a post-sampling Hammerstein branch needs its own (.)^k.
inline std::vector<int> static_nonlinearity_terms(int p_max, int order) {
  if (p_max < 2) throw ConfigError("static_nonlinearity_cost: P_max must be >= 2");
  if (order < 0) throw ConfigError("static_nonlinearity_cost: order must be >= 0");
  std::vector<int> terms;
  for (int k = 2; k <= p_max; ++k) terms.push_back(std::min(k, order + 1) * addition_chain_phi(k));
  return terms;
}

inline int static_nonlinearity_cost(int p_max, int order) {
  int total = 0;
  for (int s : static_nonlinearity_terms(p_max, order)) total += s;
  return total;
}

// ---------------------------------------------------------------------------
// Complexity accountant

struct LinearizerShape {
  LinearizerKind kind = LinearizerKind::proposed;
  SamplingModel sampling = SamplingModel::pre;
  int order = 0;     // M
  int branches = 1;  // N or K
};

struct BranchCost {
  std::string label;
  int multiplications = 0;
  int additions = 0;
};

/// Per corrected output sample. Interpolation filters are not counted (they are
/// common to both linearizer kinds). The passthrough folds into the centre tap
/// of the linear branch and costs nothing extra; the offset c0/d0 is one of the
/// linear branch's additions.
struct ComplexityCount {
  int multiplications = 0;
  int additions = 0;
  std::vector<BranchCost> detail;
};

inline ComplexityCount complexity(const LinearizerShape& shape) {
  if (shape.order < 0 || shape.branches < 1) throw ConfigError("complexity: need M >= 0 and at least one branch");
  const int taps = shape.order + 1;
  ComplexityCount c;
  c.detail.push_back({"linear", taps, taps});
  std::vector<int> power_cost;
  if (shape.kind == LinearizerKind::hammerstein && shape.sampling == SamplingModel::post)
    power_cost = static_nonlinearity_terms(shape.branches + 1, shape.order);
  for (int m = 0; m < shape.branches; ++m) {
    BranchCost b;
    b.multiplications = taps;
    b.additions = taps;
    if (shape.kind == LinearizerKind::hammerstein) {
      b.label = "power " + std::to_string(m + 2);
      // pre: v^p = v^{p-1} v shares the chain; post: separate chains per phase
      b.multiplications += shape.sampling == SamplingModel::pre ? 1 : power_cost[static_cast<std::size_t>(m)];
    } else {
      b.label = "bias branch " + std::to_string(m + 1);
      b.additions += 1;
    }
    c.detail.push_back(b);
  }
  for (const auto& b : c.detail) {
    c.multiplications += b.multiplications;
    c.additions += b.additions;
  }
  return c;
}

}  // namespace fdlin
