#pragma once

// Test-signal generation: QPSK multi-tone, bandpass filtered white noise,
// uniform quantization, gain selection and least-squares tone estimation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fdlin/error.hpp"
#include "fdlin/fir.hpp"

namespace fdlin {

inline constexpr std::size_t kDefaultLength = 8192;

/// A uniformly sampled real sequence. Immutable once built.
class Signal {
 public:
  Signal() = default;

  explicit Signal(std::vector<double> samples, std::optional<int> bit_depth = std::nullopt)
      : samples_(std::move(samples)), bit_depth_(bit_depth) {
    bound_ = peak_of(samples_);
  }

  /// Builds a signal with an explicit amplitude bound; the bound must cover every sample.
  Signal(std::vector<double> samples, double amplitude_bound, std::optional<int> bit_depth = std::nullopt)
      : samples_(std::move(samples)), bit_depth_(bit_depth), bound_(amplitude_bound) {
    if (peak_of(samples_) > bound_) throw AmplitudeError("Signal: samples exceed the amplitude bound");
  }

  std::span<const double> samples() const noexcept { return samples_; }
  const std::vector<double>& vec() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  double operator[](std::size_t n) const { return samples_[n]; }
  std::optional<int> bit_depth() const noexcept { return bit_depth_; }
  double amplitude_bound() const noexcept { return bound_; }
  double peak() const noexcept { return peak_of(samples_); }

  Signal scaled(double gain) const {
    std::vector<double> out(samples_);
    for (auto& s : out) s *= gain;
    return Signal(std::move(out));
  }

  friend bool operator==(const Signal& a, const Signal& b) {
    return a.samples_ == b.samples_ && a.bit_depth_ == b.bit_depth_;
  }

 private:
  static double peak_of(const std::vector<double>& s) {
    double p = 0.0;
    for (double v : s) p = std::max(p, std::abs(v));
    return p;
  }

  std::vector<double> samples_;
  std::optional<int> bit_depth_;
  double bound_ = 0.0;
};

struct MultitoneConfig {
  std::size_t length = kDefaultLength;
  int num_subcarriers = 64;
  /// Empty selects {1, ..., num_subcarriers/2 - 1}.
  std::vector<int> active_carriers;
  /// Empty selects A_k = 1 for every carrier.
  std::vector<double> amplitudes;
  /// Empty draws each phase from `phase_alphabet`.
  std::vector<double> phases;
  /// Unset draws the offset uniformly from [-pi/num_subcarriers, pi/num_subcarriers].
  std::optional<double> freq_offset;
  double gain = 1.0;
  std::vector<double> phase_alphabet = {std::numbers::pi / 4, -std::numbers::pi / 4, 3 * std::numbers::pi / 4,
                                        -3 * std::numbers::pi / 4};
  /// Fraction of active carriers zeroed per signal (null-subcarrier variant), pattern drawn from the seed.
  double null_fraction = 0.0;
};

namespace detail {

inline std::vector<int> resolved_carriers(const MultitoneConfig& cfg) {
  if (!cfg.active_carriers.empty()) return cfg.active_carriers;
  std::vector<int> k(static_cast<std::size_t>(std::max(0, cfg.num_subcarriers / 2 - 1)));
  std::iota(k.begin(), k.end(), 1);
  return k;
}

}  // namespace detail

inline void validate(const MultitoneConfig& cfg) {
  if (cfg.num_subcarriers < 4) throw ConfigError("multitone: num_subcarriers must be >= 4");
  if (cfg.length == 0) throw ConfigError("multitone: length must be positive");
  const auto carriers = detail::resolved_carriers(cfg);
  if (carriers.empty()) throw ConfigError("multitone: no active carriers");
  for (int k : carriers) {
    if (k < 1 || 2 * k >= cfg.num_subcarriers) {
      std::ostringstream os;
      os << "multitone: carrier index " << k << " outside [1, " << cfg.num_subcarriers / 2 << ")";
      throw ConfigError(os.str());
    }
  }
  if (!cfg.amplitudes.empty() && cfg.amplitudes.size() != carriers.size())
    throw ConfigError("multitone: amplitudes must match the active carrier count");
  if (!cfg.phases.empty() && cfg.phases.size() != carriers.size())
    throw ConfigError("multitone: phases must match the active carrier count");
  if (cfg.phases.empty() && cfg.phase_alphabet.empty()) throw ConfigError("multitone: empty phase alphabet");
  if (cfg.freq_offset && std::abs(*cfg.freq_offset) > std::numbers::pi / cfg.num_subcarriers + 1e-15)
    throw ConfigError("multitone: |freq_offset| must not exceed pi/num_subcarriers");
  if (cfg.null_fraction < 0.0 || cfg.null_fraction >= 1.0) throw ConfigError("multitone: null_fraction must be in [0,1)");
}

/// Per-signal draws of a multi-tone realization.
struct MultitoneDraw {
  std::vector<int> carriers;
  std::vector<double> amplitudes;
  std::vector<double> phases;
  double freq_offset = 0.0;
};

inline MultitoneDraw draw_multitone(const MultitoneConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  MultitoneDraw d;
  d.carriers = detail::resolved_carriers(cfg);
  const double span = std::numbers::pi / cfg.num_subcarriers;
  if (cfg.freq_offset) {
    d.freq_offset = *cfg.freq_offset;
  } else {
    std::uniform_real_distribution<double> off(-span, span);
    d.freq_offset = off(rng);
  }
  d.amplitudes = cfg.amplitudes.empty() ? std::vector<double>(d.carriers.size(), 1.0) : cfg.amplitudes;
  if (cfg.phases.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, cfg.phase_alphabet.size() - 1);
    d.phases.resize(d.carriers.size());
    for (auto& a : d.phases) a = cfg.phase_alphabet[pick(rng)];
  } else {
    d.phases = cfg.phases;
  }
  if (cfg.null_fraction > 0.0) {
    const auto nulls = static_cast<std::size_t>(std::lround(cfg.null_fraction * static_cast<double>(d.carriers.size())));
    std::vector<std::size_t> order(d.carriers.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < nulls && j < order.size(); ++j) d.amplitudes[order[j]] = 0.0;
  }
  return d;
}

/// x(n) = G sum_k A_k sin(w_k n + alpha_k), w_k = 2 pi k / num_subcarriers + dw.
inline Signal gen_multitone(const MultitoneConfig& cfg, std::uint64_t seed) {
  const MultitoneDraw d = draw_multitone(cfg, seed);
  std::vector<double> x(cfg.length, 0.0);
  for (std::size_t j = 0; j < d.carriers.size(); ++j) {
    if (d.amplitudes[j] == 0.0) continue;
    const double w = 2.0 * std::numbers::pi * d.carriers[j] / cfg.num_subcarriers + d.freq_offset;
    const double a = cfg.gain * d.amplitudes[j];
    for (std::size_t n = 0; n < cfg.length; ++n) x[n] += a * std::sin(w * static_cast<double>(n) + d.phases[j]);
  }
  Signal s(std::move(x));
  if (s.peak() > 1.0) throw AmplitudeError("gen_multitone: gain drives the signal beyond unit amplitude");
  return s;
}

/// Linear-phase bandpass FIR (Hann-windowed sinc) with passband [low*pi, high*pi].
inline Taps bandpass_taps(double low, double high, std::size_t order = 256) {
  if (!(low >= 0.0 && low < high && high <= 1.0)) throw ConfigError("bandpass: need 0 <= low < high <= 1");
  const auto win = hann_symmetric(order + 1);
  Taps h(order + 1);
  const double c = static_cast<double>(order) / 2.0;
  for (std::size_t n = 0; n <= order; ++n) {
    const double t = static_cast<double>(n) - c;
    h[n] = win[n] * (high * sinc(high * t) - low * sinc(low * t));
  }
  return h;
}

/// White Gaussian noise through the bandpass filter, scaled so its peak equals `amplitude_bound`.
inline Signal gen_bandpass_noise(std::pair<double, double> band, std::size_t length, std::uint64_t seed,
                                 double amplitude_bound = 1.0, std::size_t order = 256) {
  const Taps h = bandpass_taps(band.first, band.second, order);
  if (length == 0) throw ConfigError("bandpass: length must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> noise(length + order);
  for (auto& s : noise) s = gauss(rng);
  const auto filtered = filter(h, noise);
  std::vector<double> x(filtered.begin() + static_cast<std::ptrdiff_t>(order), filtered.end());
  double peak = 0.0;
  for (double s : x) peak = std::max(peak, std::abs(s));
  for (auto& s : x) s = std::clamp(s * (amplitude_bound / peak), -amplitude_bound, amplitude_bound);
  return Signal(std::move(x), amplitude_bound);
}

/// Mid-tread uniform quantizer, step 2^(1-B), round half away from zero, saturating at [-1, 1-step].
inline double quantize_sample(double x, int bits) {
  const double step = std::ldexp(1.0, 1 - bits);
  const double q = step * std::round(x / step);
  return std::clamp(q, -1.0, 1.0 - step);
}

inline std::vector<double> quantize(std::span<const double> x, int bits) {
  if (bits < 1) throw ConfigError("quantize: bits must be >= 1");
  std::vector<double> out(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) out[n] = quantize_sample(x[n], bits);
  return out;
}

inline Signal quantize(const Signal& x, int bits) { return Signal(quantize(x.samples(), bits), std::optional<int>(bits)); }

/// Largest G (to 1e-4 relative) with max over the set of |distort(G x)| <= margin.
/// `distort` maps a Signal to a Signal.
template <typename Distort>
double compute_gain(std::span<const Signal> set, Distort&& distort, double margin = 1.0) {
  if (!(margin > 0.0 && margin <= 1.0)) throw ConfigError("compute_gain: margin must be in (0, 1]");
  if (set.empty()) throw ConfigError("compute_gain: empty signal set");
  double xmax = 0.0;
  for (const auto& s : set) xmax = std::max(xmax, s.peak());
  if (xmax == 0.0) throw ConfigError("compute_gain: all-zero signal set");

  auto peak_at = [&](double g) {
    double p = 0.0;
    for (const auto& s : set) p = std::max(p, distort(s.scaled(g)).peak());
    return p;
  };

  double lo = margin / xmax;
  double hi = lo;
  if (peak_at(lo) <= margin) {
    hi = 2.0 * lo;
    int guard = 0;
    while (peak_at(hi) <= margin) {
      lo = hi;
      hi *= 2.0;
      if (++guard > 60) throw SearchError("compute_gain: peak does not grow with the gain");
    }
  } else {
    lo = hi / 2.0;
    int guard = 0;
    while (peak_at(lo) > margin) {
      hi = lo;
      lo /= 2.0;
      if (++guard > 60) throw SearchError("compute_gain: no gain keeps the distorted peak below the margin");
    }
  }
  while (hi - lo > 1e-4 * lo) {
    const double mid = 0.5 * (lo + hi);
    (peak_at(mid) <= margin ? lo : hi) = mid;
  }
  for (double frac : {0.25, 0.5, 0.75}) {
    const double p = peak_at(frac * lo);
    if (p > margin) {
      std::ostringstream os;
      os << "compute_gain: non-monotone peak growth (peak " << p << " at G=" << frac * lo << " exceeds margin "
         << margin << " while G=" << lo << " satisfies it)";
      throw SearchError(os.str());
    }
  }
  return lo;
}

struct ToneFit {
  std::vector<double> frequencies;  // rad/sample
  std::vector<double> amplitudes;
  std::vector<double> phases;  // x(n) = sum A sin(w n + phase)
  Signal reconstruction;
};

/// Least-squares fit of sin/cos pairs at known frequencies.
inline ToneFit fit_tones(const Signal& v, std::span<const double> freqs) {
  if (freqs.empty()) throw EstimationError("estimate_reference: no frequencies");
  const auto len = static_cast<Eigen::Index>(v.size());
  const auto cols = static_cast<Eigen::Index>(2 * freqs.size());
  if (len < cols) throw EstimationError("estimate_reference: fewer samples than basis functions");
  Eigen::MatrixXd basis(len, cols);
  for (Eigen::Index n = 0; n < len; ++n) {
    for (std::size_t j = 0; j < freqs.size(); ++j) {
      const double ph = freqs[j] * static_cast<double>(n);
      basis(n, static_cast<Eigen::Index>(2 * j)) = std::sin(ph);
      basis(n, static_cast<Eigen::Index>(2 * j + 1)) = std::cos(ph);
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) throw EstimationError("estimate_reference: rank-deficient basis (duplicate or degenerate frequencies)");
  const Eigen::Map<const Eigen::VectorXd> rhs(v.samples().data(), len);
  const Eigen::VectorXd coef = qr.solve(rhs);
  const Eigen::VectorXd fitted = basis * coef;

  ToneFit fit{std::vector<double>(freqs.begin(), freqs.end()), {}, {}, Signal(std::vector<double>(fitted.data(), fitted.data() + len))};
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    const double s = coef(static_cast<Eigen::Index>(2 * j));
    const double c = coef(static_cast<Eigen::Index>(2 * j + 1));
    fit.amplitudes.push_back(std::hypot(s, c));
    fit.phases.push_back(std::atan2(c, s));
  }
  return fit;
}

/// Reconstructed clean multi-tone from a distorted observation at known frequencies.
inline Signal estimate_reference(const Signal& v, std::span<const double> freqs) {
  return fit_tones(v, freqs).reconstruction;
}

}  // namespace fdlin
