#pragma once

// Nonlinear distortion models of an analog-to-digital interface.
//
// Pre-sampling: a memory polynomial applied to the sampled sequence,
//   v(n) = a0 + sum_k a1(k) x(n-k) + sum_{p=2..Q} sum_k ap(k) x^p(n-k).
//
// Post-sampling: the discrete-time equivalent of an analog parallel
// Hammerstein model sampled after the nonlinearities. Branch p interpolates x
// by P_p (zero insertion + Nyquist lowpass h_p), raises the result to the p-th
// power, filters it with g_p at the high rate and keeps every P_p-th sample.
// Every h_p has group delay q*P_p, i.e. q low-rate samples, and the linear
// branch is delayed by q to stay aligned.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <type_traits>
#include <variant>
#include <vector>

#include "fdlin/analysis.hpp"
#include "fdlin/error.hpp"
#include "fdlin/fir.hpp"
#include "fdlin/signal.hpp"
#include "fdlin/types.hpp"

namespace fdlin {

inline constexpr double kInterpKaiserBeta = 8.0;
inline constexpr double kPolyphaseDcTolerance = 1e-3;

/// Nyquist (P-th band) interpolation lowpass: Kaiser-windowed sinc, cutoff
/// pi/P, DC gain P, exact zeros at centre +/- mP for even orders. Each
/// polyphase component is rescaled to exactly unit DC gain once the raw
/// design is within tolerance, which makes a constant at the input of any
/// phase appear unchanged at its output.
inline Taps design_interp_filter(int factor, int order, double beta = kInterpKaiserBeta) {
  if (factor < 2) throw ConfigError("design_interp_filter: P must be >= 2");
  if (order < 1) throw ConfigError("design_interp_filter: order must be >= 1");
  const auto len = static_cast<std::size_t>(order) + 1;
  const auto win = kaiser(len, beta);
  const double centre = static_cast<double>(order) / 2.0;
  const double p = static_cast<double>(factor);
  Taps h(len);
  for (std::size_t n = 0; n < len; ++n) h[n] = win[n] * sinc((static_cast<double>(n) - centre) / p);
  if (order % 2 == 0) {
    const auto c = static_cast<std::size_t>(order / 2);
    h[c] = 1.0;
    for (std::size_t n = c % static_cast<std::size_t>(factor); n < len; n += static_cast<std::size_t>(factor))
      if (n != c) h[n] = 0.0;
  }
  auto pc = polyphase_decompose(h, static_cast<std::size_t>(factor));
  for (std::size_t i = 0; i < pc.phases.size(); ++i) {
    double dc = 0.0;
    for (double t : pc.phases[i]) dc += t;
    if (std::abs(dc - 1.0) > kPolyphaseDcTolerance) {
      std::ostringstream os;
      os << "design_interp_filter: order " << order << " too small for P=" << factor << " (phase " << i
         << " DC gain " << dc << ")";
      throw DesignError(os.str());
    }
    for (auto& t : pc.phases[i]) t /= dc;
  }
  return polyphase_reconstruct(pc);
}

/// DC gain of every type-1 polyphase component.
inline std::vector<double> polyphase_dc_gains(std::span<const double> h, std::size_t factor) {
  const auto pc = polyphase_decompose(h, factor);
  std::vector<double> gains;
  for (const auto& e : pc.phases) {
    double s = 0.0;
    for (double t : e) s += t;
    gains.push_back(s);
  }
  return gains;
}

// ---------------------------------------------------------------------------

struct PreSamplingModel {
  double offset = 0.0;
  Taps linear_taps{1.0};
  /// nonlinear_taps[p-2] holds a_p, p = 2..Q.
  std::vector<Taps> nonlinear_taps;

  int order() const noexcept { return static_cast<int>(linear_taps.size()) - 1; }
  int max_power() const noexcept { return static_cast<int>(nonlinear_taps.size()) + 1; }

  void validate() const {
    if (linear_taps.empty()) throw StructureError("pre-sampling model: empty linear branch");
    if (nonlinear_taps.empty()) throw StructureError("pre-sampling model: Q must be >= 2");
    for (const auto& a : nonlinear_taps)
      if (a.size() != linear_taps.size()) throw StructureError("pre-sampling model: all branch filters must share order D");
  }
};

struct PostSamplingModel {
  double offset = 0.0;
  Taps linear_taps{1.0};
  /// branch_taps[k-2] holds g_k at the high rate P_k/T, k = 2..Q.
  std::vector<Taps> branch_taps;
  std::vector<int> factors;
  std::vector<Taps> interp_taps;
  /// Group delay of every h_k in low-rate samples.
  int interp_delay = 12;

  int order() const noexcept { return static_cast<int>(linear_taps.size()) - 1; }
  int max_power() const noexcept { return static_cast<int>(branch_taps.size()) + 1; }

  void validate() const {
    if (linear_taps.empty()) throw StructureError("post-sampling model: empty linear branch");
    if (branch_taps.empty()) throw StructureError("post-sampling model: Q must be >= 2");
    if (factors.size() != branch_taps.size() || interp_taps.size() != branch_taps.size())
      throw StructureError("post-sampling model: factors/interp filters must match the branch count");
    if (interp_delay < 0) throw StructureError("post-sampling model: negative interpolation delay");
    for (std::size_t k = 0; k < branch_taps.size(); ++k) {
      if (branch_taps[k].size() != linear_taps.size())
        throw StructureError("post-sampling model: all branch filters must share order D");
      if (factors[k] < 2) throw StructureError("post-sampling model: P_k must be >= 2");
      if (interp_taps[k].size() != static_cast<std::size_t>(2 * interp_delay * factors[k] + 1))
        throw StructureError("post-sampling model: interpolation filter delay is not q*P_k (misaligned branch)");
      const auto gains = polyphase_dc_gains(interp_taps[k], static_cast<std::size_t>(factors[k]));
      for (double g : gains)
        if (std::abs(g - 1.0) > kPolyphaseDcTolerance)
          throw StructureError("post-sampling model: interpolation polyphase DC gain outside tolerance");
    }
  }
};

using DistortionModel = std::variant<PreSamplingModel, PostSamplingModel>;

inline PostSamplingModel make_post_sampling_model(double offset, Taps linear, std::vector<Taps> branches,
                                                  int interp_delay = 12, std::vector<int> factors = {}) {
  PostSamplingModel m;
  m.offset = offset;
  m.linear_taps = std::move(linear);
  m.branch_taps = std::move(branches);
  m.interp_delay = interp_delay;
  if (factors.empty()) {
    for (std::size_t k = 0; k < m.branch_taps.size(); ++k) factors.push_back(static_cast<int>(k) + 2);
  }
  m.factors = std::move(factors);
  for (int p : m.factors) m.interp_taps.push_back(design_interp_filter(p, 2 * interp_delay * p));
  m.validate();
  return m;
}

namespace detail {

inline double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

/// Linear part (offset + linear branch) and unit-scale nonlinear part of a pre-sampling model.
inline void split_pre(const PreSamplingModel& m, std::span<const double> x, std::vector<double>& lin,
                      std::vector<double>& nl) {
  lin.assign(x.size(), m.offset);
  filter_accumulate(m.linear_taps, x, 0, lin);
  nl.assign(x.size(), 0.0);
  std::vector<double> power(x.begin(), x.end());
  for (const auto& taps : m.nonlinear_taps) {
    for (std::size_t n = 0; n < x.size(); ++n) power[n] *= x[n];
    filter_accumulate(taps, power, 0, nl);
  }
}

/// One post-sampling branch: interpolate by `factor`, raise to `power`, filter
/// at the high rate with `taps`, keep phase 0. Accumulates into `out`.
inline void post_branch_accumulate(std::span<const double> interp, int factor, int power, std::span<const double> taps,
                                   std::span<const double> x, std::span<double> out) {
  const auto p = static_cast<std::size_t>(factor);
  const auto pc = polyphase_decompose(interp, p);
  std::vector<std::vector<double>> phase_cache(p);
  for (std::size_t l = 0; l < taps.size(); ++l) {
    if (taps[l] == 0.0) continue;
    const std::size_t i = (p - l % p) % p;
    const std::size_t shift = (l + i) / p;
    auto& s = phase_cache[i];
    if (s.empty()) {
      s = filter(pc.phases[i], x);
      for (auto& u : s) u = ipow(u, power);
    }
    filter_accumulate(std::span<const double>(&taps[l], 1), s, shift, out);
  }
}

inline void split_post(const PostSamplingModel& m, std::span<const double> x, std::vector<double>& lin,
                       std::vector<double>& nl) {
  lin.assign(x.size(), m.offset);
  filter_accumulate(m.linear_taps, x, static_cast<std::size_t>(m.interp_delay), lin);
  nl.assign(x.size(), 0.0);
  for (std::size_t k = 0; k < m.branch_taps.size(); ++k)
    post_branch_accumulate(m.interp_taps[k], m.factors[k], static_cast<int>(k) + 2, m.branch_taps[k], x, nl);
}

inline std::size_t argmax_abs(std::span<const double> t) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < t.size(); ++k)
    if (std::abs(t[k]) > std::abs(t[best])) best = k;
  return best;
}

}  // namespace detail

inline Signal apply_pre_sampling(const PreSamplingModel& m, const Signal& x) {
  std::vector<double> lin, nl;
  detail::split_pre(m, x.samples(), lin, nl);
  for (std::size_t n = 0; n < lin.size(); ++n) lin[n] += nl[n];
  return Signal(std::move(lin));
}

inline Signal apply_post_sampling(const PostSamplingModel& m, const Signal& x) {
  std::vector<double> lin, nl;
  detail::split_post(m, x.samples(), lin, nl);
  for (std::size_t n = 0; n < lin.size(); ++n) lin[n] += nl[n];
  return Signal(std::move(lin));
}

inline Signal apply(const DistortionModel& m, const Signal& x) {
  return std::visit(
      [&](const auto& model) {
        if constexpr (std::is_same_v<std::decay_t<decltype(model)>, PreSamplingModel>)
          return apply_pre_sampling(model, x);
        else
          return apply_post_sampling(model, x);
      },
      m);
}

/// Delay of the dominant linear path; the desired signal aligned with v is x(n - bulk_delay).
inline std::size_t bulk_delay(const DistortionModel& m) {
  if (const auto* pre = std::get_if<PreSamplingModel>(&m)) return detail::argmax_abs(pre->linear_taps);
  const auto& post = std::get<PostSamplingModel>(m);
  return static_cast<std::size_t>(post.interp_delay) + detail::argmax_abs(post.linear_taps);
}

/// Leading output samples affected by start-up; metrics skip them.
inline std::size_t transient(const DistortionModel& m) {
  if (const auto* pre = std::get_if<PreSamplingModel>(&m)) return static_cast<std::size_t>(pre->order());
  const auto& post = std::get<PostSamplingModel>(m);
  return static_cast<std::size_t>(2 * post.interp_delay + post.order());
}

inline SamplingModel sampling_of(const DistortionModel& m) {
  return std::holds_alternative<PreSamplingModel>(m) ? SamplingModel::pre : SamplingModel::post;
}

/// Multiplies every nonlinear-branch coefficient by `s`.
inline DistortionModel scale_nonlinear(DistortionModel m, double s) {
  std::visit(
      [s](auto& model) {
        if constexpr (std::is_same_v<std::decay_t<decltype(model)>, PreSamplingModel>) {
          for (auto& t : model.nonlinear_taps)
            for (auto& c : t) c *= s;
        } else {
          for (auto& t : model.branch_taps)
            for (auto& c : t) c *= s;
        }
      },
      m);
  return m;
}

/// Response to each power separately: parts[0] is the linear branch, parts[p-1]
/// the branch of power p, so that apply(m, g x) = offset + sum_p g^p parts[p-1].
inline std::vector<std::vector<double>> power_components(const DistortionModel& m, std::span<const double> x) {
  std::vector<std::vector<double>> parts;
  if (const auto* pre = std::get_if<PreSamplingModel>(&m)) {
    parts.push_back(filter(pre->linear_taps, x));
    std::vector<double> power(x.begin(), x.end());
    for (const auto& taps : pre->nonlinear_taps) {
      for (std::size_t n = 0; n < x.size(); ++n) power[n] *= x[n];
      parts.push_back(filter(taps, power));
    }
    return parts;
  }
  const auto& post = std::get<PostSamplingModel>(m);
  parts.emplace_back(x.size(), 0.0);
  filter_accumulate(post.linear_taps, x, static_cast<std::size_t>(post.interp_delay), parts.back());
  for (std::size_t k = 0; k < post.branch_taps.size(); ++k) {
    parts.emplace_back(x.size(), 0.0);
    detail::post_branch_accumulate(post.interp_taps[k], post.factors[k], static_cast<int>(k) + 2, post.branch_taps[k],
                                   x, parts.back());
  }
  return parts;
}

namespace detail {

inline double model_offset(const DistortionModel& m) {
  return std::visit([](const auto& model) { return model.offset; }, m);
}

inline double peak_at_gain(const std::vector<std::vector<double>>& parts, double offset, double g) {
  double peak = 0.0;
  const std::size_t len = parts.front().size();
  for (std::size_t n = 0; n < len; ++n) {
    double s = parts.back()[n];
    for (std::size_t p = parts.size() - 1; p-- > 0;) s = s * g + parts[p][n];
    peak = std::max(peak, std::abs(offset + g * s));
  }
  return peak;
}

}  // namespace detail

/// Same contract as compute_gain(set, apply(m, .), margin), evaluated per
/// signal from its power components: G is the smallest per-signal gain.
inline double distortion_gain(const DistortionModel& m, std::span<const Signal> set, double margin = 1.0) {
  if (!(margin > 0.0 && margin <= 1.0)) throw ConfigError("distortion_gain: margin must be in (0, 1]");
  if (set.empty()) throw ConfigError("distortion_gain: empty signal set");
  const double offset = detail::model_offset(m);
  double gain = std::numeric_limits<double>::infinity();
  for (const auto& x : set) {
    if (x.peak() == 0.0) continue;
    const auto parts = power_components(m, x.samples());
    auto peak_at = [&](double g) { return detail::peak_at_gain(parts, offset, g); };
    double lo = margin / x.peak();
    double hi = lo;
    int guard = 0;
    if (peak_at(lo) <= margin) {
      hi = 2.0 * lo;
      while (peak_at(hi) <= margin) {
        lo = hi;
        hi *= 2.0;
        if (++guard > 60) throw SearchError("distortion_gain: peak does not grow with the gain");
      }
    } else {
      lo = hi / 2.0;
      while (peak_at(lo) > margin) {
        hi = lo;
        lo /= 2.0;
        if (++guard > 60) throw SearchError("distortion_gain: no gain keeps the distorted peak below the margin");
      }
    }
    while (hi - lo > 1e-4 * lo) {
      const double mid = 0.5 * (lo + hi);
      (peak_at(mid) <= margin ? lo : hi) = mid;
    }
    for (double frac : {0.25, 0.5, 0.75})
      if (peak_at(frac * lo) > margin) throw SearchError("distortion_gain: non-monotone peak growth");
    gain = std::min(gain, lo);
  }
  if (!std::isfinite(gain)) throw ConfigError("distortion_gain: all-zero signal set");
  return gain;
}

// ---------------------------------------------------------------------------
// Random model generation with SNDR calibration

struct RandomModelOptions {
  /// Quantize the distorted signal before measuring SNDR (matches the evaluation pipeline).
  std::optional<int> bits;
  int interp_delay = 12;
  double tolerance_db = 0.05;
  /// Scale the taps of power p by 1/p!; off gives every power unit-variance taps.
  bool factorial_taper = true;
};

struct CalibrationReport {
  double target_sndr_db = 0.0;
  double mean_sndr_db = 0.0;
  double scale = 0.0;
  int iterations = 0;
};

struct GeneratedModel {
  DistortionModel model;
  CalibrationReport report;
};

namespace detail {

struct CalibrationSet {
  std::vector<std::vector<double>> reference;
  std::vector<std::vector<double>> lin;
  std::vector<std::vector<double>> nl;
  std::size_t first = 0;
  std::optional<int> bits;

  double mean_sndr(double scale) const {
    double acc = 0.0;
    std::vector<double> v;
    for (std::size_t r = 0; r < lin.size(); ++r) {
      v.resize(lin[r].size());
      for (std::size_t n = 0; n < v.size(); ++n) v[n] = lin[r][n] + scale * nl[r][n];
      if (bits) v = quantize(v, *bits);
      const auto len = v.size() - first;
      const double s = sndr_db(std::span<const double>(reference[r]).subspan(first, len),
                               std::span<const double>(v).subspan(first, len));
      if (std::isinf(s)) return s;
      acc += s;
    }
    return acc / static_cast<double>(lin.size());
  }
};

inline CalibrationSet make_calibration_set(const DistortionModel& m, std::span<const Signal> calib,
                                           std::optional<int> bits) {
  CalibrationSet c;
  c.bits = bits;
  c.first = transient(m);
  const std::size_t d = bulk_delay(m);
  for (const auto& x : calib) {
    if (x.size() <= c.first) throw ConfigError("calibration signal shorter than the model transient");
    std::vector<double> lin, nl;
    if (const auto* pre = std::get_if<PreSamplingModel>(&m))
      split_pre(*pre, x.samples(), lin, nl);
    else
      split_post(std::get<PostSamplingModel>(m), x.samples(), lin, nl);
    c.reference.push_back(delay(x.samples(), d));
    c.lin.push_back(std::move(lin));
    c.nl.push_back(std::move(nl));
  }
  return c;
}

inline double factorial(int p) {
  double f = 1.0;
  for (int i = 2; i <= p; ++i) f *= i;
  return f;
}

}  // namespace detail

/// Mean SNDR of the distorted calibration set against the aligned clean signals.
inline double mean_distortion_sndr(const DistortionModel& m, std::span<const Signal> calib,
                                   std::optional<int> bits = std::nullopt) {
  return detail::make_calibration_set(m, calib, bits).mean_sndr(1.0);
}

/// Draws a model with a centred unit-impulse linear branch and i.i.d.
/// Gaussian nonlinear taps (tapered by 1/p! unless disabled), then scales all nonlinear branches
/// by one common factor so that the mean SNDR over `calib` hits the target.
inline GeneratedModel gen_random_model(SamplingModel kind, int order, int max_power, double target_sndr_db,
                                       std::span<const Signal> calib, std::uint64_t seed,
                                       const RandomModelOptions& opt = {}) {
  if (order < 0) throw ConfigError("gen_random_model: D must be >= 0");
  if (max_power < 2) throw ConfigError("gen_random_model: Q must be >= 2");
  if (!(target_sndr_db > 0.0)) throw ConfigError("gen_random_model: target SNDR must be positive");
  if (calib.empty()) throw ConfigError("gen_random_model: empty calibration set");

  const auto taps = static_cast<std::size_t>(order) + 1;
  Taps linear(taps, 0.0);
  linear[static_cast<std::size_t>(order / 2)] = 1.0;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Taps> branches;
  for (int p = 2; p <= max_power; ++p) {
    Taps t(taps);
    const double taper = opt.factorial_taper ? 1.0 / detail::factorial(p) : 1.0;
    for (auto& c : t) c = gauss(rng) * taper;
    branches.push_back(std::move(t));
  }

  DistortionModel base;
  if (kind == SamplingModel::pre) {
    PreSamplingModel m;
    m.linear_taps = linear;
    m.nonlinear_taps = branches;
    m.validate();
    base = m;
  } else {
    base = make_post_sampling_model(0.0, linear, branches, opt.interp_delay);
  }

  GeneratedModel out{base, {}};
  out.report.target_sndr_db = target_sndr_db;
  const auto cal = detail::make_calibration_set(base, calib, opt.bits);

  if (std::isinf(target_sndr_db)) {
    out.model = scale_nonlinear(base, 0.0);
    out.report.scale = 0.0;
    out.report.mean_sndr_db = cal.mean_sndr(0.0);
    return out;
  }

  // bracket: sndr(lo) >= target > sndr(hi)
  double lo = 1.0;
  double hi = 1.0;
  double f = cal.mean_sndr(1.0);
  double fmin = f, fmax = f;
  int it = 0;
  if (f >= target_sndr_db) {
    while (f >= target_sndr_db) {
      lo = hi;
      hi *= 2.0;
      f = cal.mean_sndr(hi);
      fmin = std::min(fmin, f);
      if (++it > 200) break;
    }
  } else {
    while (f < target_sndr_db) {
      hi = lo;
      lo /= 2.0;
      f = cal.mean_sndr(lo);
      fmax = std::max(fmax, f);
      if (++it > 200) break;
    }
  }
  if (it > 200) {
    std::ostringstream os;
    os << "gen_random_model: cannot bracket target " << target_sndr_db << " dB; achieved range [" << fmin << ", "
       << fmax << "] dB";
    throw SearchError(os.str());
  }
  double best = lo;
  double fbest = cal.mean_sndr(lo);
  for (int k = 0; k < 100 && std::abs(fbest - target_sndr_db) > opt.tolerance_db; ++k, ++it) {
    const double mid = std::sqrt(lo * hi);
    const double fm = cal.mean_sndr(mid);
    (fm >= target_sndr_db ? lo : hi) = mid;
    best = mid;
    fbest = fm;
  }
  out.model = scale_nonlinear(base, best);
  out.report.scale = best;
  out.report.mean_sndr_db = fbest;
  out.report.iterations = it;
  return out;
}

}  // namespace fdlin
