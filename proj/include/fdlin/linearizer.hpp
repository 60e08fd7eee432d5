#pragma once

// Runtime compensators: the parallel Hammerstein linearizer and the parallel
// bias-modulus / bias-ReLU linearizer, each in a pre-sampling form and a
// post-sampling polyphase form.
//
// All four share the delta-form linear branch
//   y(n) = v(n - L) + c0 + sum_l dc(l) v(n - q - l) + sum_m branch_m(n),
// with L = q + floor(M/2) the latency and q the interpolation delay (0 for
// pre-sampling). With every learned parameter at zero the output is a pure
// delay of v.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <sstream>
#include <vector>

#include "fdlin/distortion.hpp"
#include "fdlin/error.hpp"
#include "fdlin/fir.hpp"
#include "fdlin/signal.hpp"
#include "fdlin/types.hpp"

namespace fdlin {

/// b_m = -b_max + 2(m-1) b_max / (N-1), m = 1..N; a single branch gets b = 0.
inline std::vector<double> bias_grid(int branches, double b_max) {
  if (branches < 1) throw ConfigError("bias_grid: N must be >= 1");
  if (branches == 1) return {0.0};
  std::vector<double> b(static_cast<std::size_t>(branches));
  for (int m = 0; m < branches; ++m) b[static_cast<std::size_t>(m)] = -b_max + 2.0 * m * b_max / (branches - 1);
  return b;
}

inline double nonlinearity_eval(Nonlinearity f, double v, double b) {
  const double s = v + b;
  return f == Nonlinearity::modulus ? std::abs(s) : std::max(0.0, s);
}

/// Structural parameters shared by design and runtime.
struct LinearizerLayout {
  LinearizerKind kind = LinearizerKind::proposed;
  SamplingModel sampling = SamplingModel::pre;
  int order = 0;
  int branches = 1;
  Nonlinearity nonlinearity = Nonlinearity::modulus;
  /// Post-sampling: interpolation group delay in low-rate samples.
  int interp_delay = 12;
  /// Post-sampling proposed branches: common factor P_m; 0 assigns P_m = m + 1 (m = 1..N), mirroring
  /// the Hammerstein branches.
  int proposed_interp_factor = 0;
  /// Quantize arithmetic results to this many bits (0 = off): the power outputs
  /// and the output for Hammerstein, the output only for the proposed structure.
  int arithmetic_bits = 0;
};

struct LinearizerModel {
  LinearizerKind kind = LinearizerKind::proposed;
  SamplingModel sampling = SamplingModel::pre;
  int order = 0;
  double offset = 0.0;
  Taps linear_delta;
  /// One row of order+1 taps per nonlinear branch (high-rate taps for post-sampling).
  std::vector<Taps> branch_taps;
  double b_max = 0.0;
  std::vector<double> biases;
  std::vector<Nonlinearity> nonlinearities;
  std::vector<int> interp_factors;
  int interp_delay = 0;
  std::vector<Taps> interp_taps;
  int arithmetic_bits = 0;

  int branches() const noexcept { return static_cast<int>(branch_taps.size()); }
  int passthrough_delay() const noexcept { return order / 2; }
  int latency() const noexcept { return passthrough_delay() + (sampling == SamplingModel::post ? interp_delay : 0); }
  /// Exponent used by Hammerstein branch m (0-based).
  static int branch_power(int m) noexcept { return m + 2; }

  /// Look-back in input samples: outputs before this index see start-up zeros.
  int history() const {
    if (sampling == SamplingModel::pre) return order;
    int h = interp_delay + order;
    for (std::size_t m = 0; m < interp_taps.size(); ++m) {
      const int p = interp_factors[m];
      const int phase_len = static_cast<int>((interp_taps[m].size() + static_cast<std::size_t>(p) - 1) / static_cast<std::size_t>(p));
      h = std::max(h, phase_len - 1 + (order + p - 1) / p);
    }
    return h;
  }

  double max_abs_coefficient() const {
    double c = std::abs(offset);
    for (double t : linear_delta) c = std::max(c, std::abs(t));
    for (const auto& row : branch_taps)
      for (double t : row) c = std::max(c, std::abs(t));
    return c;
  }

  LinearizerLayout layout() const {
    LinearizerLayout l;
    l.kind = kind;
    l.sampling = sampling;
    l.order = order;
    l.branches = branches();
    l.nonlinearity = nonlinearities.empty() ? Nonlinearity::modulus : nonlinearities.front();
    l.interp_delay = interp_delay;
    l.arithmetic_bits = arithmetic_bits;
    if (kind == LinearizerKind::proposed && sampling == SamplingModel::post && !interp_factors.empty()) {
      const bool uniform = std::all_of(interp_factors.begin(), interp_factors.end(),
                                       [&](int p) { return p == interp_factors.front(); });
      l.proposed_interp_factor = uniform && branches() > 1 ? interp_factors.front() : 0;
      if (branches() == 1 && interp_factors.front() != 2) l.proposed_interp_factor = interp_factors.front();
    }
    return l;
  }

  /// Checks every structural invariant; `coefficient_bound` > 0 also bounds the learned parameters.
  void validate(double coefficient_bound = 0.0) const {
    auto fail = [](const std::string& what) { throw StructureError("linearizer: " + what); };
    if (order < 0) fail("negative filter order");
    if (branch_taps.empty()) fail("at least one nonlinear branch is required");
    const auto taps = static_cast<std::size_t>(order) + 1;
    if (linear_delta.size() != taps) fail("linear branch must have M+1 taps");
    for (const auto& row : branch_taps)
      if (row.size() != taps) fail("every branch filter must have M+1 taps");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::isfinite(offset) || !std::all_of(linear_delta.begin(), linear_delta.end(), finite)) fail("non-finite tap");
    for (const auto& row : branch_taps)
      if (!std::all_of(row.begin(), row.end(), finite)) fail("non-finite tap");
    if (coefficient_bound > 0.0 && max_abs_coefficient() > coefficient_bound) fail("coefficient exceeds the design bound");
    if (arithmetic_bits < 0) fail("negative arithmetic word length");

    if (kind == LinearizerKind::proposed) {
      if (biases.size() != branch_taps.size() || nonlinearities.size() != branch_taps.size())
        fail("proposed linearizer needs one bias and one nonlinearity per branch");
      const auto grid = bias_grid(branches(), b_max);
      for (std::size_t m = 0; m < grid.size(); ++m)
        if (std::abs(grid[m] - biases[m]) > 1e-12 * std::max(1.0, std::abs(b_max))) fail("biases do not follow the uniform grid for b_max");
    } else if (!biases.empty() || !nonlinearities.empty()) {
      fail("Hammerstein linearizer has no biases");
    }

    if (sampling == SamplingModel::post) {
      if (interp_factors.size() != branch_taps.size() || interp_taps.size() != branch_taps.size())
        fail("post-sampling linearizer lacks polyphase interpolation components");
      if (interp_delay < 0) fail("negative interpolation delay");
      for (std::size_t m = 0; m < interp_taps.size(); ++m) {
        const int p = interp_factors[m];
        if (p < 2) fail("interpolation factor must be >= 2");
        if (kind == LinearizerKind::hammerstein && p != branch_power(static_cast<int>(m)))
          fail("Hammerstein branch p must interpolate by P = p");
        if (interp_taps[m].size() != static_cast<std::size_t>(2 * interp_delay * p + 1))
          fail("interpolation filter delay is not q*P");
        for (double g : polyphase_dc_gains(interp_taps[m], static_cast<std::size_t>(p)))
          if (std::abs(g - 1.0) > kPolyphaseDcTolerance) fail("interpolation polyphase DC gain outside tolerance");
      }
    } else if (!interp_factors.empty() || !interp_taps.empty()) {
      fail("pre-sampling linearizer carries interpolation filters");
    }
  }
};

/// All-zero model (pure passthrough delay) with the given structure.
inline LinearizerModel make_linearizer(const LinearizerLayout& layout, double b_max = 1.0) {
  if (layout.order < 0) throw ConfigError("linearizer: M must be >= 0");
  if (layout.branches < 1) throw ConfigError("linearizer: at least one branch is required");
  LinearizerModel m;
  m.kind = layout.kind;
  m.sampling = layout.sampling;
  m.order = layout.order;
  m.arithmetic_bits = layout.arithmetic_bits;
  const auto taps = static_cast<std::size_t>(layout.order) + 1;
  m.linear_delta.assign(taps, 0.0);
  m.branch_taps.assign(static_cast<std::size_t>(layout.branches), Taps(taps, 0.0));
  if (layout.kind == LinearizerKind::proposed) {
    m.b_max = b_max;
    m.biases = bias_grid(layout.branches, b_max);
    m.nonlinearities.assign(static_cast<std::size_t>(layout.branches), layout.nonlinearity);
  }
  if (layout.sampling == SamplingModel::post) {
    m.interp_delay = layout.interp_delay;
    std::map<int, Taps> designed;
    for (int b = 0; b < layout.branches; ++b) {
      int p = LinearizerModel::branch_power(b);
      if (layout.kind == LinearizerKind::proposed && layout.proposed_interp_factor > 0) p = layout.proposed_interp_factor;
      m.interp_factors.push_back(p);
      auto it = designed.find(p);
      if (it == designed.end()) it = designed.emplace(p, design_interp_filter(p, 2 * layout.interp_delay * p)).first;
      m.interp_taps.push_back(it->second);
    }
  }
  return m;
}

/// Same structure, new bias grid.
inline LinearizerModel with_b_max(LinearizerModel m, double b_max) {
  if (m.kind != LinearizerKind::proposed) return m;
  m.b_max = b_max;
  m.biases = bias_grid(m.branches(), b_max);
  return m;
}

// ---------------------------------------------------------------------------
// Polyphase view of one post-sampling branch

/// H_mi (type-1 interpolation components) and W_mi (type-2 branch-filter
/// components) of branch m; only phases hit by one of the M+1 taps are
/// active, min(P, M+1) of them.
struct BranchPolyphase {
  int factor = 1;
  PolyphaseComponents interp;
  PolyphaseComponents filter;
  std::vector<std::size_t> active_phases;
};

/// Phase i and low-rate delay of high-rate tap l: s(nP - l) = s_i(n - shift).
struct TapPhase {
  std::size_t phase;
  std::size_t shift;
};

inline TapPhase tap_phase(std::size_t l, std::size_t factor) {
  const std::size_t i = (factor - l % factor) % factor;
  return {i, (l + i) / factor};
}

inline BranchPolyphase branch_polyphase(const LinearizerModel& model, int m) {
  if (model.sampling != SamplingModel::post) throw StructureError("branch_polyphase: pre-sampling model");
  const auto idx = static_cast<std::size_t>(m);
  BranchPolyphase bp;
  bp.factor = model.interp_factors.at(idx);
  const auto p = static_cast<std::size_t>(bp.factor);
  bp.interp = polyphase_decompose(model.interp_taps.at(idx), p, PolyphaseType::type1);
  bp.filter = polyphase_decompose(model.branch_taps.at(idx), p, PolyphaseType::type2);
  std::vector<bool> hit(p, false);
  for (std::size_t l = 0; l <= static_cast<std::size_t>(model.order); ++l) hit[tap_phase(l, p).phase] = true;
  for (std::size_t i = 0; i < p; ++i)
    if (hit[i]) bp.active_phases.push_back(i);
  return bp;
}

// ---------------------------------------------------------------------------
// Forward paths

namespace detail {

inline std::vector<double> nonlinear_input(const LinearizerModel& model, int m, std::span<const double> v) {
  const auto idx = static_cast<std::size_t>(m);
  std::vector<double> u(v.begin(), v.end());
  if (model.kind == LinearizerKind::proposed) {
    // single bias addition at the branch input
    for (auto& s : u) s += model.biases[idx];
  }
  return u;
}

inline void apply_static(const LinearizerModel& model, int m, std::vector<double>& s) {
  const auto idx = static_cast<std::size_t>(m);
  if (model.kind == LinearizerKind::proposed) {
    const auto f = model.nonlinearities[idx];
    for (auto& u : s) u = nonlinearity_eval(f, u, 0.0);
  } else {
    const int p = LinearizerModel::branch_power(m);
    for (auto& u : s) u = ipow(u, p);
    if (model.arithmetic_bits > 0)
      for (auto& u : s) u = quantize_sample(u, model.arithmetic_bits);
  }
}

/// Nonlinearity output of branch m per active phase (post) or at the input rate (pre, phase 0).
inline std::map<std::size_t, std::vector<double>> branch_phase_signals(const LinearizerModel& model, int m,
                                                                       std::span<const double> v) {
  std::map<std::size_t, std::vector<double>> out;
  const auto u = nonlinear_input(model, m, v);
  if (model.sampling == SamplingModel::pre) {
    auto s = u;
    apply_static(model, m, s);
    out.emplace(0, std::move(s));
    return out;
  }
  const auto bp = branch_polyphase(model, m);
  for (std::size_t i : bp.active_phases) {
    auto s = filter(bp.interp.phases[i], u);
    apply_static(model, m, s);
    out.emplace(i, std::move(s));
  }
  return out;
}

inline std::vector<double> linear_part(const LinearizerModel& model, std::span<const double> v) {
  std::vector<double> y(v.size(), model.offset);
  const auto q = static_cast<std::size_t>(model.sampling == SamplingModel::post ? model.interp_delay : 0);
  const auto lat = static_cast<std::size_t>(model.latency());
  for (std::size_t n = lat; n < v.size(); ++n) y[n] += v[n - lat];
  filter_accumulate(model.linear_delta, v, q, y);
  return y;
}

}  // namespace detail

/// Unit-tap basis of branch m: branch_m = sum_l taps(l) * basis[l].
inline std::vector<std::vector<double>> branch_basis(const LinearizerModel& model, int m, std::span<const double> v) {
  const auto signals = detail::branch_phase_signals(model, m, v);
  std::vector<std::vector<double>> basis;
  const auto taps = static_cast<std::size_t>(model.order) + 1;
  const std::size_t p = model.sampling == SamplingModel::post ? static_cast<std::size_t>(model.interp_factors[static_cast<std::size_t>(m)]) : 1;
  for (std::size_t l = 0; l < taps; ++l) {
    const auto tp = tap_phase(l, p);
    basis.push_back(delay(signals.at(tp.phase), tp.shift));
  }
  return basis;
}

/// Output of nonlinear branch m alone.
inline std::vector<double> branch_output(const LinearizerModel& model, int m, std::span<const double> v) {
  const auto signals = detail::branch_phase_signals(model, m, v);
  const auto& taps = model.branch_taps[static_cast<std::size_t>(m)];
  const std::size_t p = model.sampling == SamplingModel::post ? static_cast<std::size_t>(model.interp_factors[static_cast<std::size_t>(m)]) : 1;
  std::vector<double> y(v.size(), 0.0);
  for (std::size_t l = 0; l < taps.size(); ++l) {
    const auto tp = tap_phase(l, p);
    filter_accumulate(std::span<const double>(&taps[l], 1), signals.at(tp.phase), tp.shift, y);
  }
  return y;
}

namespace detail {

inline Signal apply_any(const LinearizerModel& model, const Signal& v) {
  auto y = linear_part(model, v.samples());
  for (int m = 0; m < model.branches(); ++m) {
    bool any = false;
    for (double t : model.branch_taps[static_cast<std::size_t>(m)]) any = any || t != 0.0;
    if (!any) continue;
    const auto b = branch_output(model, m, v.samples());
    for (std::size_t n = 0; n < y.size(); ++n) y[n] += b[n];
  }
  if (model.arithmetic_bits > 0) return Signal(quantize(y, model.arithmetic_bits), model.arithmetic_bits);
  return Signal(std::move(y));
}

inline void require(const LinearizerModel& m, LinearizerKind k, SamplingModel s, const char* who) {
  if (m.kind != k || m.sampling != s) throw StructureError(std::string(who) + ": model kind/sampling mismatch");
  if (s == SamplingModel::post && (m.interp_taps.size() != m.branch_taps.size() || m.interp_factors.size() != m.branch_taps.size()))
    throw StructureError(std::string(who) + ": model lacks polyphase interpolation components");
}

}  // namespace detail

/// y(n) = v(n - M/2) + c0 + sum_l dc(l) v(n-l) + sum_m sum_l w_m(l) f(v(n-l) + b_m).
inline Signal apply_proposed_pre(const LinearizerModel& m, const Signal& v) {
  detail::require(m, LinearizerKind::proposed, SamplingModel::pre, "apply_proposed_pre");
  return detail::apply_any(m, v);
}

/// y(n) = v(n - M/2) + d0 + sum_l dd(l) v(n-l) + sum_{p=2..K+1} sum_l d_p(l) v^p(n-l).
inline Signal apply_hammerstein_pre(const LinearizerModel& m, const Signal& v) {
  detail::require(m, LinearizerKind::hammerstein, SamplingModel::pre, "apply_hammerstein_pre");
  return detail::apply_any(m, v);
}

/// Per branch: one bias addition at the input, polyphase interpolation
/// phases H_mi, f(.) per phase, W_mi filtering, all at the input rate.
inline Signal apply_proposed_post(const LinearizerModel& m, const Signal& v) {
  detail::require(m, LinearizerKind::proposed, SamplingModel::post, "apply_proposed_post");
  return detail::apply_any(m, v);
}

/// Per branch: H_ki phases, (.)^p per phase, G_ki filtering and summation at the input rate.
inline Signal apply_hammerstein_post(const LinearizerModel& m, const Signal& v) {
  detail::require(m, LinearizerKind::hammerstein, SamplingModel::post, "apply_hammerstein_post");
  return detail::apply_any(m, v);
}

inline Signal apply(const LinearizerModel& m, const Signal& v) {
  if (m.kind == LinearizerKind::proposed)
    return m.sampling == SamplingModel::pre ? apply_proposed_pre(m, v) : apply_proposed_post(m, v);
  return m.sampling == SamplingModel::pre ? apply_hammerstein_pre(m, v) : apply_hammerstein_post(m, v);
}

}  // namespace fdlin
