#include <cmath>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "fdlin/analysis.hpp"
#include "fdlin/signal.hpp"

using namespace fdlin;

TEST(Multitone, CosineFromQuarterPhase) {
  MultitoneConfig cfg;
  cfg.length = 256;
  cfg.active_carriers = {1};
  cfg.phases = {std::numbers::pi / 2};
  cfg.freq_offset = 0.0;
  const auto x = gen_multitone(cfg, 1);
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(x[n], std::cos(2 * std::numbers::pi * n / 64.0), 1e-12);
}

TEST(Multitone, OnGridSupport) {
  MultitoneConfig cfg;
  cfg.length = 8192;
  cfg.freq_offset = 0.0;
  cfg.gain = 1.0 / 31;
  const auto x = gen_multitone(cfg, 5);
  const auto s = spectrum(x.samples(), Window::rectangular);
  std::set<std::size_t> expected;
  for (std::size_t k = 1; k <= 31; ++k) expected.insert(128 * k);
  double peak = 0.0;
  for (double p : s.power) peak = std::max(peak, p);
  for (std::size_t k = 0; k < s.bins(); ++k) {
    if (expected.count(k))
      EXPECT_GT(s.power[k], 1e-3 * peak) << k;
    else
      EXPECT_LT(s.power[k], 1e-20 * peak) << k;
  }
}

TEST(Multitone, PhasesFromQpskAlphabet) {
  MultitoneConfig cfg;
  cfg.length = 64;
  const auto d = draw_multitone(cfg, 77);
  ASSERT_EQ(d.phases.size(), 31u);
  const std::set<double> alphabet(cfg.phase_alphabet.begin(), cfg.phase_alphabet.end());
  std::set<double> seen;
  for (double a : d.phases) {
    EXPECT_TRUE(alphabet.count(a));
    seen.insert(a);
  }
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_LE(std::abs(d.freq_offset), std::numbers::pi / 64);
}

TEST(Multitone, DeterministicAndBounded) {
  MultitoneConfig cfg;
  cfg.length = 1024;
  cfg.gain = 1.0 / 31;
  const auto a = gen_multitone(cfg, 9);
  const auto b = gen_multitone(cfg, 9);
  const auto c = gen_multitone(cfg, 10);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_LE(a.peak(), cfg.gain * 31 + 1e-12);
}

TEST(Multitone, NullCarriersAreZeroed) {
  MultitoneConfig cfg;
  cfg.null_fraction = 0.25;
  const auto d = draw_multitone(cfg, 3);
  const auto zeros = std::count(d.amplitudes.begin(), d.amplitudes.end(), 0.0);
  EXPECT_EQ(zeros, std::lround(0.25 * 31));
}

TEST(Multitone, RejectsBadConfig) {
  MultitoneConfig cfg;
  cfg.active_carriers = {32};
  EXPECT_THROW(gen_multitone(cfg, 1), ConfigError);
  cfg.active_carriers = {0};
  EXPECT_THROW(gen_multitone(cfg, 1), ConfigError);
  cfg.active_carriers = {1};
  cfg.freq_offset = 0.1;
  EXPECT_THROW(gen_multitone(cfg, 1), ConfigError);
  MultitoneConfig loud;
  loud.length = 256;
  EXPECT_THROW(gen_multitone(loud, 1), AmplitudeError);
}

TEST(BandpassNoise, OccupiesRequestedBand) {
  const auto x = gen_bandpass_noise({0.2, 0.8}, 1 << 15, 4);
  EXPECT_NEAR(x.peak(), 1.0, 1e-12);
  const auto s = spectrum(x.samples());
  double in = 0.0, out_peak = 0.0, in_mean = 0.0;
  std::size_t in_count = 0;
  for (std::size_t k = 0; k < s.bins(); ++k) {
    const double f = 2.0 * s.frequency(k);  // fraction of pi
    if (f > 0.25 && f < 0.75) {
      in += s.power[k];
      ++in_count;
    } else if (f < 0.15 || f > 0.85) {
      out_peak = std::max(out_peak, s.power[k]);
    }
  }
  in_mean = in / static_cast<double>(in_count);
  EXPECT_LT(10 * std::log10(out_peak / in_mean), -60.0);
}

TEST(BandpassNoise, FullBandIsNearlyWhite) {
  const auto h = bandpass_taps(0.0, 1.0);
  // passband covers everything: centre tap dominates
  double rest = 0.0;
  for (std::size_t n = 0; n < h.size(); ++n)
    if (n != 128) rest += h[n] * h[n];
  EXPECT_LT(rest, 1e-3 * h[128] * h[128]);
  EXPECT_THROW(bandpass_taps(0.5, 0.5), ConfigError);
}

TEST(Quantize, Law) {
  EXPECT_EQ(quantize_sample(0.0, 12), 0.0);
  EXPECT_EQ(quantize_sample(0.3, 2), 0.5);
  EXPECT_EQ(quantize_sample(-0.74, 2), -0.5);
  EXPECT_EQ(quantize_sample(0.9, 2), 0.5);
  EXPECT_EQ(quantize_sample(-1.0, 2), -1.0);
  EXPECT_EQ(quantize_sample(0.25, 2), 0.5);   // half away from zero
  EXPECT_EQ(quantize_sample(-0.25, 2), -0.5);
}

TEST(Quantize, IdempotentAndBoundedError) {
  MultitoneConfig cfg;
  cfg.length = 4096;
  cfg.gain = 0.95 / 31;
  const auto x = gen_multitone(cfg, 2);
  for (int bits : {4, 10, 12}) {
    const auto q = quantize(x, bits);
    EXPECT_EQ(quantize(q, bits), q);
    EXPECT_EQ(q.bit_depth(), bits);
    const double step = std::ldexp(1.0, 1 - bits);
    for (std::size_t n = 0; n < x.size(); ++n)
      if (x[n] <= 1 - step) EXPECT_LE(std::abs(q[n] - x[n]), step / 2 + 1e-15);
  }
}

TEST(Quantize, MultitoneSnrFollowsNoiseModel) {
  MultitoneConfig cfg;
  cfg.gain = 1.0 / 31;
  const auto raw = gen_multitone(cfg, 11);
  const auto x = raw.scaled(0.999 / raw.peak());
  double power = 0.0;
  for (double s : x.samples()) power += s * s;
  power /= static_cast<double>(x.size());
  for (int bits : {10, 12}) {
    const double step = std::ldexp(1.0, 1 - bits);
    const double predicted = 10 * std::log10(power / (step * step / 12));
    EXPECT_NEAR(sndr_db(x.samples(), quantize(x, bits).samples()), predicted, 0.3);
  }
}

TEST(ComputeGain, IdentityModel) {
  std::vector<Signal> set{Signal({0.1, -0.4, 0.2}), Signal({0.5, 0.0, -0.25})};
  const double g = compute_gain(set, [](const Signal& s) { return s; }, 0.9);
  EXPECT_NEAR(g, 0.9 / 0.5, 1e-4 * g);
}

TEST(ComputeGain, SquareModelAgainstScan) {
  // v = x + x^2
  const Signal x({1.0, -0.6, 0.3, -1.0, 0.8});
  const auto square = [](const Signal& s) {
    std::vector<double> v(s.vec());
    for (auto& a : v) a += a * a;
    return Signal(std::move(v));
  };
  const std::vector<Signal> set{x};
  const double g = compute_gain(set, square, 1.0);
  double best = 0.0;
  for (int i = 1; i <= 200000; ++i) {
    const double t = i * 1e-5;
    if (square(x.scaled(t)).peak() <= 1.0) best = t;
    else break;
  }
  EXPECT_NEAR(g, best, 2e-4 * best);
  EXPECT_NEAR(g, (std::sqrt(5.0) - 1) / 2, 2e-4);
}

TEST(ComputeGain, MonotoneInMargin) {
  const std::vector<Signal> set{Signal({0.3, -0.7, 0.5})};
  const auto cubic = [](const Signal& s) {
    std::vector<double> v(s.vec());
    for (auto& a : v) a += 0.2 * a * a * a;
    return Signal(std::move(v));
  };
  double prev = 0.0;
  for (double m : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    const double g = compute_gain(set, cubic, m);
    EXPECT_GE(g, prev);
    prev = g;
  }
  EXPECT_THROW(compute_gain(set, cubic, 0.0), ConfigError);
}

TEST(EstimateReference, ExactTone) {
  const double w = 2 * std::numbers::pi * 73 / 8192;
  std::vector<double> v(1024);
  for (std::size_t n = 0; n < v.size(); ++n) v[n] = 0.7 * std::sin(w * n + 0.3);
  const std::vector<double> f{w};
  const auto fit = fit_tones(Signal(v), f);
  EXPECT_NEAR(fit.amplitudes[0], 0.7, 0.7e-10);
  EXPECT_NEAR(fit.phases[0], 0.3, 1e-10);
}

TEST(EstimateReference, ResidualIsInjectedHarmonic) {
  const double w = 2 * std::numbers::pi * 93 / 8192;
  std::vector<double> clean(8192), v(8192);
  const double a3 = 0.5 * std::pow(10.0, -40.0 / 20);
  for (std::size_t n = 0; n < v.size(); ++n) {
    clean[n] = 0.5 * std::sin(w * n + 1.0);
    v[n] = clean[n] + a3 * std::sin(3 * w * n + 0.2);
  }
  const std::vector<double> f{w};
  const auto est = estimate_reference(Signal(v), f);
  for (std::size_t n = 0; n < v.size(); ++n) EXPECT_NEAR(v[n] - est[n], v[n] - clean[n], 1e-8);
}

TEST(EstimateReference, ThreeTonesAndProjection) {
  std::vector<double> f;
  for (int k : {73, 93, 113}) f.push_back(2 * std::numbers::pi * k / 8192);
  std::vector<double> v(8192);
  for (std::size_t n = 0; n < v.size(); ++n)
    v[n] = 0.3 * std::sin(f[0] * n) + 0.2 * std::sin(f[1] * n + 1) + 0.25 * std::sin(f[2] * n - 2) +
           1e-3 * std::sin(2 * f[0] * n);
  const auto fit = fit_tones(Signal(v), f);
  EXPECT_NEAR(fit.amplitudes[0], 0.3, 1e-5);
  EXPECT_NEAR(fit.amplitudes[1], 0.2, 1e-5);
  EXPECT_NEAR(fit.amplitudes[2], 0.25, 1e-5);
  const auto again = estimate_reference(fit.reconstruction, f);
  for (std::size_t n = 0; n < v.size(); ++n) EXPECT_NEAR(again[n], fit.reconstruction[n], 1e-10);
}

TEST(EstimateReference, DuplicateFrequenciesRejected) {
  const std::vector<double> f{0.1, 0.1};
  EXPECT_THROW(estimate_reference(Signal(std::vector<double>(64, 0.5)), f), EstimationError);
}
