#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fdlin/distortion.hpp"

using namespace fdlin;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed, double scale = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<Taps> random_rows(std::size_t rows, std::size_t taps, unsigned seed, double scale) {
  std::vector<Taps> r;
  for (std::size_t i = 0; i < rows; ++i) r.push_back(random_vec(taps, seed + static_cast<unsigned>(i), scale));
  return r;
}

// Term-by-term memory polynomial.
std::vector<double> naive_pre(const PreSamplingModel& m, const std::vector<double>& x) {
  std::vector<double> v(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    double acc = m.offset;
    for (std::size_t k = 0; k < m.linear_taps.size(); ++k)
      if (n >= k) acc += m.linear_taps[k] * x[n - k];
    for (std::size_t p = 0; p < m.nonlinear_taps.size(); ++p)
      for (std::size_t k = 0; k < m.nonlinear_taps[p].size(); ++k)
        if (n >= k) acc += m.nonlinear_taps[p][k] * std::pow(x[n - k], static_cast<double>(p + 2));
    v[n] = acc;
  }
  return v;
}

// Every branch evaluated at the high rate: upsample, interpolate, power, filter, keep phase 0.
std::vector<double> high_rate_post(const PostSamplingModel& m, const std::vector<double>& x) {
  std::vector<double> v(x.size(), m.offset);
  const auto q = static_cast<std::size_t>(m.interp_delay);
  for (std::size_t n = 0; n < x.size(); ++n)
    for (std::size_t k = 0; k < m.linear_taps.size(); ++k)
      if (n >= q + k) v[n] += m.linear_taps[k] * x[n - q - k];
  for (std::size_t b = 0; b < m.branch_taps.size(); ++b) {
    const auto p = static_cast<std::size_t>(m.factors[b]);
    std::vector<double> up(x.size() * p, 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) up[n * p] = x[n];
    std::vector<double> u(up.size(), 0.0);
    for (std::size_t n = 0; n < up.size(); ++n)
      for (std::size_t k = 0; k < m.interp_taps[b].size() && k <= n; ++k) u[n] += m.interp_taps[b][k] * up[n - k];
    for (auto& s : u) s = std::pow(s, static_cast<double>(b + 2));
    for (std::size_t n = 0; n < x.size(); ++n)
      for (std::size_t l = 0; l < m.branch_taps[b].size() && l <= n * p; ++l) v[n] += m.branch_taps[b][l] * u[n * p - l];
  }
  return v;
}

std::vector<Signal> tone_set(std::size_t count, std::size_t length, unsigned seed) {
  std::vector<Signal> set;
  for (std::size_t r = 0; r < count; ++r) {
    MultitoneConfig cfg;
    cfg.length = length;
    cfg.gain = 1.0 / 31;
    set.push_back(gen_multitone(cfg, seed + r));
  }
  return set;
}

}  // namespace

TEST(InterpFilter, HalfBandStructure) {
  const auto h = design_interp_filter(2, 48);
  EXPECT_DOUBLE_EQ(h[24], 1.0);
  for (std::size_t n = 0; n < h.size(); n += 2)
    if (n != 24) EXPECT_EQ(h[n], 0.0) << n;
}

TEST(InterpFilter, PolyphaseDcGains) {
  const auto h = design_interp_filter(3, 47);
  for (double g : polyphase_dc_gains(h, 3)) {
    EXPECT_GE(g, 0.999);
    EXPECT_LE(g, 1.001);
  }
  for (int p : {2, 3, 5, 10})
    for (double g : polyphase_dc_gains(design_interp_filter(p, 24 * p), static_cast<std::size_t>(p)))
      EXPECT_NEAR(g, 1.0, 1e-12);
  EXPECT_THROW(design_interp_filter(10, 4), DesignError);
  EXPECT_THROW(design_interp_filter(1, 10), ConfigError);
}

TEST(InterpFilter, ReproducesDenseSinusoid) {
  const int q = 12;
  const auto h = design_interp_filter(2, 4 * q);
  const double w = std::numbers::pi / 8;
  std::vector<double> x(1024);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::sin(w * n);
  const auto y = interpolate(h, x, 2);
  double err = 0.0, sig = 0.0;
  for (std::size_t m = 4 * q; m < y.size(); ++m) {
    const double ideal = std::sin(w * (static_cast<double>(m) - 2.0 * q) / 2.0);
    err += (y[m] - ideal) * (y[m] - ideal);
    sig += ideal * ideal;
  }
  EXPECT_LT(10 * std::log10(err / sig), -60.0);
}

TEST(PreSampling, CentredImpulseLinearBranchIsDelay) {
  PreSamplingModel m;
  m.linear_taps = {0, 0, 0, 1, 0, 0, 0};
  m.nonlinear_taps = std::vector<Taps>(9, Taps(7, 0.0));
  const auto x = random_vec(64, 1);
  const auto v = apply_pre_sampling(m, Signal(x));
  for (std::size_t n = 3; n < x.size(); ++n) EXPECT_EQ(v[n], x[n - 3]);
  EXPECT_EQ(bulk_delay(m), 3u);
}

TEST(PreSampling, ConstantSquare) {
  PreSamplingModel m;
  m.nonlinear_taps = {{1.0}};
  const auto v = apply_pre_sampling(m, Signal(std::vector<double>(8, 0.5)));
  for (std::size_t n = 0; n < v.size(); ++n) EXPECT_DOUBLE_EQ(v[n], 0.75);
}

TEST(PreSampling, MatchesNaiveEvaluator) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    PreSamplingModel m;
    m.offset = 0.01 * seed;
    m.linear_taps = random_vec(7, 100 + seed);
    m.nonlinear_taps = random_rows(9, 7, 200 + seed * 10, 0.3);
    const auto x = random_vec(200, 300 + seed, 0.9);
    const auto v = apply_pre_sampling(m, Signal(x));
    const auto ref = naive_pre(m, x);
    for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(v[n], ref[n], 1e-12 * std::max(1.0, std::abs(ref[n])));
  }
}

TEST(PreSampling, LinearBranchIsLinearAndIdentityHolds) {
  PreSamplingModel m;
  m.linear_taps = random_vec(5, 8);
  m.nonlinear_taps = std::vector<Taps>(3, Taps(5, 0.0));
  const auto a = random_vec(50, 9, 0.4), b = random_vec(50, 10, 0.4);
  std::vector<double> s(50);
  for (std::size_t n = 0; n < 50; ++n) s[n] = 2 * a[n] - b[n];
  const auto va = apply_pre_sampling(m, Signal(a)), vb = apply_pre_sampling(m, Signal(b)), vs = apply_pre_sampling(m, Signal(s));
  for (std::size_t n = 0; n < 50; ++n) EXPECT_NEAR(vs[n], 2 * va[n] - vb[n], 1e-14);

  PreSamplingModel id;
  id.nonlinear_taps = {{0.0}, {0.0}};
  EXPECT_EQ(apply_pre_sampling(id, Signal(a)).vec(), a);
}

TEST(PostSampling, LinearOnly) {
  auto m = make_post_sampling_model(0.0, {0.2, 1.0, -0.1}, std::vector<Taps>(3, Taps(3, 0.0)), 4);
  const auto x = random_vec(80, 3, 0.5);
  const auto v = apply_post_sampling(m, Signal(x));
  const auto ref = delay(filter(m.linear_taps, x), 4);
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(v[n], ref[n], 1e-15);
}

TEST(PostSampling, MatchesHighRateOracle) {
  for (int q : {3, 12}) {
    const auto m = make_post_sampling_model(0.05, random_vec(3, 20), random_rows(9, 3, 30, 0.2), q);
    EXPECT_EQ(m.factors.front(), 2);
    EXPECT_EQ(m.factors.back(), 10);
    const auto x = random_vec(120, 40, 0.8);
    const auto v = apply_post_sampling(m, Signal(x));
    const auto ref = high_rate_post(m, x);
    for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(v[n], ref[n], 1e-10);
  }
}

TEST(PostSampling, MemorylessMatchesPreSampling) {
  const std::vector<Taps> g{{0.3}, {-0.2}, {0.1}, {0.05}};
  const auto post = make_post_sampling_model(0.0, {1.0}, g, 12);
  PreSamplingModel pre;
  pre.linear_taps = {1.0};
  pre.nonlinear_taps = g;
  const auto x = random_vec(300, 5, 0.9);
  const auto vp = apply_post_sampling(post, Signal(x));
  const auto vr = apply_pre_sampling(pre, Signal(x));
  for (std::size_t n = transient(post); n < x.size(); ++n) EXPECT_NEAR(vp[n], vr[n - 12], 1e-6);
}

TEST(PostSampling, ValidationCatchesMisalignment) {
  auto m = make_post_sampling_model(0.0, {1.0, 0.0, 0.0}, random_rows(2, 3, 1, 0.1), 6);
  auto bad = m;
  bad.interp_taps[0].pop_back();
  EXPECT_THROW(bad.validate(), StructureError);
  bad = m;
  bad.interp_taps[1][0] += 0.01;
  EXPECT_THROW(bad.validate(), StructureError);
  bad = m;
  bad.branch_taps[0].push_back(0.0);
  EXPECT_THROW(bad.validate(), StructureError);
}

TEST(Scaling, NonlinearTermScalesLinearly) {
  PreSamplingModel m;
  m.linear_taps = {0.0, 1.0, 0.0};
  m.nonlinear_taps = random_rows(4, 3, 50, 0.3);
  const Signal x(random_vec(64, 51, 0.9));
  const auto v1 = fdlin::apply(DistortionModel(m), x);
  const auto v3 = fdlin::apply(scale_nonlinear(m, 3.0), x);
  const auto v0 = fdlin::apply(scale_nonlinear(m, 0.0), x);
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(v3[n] - v0[n], 3.0 * (v1[n] - v0[n]), 1e-14);
}

TEST(PowerComponents, RecomposeModelOutput) {
  const DistortionModel models[] = {
      [] {
        PreSamplingModel m;
        m.offset = 0.02;
        m.linear_taps = random_vec(3, 60);
        m.nonlinear_taps = random_rows(5, 3, 61, 0.2);
        return DistortionModel(m);
      }(),
      DistortionModel(make_post_sampling_model(0.02, random_vec(3, 62), random_rows(5, 3, 63, 0.2), 5))};
  const Signal x(random_vec(100, 64, 0.6));
  for (const auto& m : models) {
    const auto parts = power_components(m, x.samples());
    for (double g : {0.5, 1.3}) {
      const auto v = fdlin::apply(m, x.scaled(g));
      for (std::size_t n = 0; n < x.size(); ++n) {
        double acc = detail::model_offset(m);
        for (std::size_t p = 0; p < parts.size(); ++p) acc += std::pow(g, static_cast<double>(p + 1)) * parts[p][n];
        EXPECT_NEAR(v[n], acc, 1e-12);
      }
    }
  }
}

TEST(DistortionGain, AgreesWithGenericSearch) {
  const auto set = tone_set(4, 512, 70);
  PreSamplingModel pre;
  pre.linear_taps = {0.0, 1.0, 0.0};
  pre.nonlinear_taps = random_rows(4, 3, 71, 0.1);
  const auto post = make_post_sampling_model(0.0, {0.0, 1.0, 0.0}, random_rows(4, 3, 72, 0.1), 6);
  for (const DistortionModel& m : {DistortionModel(pre), DistortionModel(post)})
    for (double margin : {0.5, 0.98}) {
      const double fast = distortion_gain(m, set, margin);
      const double ref = compute_gain(set, [&](const Signal& s) { return fdlin::apply(m, s); }, margin);
      EXPECT_NEAR(fast, ref, 2e-4 * ref);
      double peak = 0.0;
      for (const auto& s : set) peak = std::max(peak, fdlin::apply(m, s.scaled(fast)).peak());
      EXPECT_LE(peak, margin);
    }
}

TEST(RandomModel, HitsTargetSndr) {
  const auto calib = tone_set(50, 1024, 80);
  const auto gen = gen_random_model(SamplingModel::pre, 6, 10, 30.0, calib, 81);
  EXPECT_NEAR(gen.report.mean_sndr_db, 30.0, 0.5);
  EXPECT_NEAR(mean_distortion_sndr(gen.model, calib), 30.0, 0.5);
  const auto& m = std::get<PreSamplingModel>(gen.model);
  EXPECT_EQ(m.order(), 6);
  EXPECT_EQ(m.max_power(), 10);
  EXPECT_EQ(m.linear_taps, (Taps{0, 0, 0, 1, 0, 0, 0}));
  const auto again = gen_random_model(SamplingModel::pre, 6, 10, 30.0, calib, 81);
  EXPECT_EQ(std::get<PreSamplingModel>(again.model).nonlinear_taps, m.nonlinear_taps);
}

TEST(RandomModel, PostSamplingHitsTarget) {
  const auto calib = tone_set(8, 512, 90);
  const auto gen = gen_random_model(SamplingModel::post, 2, 10, 30.0, calib, 91);
  EXPECT_NEAR(gen.report.mean_sndr_db, 30.0, 0.5);
  EXPECT_NO_THROW(std::get<PostSamplingModel>(gen.model).validate());
}

TEST(RandomModel, ZeroScaleAndMonotoneInScale) {
  const auto calib = tone_set(6, 512, 95);
  const auto inf = gen_random_model(SamplingModel::pre, 2, 5, std::numeric_limits<double>::infinity(), calib, 1);
  EXPECT_TRUE(std::isinf(inf.report.mean_sndr_db));
  const auto gen = gen_random_model(SamplingModel::pre, 2, 5, 30.0, calib, 2);
  EXPECT_TRUE(std::isinf(mean_distortion_sndr(scale_nonlinear(gen.model, 0.0), calib)));
  double prev = std::numeric_limits<double>::infinity();
  for (double s = 0.125; s <= 16.0; s *= 2) {
    const double v = mean_distortion_sndr(scale_nonlinear(gen.model, s), calib);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_THROW(gen_random_model(SamplingModel::pre, 2, 5, -1.0, calib, 1), ConfigError);
  EXPECT_THROW(gen_random_model(SamplingModel::pre, 2, 1, 30.0, calib, 1), ConfigError);
}

TEST(Transient, Lengths) {
  PreSamplingModel pre;
  pre.linear_taps = Taps(7, 0.0);
  pre.nonlinear_taps = {Taps(7, 0.0)};
  EXPECT_EQ(transient(pre), 6u);
  const auto post = make_post_sampling_model(0.0, {0, 1, 0}, {Taps(3, 0.0)}, 12);
  EXPECT_EQ(transient(post), 26u);
  EXPECT_EQ(bulk_delay(post), 13u);
}
