#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fdlin/linearizer.hpp"
#include "oracles.hpp"

using namespace fdlin;

using oracle::high_rate_post;
using oracle::naive_pre;
using oracle::random_vec;
using oracle::randomized;

TEST(BiasGrid, Examples) {
  EXPECT_EQ(bias_grid(3, 1.0), (std::vector<double>{-1, 0, 1}));
  EXPECT_EQ(bias_grid(2, 0.5), (std::vector<double>{-0.5, 0.5}));
  EXPECT_EQ(bias_grid(1, 0.7), (std::vector<double>{0.0}));
  const auto g = bias_grid(12, 0.9);
  for (std::size_t m = 0; m < g.size(); ++m) {
    EXPECT_NEAR(g[m], -g[g.size() - 1 - m], 1e-15);
    if (m > 0) EXPECT_NEAR(g[m] - g[m - 1], 1.8 / 11, 1e-15);
  }
  EXPECT_THROW(bias_grid(0, 1.0), ConfigError);
}

TEST(Nonlinearity, Examples) {
  EXPECT_NEAR(nonlinearity_eval(Nonlinearity::modulus, -0.3, 0.1), 0.2, 1e-16);
  EXPECT_EQ(nonlinearity_eval(Nonlinearity::relu, -0.5, 0.2), 0.0);
  for (double v : {-0.9, -0.2, 0.0, 0.4, 1.0})
    for (double b : {-0.7, 0.0, 0.3})
      EXPECT_DOUBLE_EQ(nonlinearity_eval(Nonlinearity::relu, v, b) + nonlinearity_eval(Nonlinearity::relu, -v, -b),
                       nonlinearity_eval(Nonlinearity::modulus, v, b));
}

TEST(Linearizer, PassthroughForAllShapes) {
  const auto v = random_vec(300, 1, 0.9);
  for (auto kind : {LinearizerKind::proposed, LinearizerKind::hammerstein})
    for (auto sampling : {SamplingModel::pre, SamplingModel::post})
      for (int order : {0, 1, 2, 6})
        for (int branches : {1, 4, 12}) {
          LinearizerLayout layout{kind, sampling, order, branches};
          layout.interp_delay = 4;
          const auto m = make_linearizer(layout, 0.8);
          ASSERT_NO_THROW(m.validate(1.0));
          const auto y = apply(m, Signal(v));
          const auto lat = static_cast<std::size_t>(m.latency());
          EXPECT_EQ(lat, static_cast<std::size_t>(order / 2 + (sampling == SamplingModel::post ? 4 : 0)));
          for (std::size_t n = 0; n < v.size(); ++n) ASSERT_EQ(y[n], n >= lat ? v[n - lat] : 0.0);
        }
}

TEST(Linearizer, SimpleClosedForms) {
  const auto v = random_vec(50, 2, 0.9);
  auto p = make_linearizer({LinearizerKind::proposed, SamplingModel::pre, 0, 1});
  p.branch_taps[0] = {1.0};
  auto y = apply_proposed_pre(p, Signal(v));
  for (std::size_t n = 0; n < v.size(); ++n) EXPECT_DOUBLE_EQ(y[n], v[n] + std::abs(v[n]));

  auto h = make_linearizer({LinearizerKind::hammerstein, SamplingModel::pre, 0, 1});
  h.branch_taps[0] = {1.0};
  y = apply_hammerstein_pre(h, Signal(v));
  for (std::size_t n = 0; n < v.size(); ++n) EXPECT_DOUBLE_EQ(y[n], v[n] + v[n] * v[n]);
}

TEST(Linearizer, PreSamplingMatchesNaive) {
  const auto v = random_vec(200, 3, 0.95);
  for (auto kind : {LinearizerKind::proposed, LinearizerKind::hammerstein})
    for (auto f : {Nonlinearity::modulus, Nonlinearity::relu})
      for (int order : {0, 3, 6}) {
        LinearizerLayout layout{kind, SamplingModel::pre, order, 5, f};
        const auto m = randomized(layout, 0.9, 10 + static_cast<unsigned>(order));
        const auto y = apply(m, Signal(v));
        const auto ref = naive_pre(m, v);
        for (std::size_t n = 0; n < v.size(); ++n) EXPECT_NEAR(y[n], ref[n], 1e-12);
      }
}

TEST(Linearizer, HammersteinPostMatchesHighRate) {
  const auto v = random_vec(160, 4, 0.9);
  for (int order : {0, 2, 5}) {
    LinearizerLayout layout{LinearizerKind::hammerstein, SamplingModel::post, order, 9};
    layout.interp_delay = 6;
    const auto m = randomized(layout, 0.0, 20 + static_cast<unsigned>(order));
    ASSERT_EQ(m.interp_factors.back(), 10);
    const auto y = apply_hammerstein_post(m, Signal(v));
    const auto ref = high_rate_post(m, v);
    for (std::size_t n = 0; n < v.size(); ++n) EXPECT_NEAR(y[n], ref[n], 1e-10);
  }
}

TEST(Linearizer, ProposedPostMatchesHighRate) {
  const auto v = random_vec(160, 5, 0.9);
  for (int p : {2, 3, 5, 10})
    for (auto f : {Nonlinearity::modulus, Nonlinearity::relu}) {
      LinearizerLayout layout{LinearizerKind::proposed, SamplingModel::post, 4, 3, f};
      layout.interp_delay = 6;
      layout.proposed_interp_factor = p;
      const auto m = randomized(layout, 0.8, 30 + static_cast<unsigned>(p));
      const auto y = apply_proposed_post(m, Signal(v));
      const auto ref = high_rate_post(m, v);
      // the bias enters ahead of the interpolator, so start-up differs until the filters fill
      for (std::size_t n = static_cast<std::size_t>(m.history()); n < v.size(); ++n) EXPECT_NEAR(y[n], ref[n], 1e-6);
    }
}

TEST(Linearizer, ProposedPostDefaultFactorsFollowBranches) {
  LinearizerLayout layout{LinearizerKind::proposed, SamplingModel::post, 2, 4};
  layout.interp_delay = 3;
  const auto m = randomized(layout, 1.0, 40);
  EXPECT_EQ(m.interp_factors, (std::vector<int>{2, 3, 4, 5}));
  const auto v = random_vec(100, 6, 0.8);
  const auto y = apply(m, Signal(v));
  const auto ref = high_rate_post(m, v);
  for (std::size_t n = static_cast<std::size_t>(m.history()); n < v.size(); ++n) EXPECT_NEAR(y[n], ref[n], 1e-6);
}

TEST(Linearizer, ConstantInputGivesMemorylessBranchValue) {
  LinearizerLayout layout{LinearizerKind::proposed, SamplingModel::post, 3, 2};
  layout.interp_delay = 5;
  layout.proposed_interp_factor = 4;
  auto m = randomized(layout, 0.6, 50);
  const double c = 0.37;
  const std::vector<double> v(120, c);
  for (int b = 0; b < m.branches(); ++b) {
    const auto out = branch_output(m, b, v);
    double expected = 0.0;
    for (double w : m.branch_taps[static_cast<std::size_t>(b)]) expected += w * nonlinearity_eval(m.nonlinearities[static_cast<std::size_t>(b)], c, m.biases[static_cast<std::size_t>(b)]);
    for (std::size_t n = static_cast<std::size_t>(m.history()); n < v.size(); ++n) EXPECT_NEAR(out[n], expected, 1e-12);
  }
}

TEST(Linearizer, ZeroPolyphaseComponents) {
  for (int order : {0, 2, 4}) {
    LinearizerLayout layout{LinearizerKind::hammerstein, SamplingModel::post, order, 9};
    layout.interp_delay = 4;
    const auto m = make_linearizer(layout);
    for (int b = 0; b < m.branches(); ++b) {
      const auto bp = branch_polyphase(m, b);
      const int k = b + 2;
      EXPECT_EQ(static_cast<int>(bp.active_phases.size()), std::min(k, order + 1));
      EXPECT_EQ(k - static_cast<int>(bp.active_phases.size()), std::max(0, k - order - 1));
    }
  }
}

TEST(Linearizer, TapPhase) {
  // s(nP - l) = s_i(n - shift) with s_i(n) = s(nP - i)
  for (std::size_t p : {1u, 2u, 3u, 7u})
    for (std::size_t l = 0; l < 20; ++l) {
      const auto tp = tap_phase(l, p);
      EXPECT_LT(tp.phase, p);
      EXPECT_EQ(tp.shift * p - tp.phase, l);
    }
}

TEST(Linearizer, BranchAdditivity) {
  LinearizerLayout layout{LinearizerKind::proposed, SamplingModel::pre, 4, 6};
  const auto m = randomized(layout, 1.1, 60);
  const auto v = random_vec(120, 7, 0.9);
  const auto y = apply(m, Signal(v));
  auto lin = m;
  for (auto& row : lin.branch_taps) std::fill(row.begin(), row.end(), 0.0);
  auto acc = apply(lin, Signal(v)).vec();
  for (int b = 0; b < m.branches(); ++b) {
    const auto part = branch_output(m, b, v);
    for (std::size_t n = 0; n < acc.size(); ++n) acc[n] += part[n];
  }
  for (std::size_t n = 0; n < acc.size(); ++n) EXPECT_NEAR(y[n], acc[n], 1e-13);
}

TEST(Linearizer, BasisReconstructsBranch) {
  for (auto sampling : {SamplingModel::pre, SamplingModel::post}) {
    LinearizerLayout layout{LinearizerKind::hammerstein, sampling, 3, 3};
    layout.interp_delay = 3;
    const auto m = randomized(layout, 0.0, 70);
    const auto v = random_vec(90, 8, 0.9);
    for (int b = 0; b < m.branches(); ++b) {
      const auto basis = branch_basis(m, b, v);
      const auto out = branch_output(m, b, v);
      for (std::size_t n = 0; n < v.size(); ++n) {
        double acc = 0.0;
        for (std::size_t l = 0; l < basis.size(); ++l) acc += m.branch_taps[static_cast<std::size_t>(b)][l] * basis[l][n];
        EXPECT_NEAR(out[n], acc, 1e-13);
      }
    }
  }
}

TEST(Linearizer, InternalQuantization) {
  auto m = make_linearizer({LinearizerKind::hammerstein, SamplingModel::pre, 0, 1});
  m.branch_taps[0] = {1.0};
  m.arithmetic_bits = 4;
  const std::vector<double> v{0.3};
  // 0.09 -> 0.125 at 4 bits, then 0.3 + 0.125 = 0.425 -> 0.375
  EXPECT_DOUBLE_EQ(apply(m, Signal(v))[0], 0.375);
}

TEST(Linearizer, ValidationAndKindChecks) {
  auto m = make_linearizer({LinearizerKind::proposed, SamplingModel::pre, 2, 3}, 1.0);
  auto bad = m;
  bad.biases[1] = 0.1;
  EXPECT_THROW(bad.validate(), StructureError);
  bad = m;
  bad.branch_taps[0][0] = 1.5;
  EXPECT_NO_THROW(bad.validate());
  EXPECT_THROW(bad.validate(1.0), StructureError);
  bad = m;
  bad.linear_delta.push_back(0.0);
  EXPECT_THROW(bad.validate(), StructureError);
  bad = m;
  bad.branch_taps[2][1] = std::nan("");
  EXPECT_THROW(bad.validate(), StructureError);
  EXPECT_THROW(apply_hammerstein_pre(m, Signal({0.1})), StructureError);
  EXPECT_THROW(apply_proposed_post(m, Signal({0.1})), StructureError);

  auto post = make_linearizer({LinearizerKind::hammerstein, SamplingModel::post, 2, 3});
  post.interp_taps.clear();
  EXPECT_THROW(apply_hammerstein_post(post, Signal({0.1})), StructureError);
  auto h = make_linearizer({LinearizerKind::hammerstein, SamplingModel::pre, 2, 3});
  h.biases = {0, 0, 0};
  EXPECT_THROW(h.validate(), StructureError);
  EXPECT_THROW(make_linearizer({LinearizerKind::proposed, SamplingModel::pre, -1, 3}), ConfigError);
}
