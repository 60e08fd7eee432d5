#pragma once

// Least-squares linearizer design: regressor assembly, Tikhonov-regularized
// normal equations, and the (b_max, lambda) sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdlin/analysis.hpp"
#include "fdlin/error.hpp"
#include "fdlin/linearizer.hpp"
#include "fdlin/parallel.hpp"
#include "fdlin/signal.hpp"

namespace fdlin {

/// Rows are output samples n; columns are, in order, the nonlinear-branch
/// basis signals (branch-major, tap-minor), the linear taps v(n - q - l), and
/// a column of ones. b(n) = x(n - L) - v(n - L) with L the linearizer latency.
struct Regressor {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  /// sum of x(n - L)^2 over the same rows
  double reference_energy = 0.0;
};

inline Eigen::Index regressor_columns(int order, int branches) {
  return static_cast<Eigen::Index>((order + 1) * (branches + 1) + 1);
}

/// First output index whose row enters the regressor and the metrics.
inline std::size_t first_valid_row(const LinearizerModel& structure, std::size_t skip) {
  return std::max(skip + static_cast<std::size_t>(structure.latency()), static_cast<std::size_t>(structure.history()));
}

/// Regressor for any linearizer structure; the learned taps of `structure` are ignored.
/// `skip` leading samples of x/v are treated as start-up and never enter a row.
inline Regressor build_regressor(const LinearizerModel& structure, const Signal& x, const Signal& v, std::size_t skip = 0) {
  if (x.size() != v.size()) throw ConfigError("build_regressor: reference and distorted lengths differ");
  const std::size_t len = v.size();
  const std::size_t first = first_valid_row(structure, skip);
  if (first >= len) throw ConfigError("build_regressor: signal shorter than the start-up window");
  const auto rows = static_cast<Eigen::Index>(len - first);
  const auto taps = static_cast<std::size_t>(structure.order) + 1;
  const int branches = structure.branches();

  Regressor r;
  r.A.resize(rows, regressor_columns(structure.order, branches));
  Eigen::Index col = 0;
  auto put = [&](const std::vector<double>& s) {
    for (Eigen::Index i = 0; i < rows; ++i) r.A(i, col) = s[first + static_cast<std::size_t>(i)];
    ++col;
  };
  for (int m = 0; m < branches; ++m)
    for (const auto& s : branch_basis(structure, m, v.samples())) put(s);
  const auto q = static_cast<std::size_t>(structure.sampling == SamplingModel::post ? structure.interp_delay : 0);
  for (std::size_t l = 0; l < taps; ++l) put(delay(v.samples(), q + l));
  r.A.col(col).setOnes();

  const auto lat = static_cast<std::size_t>(structure.latency());
  r.b.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::size_t n = first + static_cast<std::size_t>(i) - lat;
    r.b(i) = x[n] - v[n];
    r.reference_energy += x[n] * x[n];
  }
  return r;
}

/// Pre-sampling proposed regressor for an explicit bias list.
inline Regressor build_regressor(const Signal& x, const Signal& v, std::span<const double> biases, Nonlinearity f,
                                 int order, std::size_t skip = 0) {
  if (biases.empty()) throw ConfigError("build_regressor: at least one bias is required");
  LinearizerLayout layout;
  layout.order = order;
  layout.branches = static_cast<int>(biases.size());
  layout.nonlinearity = f;
  auto structure = make_linearizer(layout);
  structure.biases.assign(biases.begin(), biases.end());
  return build_regressor(structure, x, v, skip);
}

/// Accumulated sum_r A_r^T A_r and sum_r A_r^T b_r.
class NormalSystem {
 public:
  explicit NormalSystem(Eigen::Index columns)
      : lower_(Eigen::MatrixXd::Zero(columns, columns)), rhs_(Eigen::VectorXd::Zero(columns)) {}

  void add(const Regressor& r) {
    if (r.A.cols() != lower_.cols() || r.A.rows() != r.b.size()) throw ConfigError("NormalSystem: regressor shape mismatch");
    lower_.selfadjointView<Eigen::Lower>().rankUpdate(r.A.transpose());
    rhs_.noalias() += r.A.transpose() * r.b;
    btb_ += r.b.squaredNorm();
    reference_energy_ += r.reference_energy;
    rows_ += static_cast<std::size_t>(r.A.rows());
  }

  Eigen::Index columns() const noexcept { return lower_.cols(); }
  Eigen::MatrixXd gram() const { return lower_.selfadjointView<Eigen::Lower>(); }
  const Eigen::VectorXd& rhs() const noexcept { return rhs_; }
  double btb() const noexcept { return btb_; }
  double reference_energy() const noexcept { return reference_energy_; }
  std::size_t rows() const noexcept { return rows_; }

  /// sum_r ||b_r - A_r w||^2 without revisiting the data.
  double residual_energy(const Eigen::VectorXd& w) const {
    const double e = btb_ - 2.0 * w.dot(rhs_) + w.dot(lower_.selfadjointView<Eigen::Lower>() * w);
    return std::max(0.0, e);
  }

 private:
  Eigen::MatrixXd lower_;
  Eigen::VectorXd rhs_;
  double btb_ = 0.0;
  double reference_energy_ = 0.0;
  std::size_t rows_ = 0;
};

/// w = (lambda I + G)^{-1} r by Cholesky with one refinement step, checked
/// against ||(lambda I + G) w - r|| <= 1e-8 ||r|| (1e-12 absolute for r = 0).
inline Eigen::VectorXd solve_regularized_ls(const NormalSystem& system, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("solve_regularized_ls: lambda must be finite and >= 0");
  Eigen::MatrixXd m = system.gram();
  m.diagonal().array() += lambda;
  const Eigen::VectorXd& rhs = system.rhs();

  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  bool singular = llt.info() != Eigen::Success;
  if (!singular) {
    const Eigen::ArrayXd pivots = llt.matrixLLT().diagonal().array().square();
    singular = pivots.minCoeff() <= std::numeric_limits<double>::epsilon() * static_cast<double>(m.rows()) * pivots.maxCoeff();
  }
  if (singular) {
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    const double pivot = ldlt.vectorD().minCoeff();
    std::ostringstream os;
    os << "regularized normal matrix is singular (lambda = " << lambda << ", smallest pivot = " << pivot << ")";
    throw SingularMatrixError(os.str(), pivot);
  }

  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return Eigen::VectorXd::Zero(rhs.size());
  Eigen::VectorXd w = llt.solve(rhs);
  w += llt.solve(rhs - m * w);
  const double residual = (m * w - rhs).norm();
  if (!(residual <= 1e-8 * rhs_norm)) {
    std::ostringstream os;
    os << "normal-equation residual " << residual << " exceeds 1e-8 * " << rhs_norm << " (lambda = " << lambda << ")";
    throw DesignError(os.str());
  }
  return w;
}

inline Eigen::VectorXd solve_regularized_ls(std::span<const Regressor> regressors, double lambda) {
  if (regressors.empty()) throw ConfigError("solve_regularized_ls: no regressors");
  NormalSystem system(regressors.front().A.cols());
  for (const auto& r : regressors) system.add(r);
  return solve_regularized_ls(system, lambda);
}

/// Reciprocal condition number of G + lambda I for every lambda, from one eigen-decomposition of G.
inline std::vector<double> reciprocal_condition(const NormalSystem& system, std::span<const double> lambdas) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(system.gram(), Eigen::EigenvaluesOnly);
  const double lo = std::max(0.0, eig.eigenvalues().minCoeff());
  const double hi = std::max(0.0, eig.eigenvalues().maxCoeff());
  std::vector<double> out;
  for (double l : lambdas) out.push_back(hi + l > 0.0 ? (lo + l) / (hi + l) : 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

inline std::vector<double> lambda_grid(double lo = 1e-10, double hi = 1e-1, int per_decade = 10) {
  if (!(lo > 0.0) || !(hi >= lo) || per_decade < 1) throw ConfigError("lambda_grid: need 0 < lo <= hi");
  const double decades = std::log10(hi / lo);
  const int steps = static_cast<int>(std::lround(decades * per_decade));
  std::vector<double> g;
  for (int i = 0; i <= steps; ++i) g.push_back(lo * std::pow(10.0, static_cast<double>(i) / per_decade));
  g.back() = hi;
  return g;
}

struct DesignSpec {
  LinearizerLayout layout;
  /// S, the number of b_max candidates in [b_lower, b_upper]
  int bias_grid_size = 11;
  double b_lower = 0.5;
  double b_upper = 1.5;
  std::vector<double> lambdas = lambda_grid();
  double coefficient_bound = 1.0;
  double min_rcond = 1e-12;
  /// leading samples of every training pair excluded as start-up
  std::size_t skip = 0;
  unsigned jobs = 1;

  void validate() const {
    if (layout.order < 0) throw ConfigError("design: M must be >= 0");
    if (layout.branches < 1) throw ConfigError("design: at least one nonlinear branch is required");
    if (bias_grid_size < 1) throw ConfigError("design: S must be >= 1");
    if (!(b_lower < b_upper)) throw ConfigError("design: b_range must satisfy b_l < b_u");
    if (!(b_lower > 0.0)) throw ConfigError("design: b_l must be positive");
    if (lambdas.empty()) throw ConfigError("design: empty lambda grid");
    for (double l : lambdas)
      if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("design: lambda values must be finite and >= 0");
    if (!(coefficient_bound > 0.0)) throw ConfigError("design: coefficient bound must be positive");
  }
};

/// b_max candidates; a Hammerstein design has none to sweep.
inline std::vector<double> b_max_grid(const DesignSpec& spec) {
  if (spec.layout.kind == LinearizerKind::hammerstein) return {0.0};
  const int s = spec.bias_grid_size;
  if (s == 1) return {0.5 * (spec.b_lower + spec.b_upper)};
  std::vector<double> g;
  for (int i = 0; i < s; ++i) g.push_back(spec.b_lower + (spec.b_upper - spec.b_lower) * i / (s - 1));
  return g;
}

/// A reference signal x and the distorted observation v of it, time-aligned.
struct TrainingPair {
  Signal reference;
  Signal distorted;
};

struct DesignReport {
  /// training-set sum of squared errors of the selected design
  double E = 0.0;
  double chosen_b_max = 0.0;
  double chosen_lambda = 0.0;
  double rcond = 0.0;
  /// 10 log10(reference energy / E) over the training rows
  double train_sndr = 0.0;
  double coefficient_max_abs = 0.0;
  std::size_t candidates = 0;
  std::size_t feasible = 0;
};

struct DesignResult {
  LinearizerModel model;
  DesignReport report;
};

inline void unpack_coefficients(LinearizerModel& model, const Eigen::VectorXd& w) {
  const auto taps = static_cast<std::size_t>(model.order) + 1;
  if (w.size() != regressor_columns(model.order, model.branches())) throw ConfigError("unpack_coefficients: size mismatch");
  Eigen::Index k = 0;
  for (auto& row : model.branch_taps)
    for (std::size_t l = 0; l < taps; ++l) row[l] = w(k++);
  for (std::size_t l = 0; l < taps; ++l) model.linear_delta[l] = w(k++);
  model.offset = w(k);
}

namespace detail {

struct Candidate {
  std::size_t bias_index = 0;
  std::size_t lambda_index = 0;
  double E = std::numeric_limits<double>::infinity();
  double rcond = 0.0;
  double max_abs = std::numeric_limits<double>::infinity();
  bool feasible = false;
  bool solved = false;
  Eigen::VectorXd w;
};

struct BiasTaskResult {
  std::vector<Candidate> candidates;
  double reference_energy = 0.0;
};

inline BiasTaskResult sweep_lambda(const LinearizerModel& structure, std::span<const TrainingPair> train,
                                   const DesignSpec& spec, std::size_t bias_index) {
  NormalSystem system(regressor_columns(structure.order, structure.branches()));
  for (const auto& pair : train) system.add(build_regressor(structure, pair.reference, pair.distorted, spec.skip));
  const auto rcond = reciprocal_condition(system, spec.lambdas);
  BiasTaskResult out;
  out.reference_energy = system.reference_energy();
  for (std::size_t j = 0; j < spec.lambdas.size(); ++j) {
    Candidate c;
    c.bias_index = bias_index;
    c.lambda_index = j;
    c.rcond = rcond[j];
    try {
      c.w = solve_regularized_ls(system, spec.lambdas[j]);
      c.solved = true;
      c.E = system.residual_energy(c.w);
      c.max_abs = c.w.size() ? c.w.cwiseAbs().maxCoeff() : 0.0;
      c.feasible = c.rcond >= spec.min_rcond && c.max_abs <= spec.coefficient_bound;
    } catch (const DesignError&) {
      c.solved = false;
    }
    out.candidates.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// Sweeps b_max (proposed only) and lambda; keeps the feasible candidate
/// (rcond >= min_rcond, all |w| <= coefficient_bound) with the smallest
/// training error, earliest grid index on ties.
inline DesignResult design_linearizer(std::span<const TrainingPair> train, const DesignSpec& spec) {
  spec.validate();
  if (train.empty()) throw ConfigError("design: empty training set");
  const auto grid = b_max_grid(spec);
  std::vector<LinearizerModel> structures;
  for (double b : grid) structures.push_back(make_linearizer(spec.layout, b));

  std::vector<detail::BiasTaskResult> results(grid.size());
  parallel_for(grid.size(), spec.jobs,
               [&](std::size_t i) { results[i] = detail::sweep_lambda(structures[i], train, spec, i); });

  const detail::Candidate* best = nullptr;
  const detail::Candidate* best_infeasible = nullptr;
  std::size_t total = 0, feasible = 0;
  for (const auto& r : results) {
    for (const auto& c : r.candidates) {
      ++total;
      if (c.feasible) {
        ++feasible;
        if (!best || c.E < best->E) best = &c;
      } else if (c.solved && (!best_infeasible || c.max_abs < best_infeasible->max_abs)) {
        best_infeasible = &c;
      }
    }
  }
  if (!best) {
    std::ostringstream os;
    os << "no (b_max, lambda) candidate satisfies the design constraints";
    if (best_infeasible)
      os << "; best infeasible: b_max = " << grid[best_infeasible->bias_index]
         << ", lambda = " << spec.lambdas[best_infeasible->lambda_index] << ", max|w| = " << best_infeasible->max_abs
         << ", rcond = " << best_infeasible->rcond << ", E = " << best_infeasible->E;
    throw DesignError(os.str());
  }

  DesignResult out;
  out.model = structures[best->bias_index];
  unpack_coefficients(out.model, best->w);
  auto& rep = out.report;
  rep.E = best->E;
  rep.chosen_b_max = grid[best->bias_index];
  rep.chosen_lambda = spec.lambdas[best->lambda_index];
  rep.rcond = best->rcond;
  const double energy = results[best->bias_index].reference_energy;
  rep.train_sndr = best->E > 0.0 ? 10.0 * std::log10(energy / best->E) : kInfiniteSndr;
  rep.coefficient_max_abs = best->max_abs;
  rep.candidates = total;
  rep.feasible = feasible;
  out.model.validate(spec.coefficient_bound);
  return out;
}

/// Redesigns the taps with b_max pinned (lambda still swept).
inline DesignResult design_with_fixed_b_max(std::span<const TrainingPair> train, DesignSpec spec, double b_max) {
  if (spec.layout.kind != LinearizerKind::proposed) return design_linearizer(train, spec);
  spec.bias_grid_size = 1;
  spec.b_lower = b_max * (1.0 - 1e-12);
  spec.b_upper = b_max * (1.0 + 1e-12);
  auto result = design_linearizer(train, spec);
  result.model = with_b_max(result.model, b_max);
  result.report.chosen_b_max = b_max;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct SignalScore {
  double before = 0.0;
  double after = 0.0;
};

/// SNDR of v against x and of y against x delayed by the latency, both over the same reference samples.
inline SignalScore score_signal(const LinearizerModel& model, const TrainingPair& pair, std::size_t skip = 0) {
  const auto& x = pair.reference;
  const auto& v = pair.distorted;
  if (x.size() != v.size()) throw ConfigError("evaluate: reference and distorted lengths differ");
  const auto lat = static_cast<std::size_t>(model.latency());
  const std::size_t first = first_valid_row(model, skip);
  if (first >= x.size()) throw ConfigError("evaluate: signal shorter than the start-up window");
  const Signal y = apply(model, v);
  const std::size_t count = x.size() - first;
  const auto ref = x.samples().subspan(first - lat, count);
  return {sndr_db(ref, v.samples().subspan(first - lat, count)), sndr_db(ref, y.samples().subspan(first, count))};
}

struct EvalReport {
  std::vector<SignalScore> per_signal;
  double mean_before = 0.0;
  double mean_after = 0.0;
  double var_before = 0.0;
  double var_after = 0.0;
  ComplexityCount complexity;
};

inline std::pair<double, double> mean_and_variance(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (!std::isfinite(mean)) return {mean, 0.0};
  double var = 0.0;
  for (double s : v) var += (s - mean) * (s - mean);
  return {mean, var / static_cast<double>(v.size())};
}

inline LinearizerShape shape_of(const LinearizerModel& m) { return {m.kind, m.sampling, m.order, m.branches()}; }

inline EvalReport evaluate_linearizer(const LinearizerModel& model, std::span<const TrainingPair> eval,
                                      std::size_t skip = 0, unsigned jobs = 1) {
  model.validate();
  EvalReport rep;
  rep.per_signal.resize(eval.size());
  parallel_for(eval.size(), jobs, [&](std::size_t i) { rep.per_signal[i] = score_signal(model, eval[i], skip); });
  std::vector<double> before, after;
  for (const auto& s : rep.per_signal) {
    before.push_back(s.before);
    after.push_back(s.after);
  }
  std::tie(rep.mean_before, rep.var_before) = mean_and_variance(before);
  std::tie(rep.mean_after, rep.var_after) = mean_and_variance(after);
  rep.complexity = complexity(shape_of(model));
  return rep;
}

}  // namespace fdlin
