#pragma once

// Batch experiment pipeline: config, seeded signal sets, and the generate /
// design / evaluate / robustness / complexity stages with their file outputs.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdlin/analysis.hpp"
#include "fdlin/design.hpp"
#include "fdlin/distortion.hpp"
#include "fdlin/linearizer.hpp"
#include "fdlin/parallel.hpp"
#include "fdlin/serialization.hpp"
#include "fdlin/signal.hpp"
#include "fdlin/toml_lite.hpp"

namespace fdlin::experiment {

namespace fs = std::filesystem;

/// A regenerated signal does not match the checksum recorded at generation.
class RegenerationError : public IoError {
 public:
  using IoError::IoError;
};

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  std::string id = "experiment";
  SamplingModel sampling = SamplingModel::pre;
  std::uint64_t seed = 1;
  std::string output = "out";
  unsigned jobs = 1;

  struct Distortion {
    int order = 6;
    int max_power = 10;
    double target_sndr_db = 30.0;
    int interp_delay = 12;
    bool factorial_taper = true;
  } distortion;

  struct Signals {
    int subcarriers = 64;
    /// empty selects 1 .. subcarriers/2 - 1
    std::vector<int> carriers;
    std::size_t length = 8192;
    int bits = 12;
    std::size_t train_count = 50;
    std::size_t eval_count = 500;
    double gain_margin = 0.98;
    /// word length of the training reference; 0 keeps it unquantized
    int reference_bits = 12;
  } signal;

  struct Grid {
    std::vector<LinearizerKind> kinds{LinearizerKind::proposed, LinearizerKind::hammerstein};
    std::vector<int> orders{6};
    std::vector<int> proposed_branches{12};
    std::vector<int> hammerstein_branches{9};
    Nonlinearity nonlinearity = Nonlinearity::modulus;
    int bias_grid_size = 11;
    double b_lower = 0.5;
    double b_upper = 1.5;
    double lambda_lo = 1e-10;
    double lambda_hi = 1e-1;
    int lambda_per_decade = 10;
    double coefficient_bound = 1.0;
    int proposed_interp_factor = 0;
    int interp_delay = 12;
    /// Hammerstein power outputs and every linearizer output (0 = off)
    int arithmetic_bits = 0;
    /// learned parameters rounded to this word length before evaluation (0 = off)
    int coefficient_bits = 0;
  } design;

  struct Robustness {
    double null_fraction = 0.25;
    /// passband edges in units of pi rad/sample
    double band_low = 0.2;
    double band_high = 0.8;
    std::vector<double> bias_perturbations{0.03, 0.05};
    /// linearizer tags to examine; empty examines every grid point
    std::vector<std::string> models;
  } robustness;

  bool spectra = true;

  void validate() const {
    if (id.empty()) throw ConfigError("config: empty experiment id");
    if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
    if (distortion.order < 0) throw ConfigError("config: distortion.order must be >= 0");
    if (distortion.max_power < 2) throw ConfigError("config: distortion.max_power must be >= 2");
    if (!(distortion.target_sndr_db > 0.0)) throw ConfigError("config: distortion.target_sndr_db must be positive");
    if (distortion.interp_delay < 1) throw ConfigError("config: distortion.interp_delay must be >= 1");
    if (signal.bits < 2 || signal.bits > 30) throw ConfigError("config: signal.bits must be in [2, 30]");
    if (signal.reference_bits < 0) throw ConfigError("config: signal.reference_bits must be >= 0");
    if (signal.train_count < 1) throw ConfigError("config: signal.train_count must be >= 1");
    if (signal.eval_count < signal.train_count) throw ConfigError("config: signal.eval_count must be >= signal.train_count");
    if (signal.length < 64) throw ConfigError("config: signal.length must be >= 64");
    if (!(signal.gain_margin > 0.0 && signal.gain_margin <= 1.0)) throw ConfigError("config: signal.gain_margin must be in (0, 1]");
    if (design.kinds.empty() || design.orders.empty()) throw ConfigError("config: design grid needs kinds and orders");
    for (int m : design.orders)
      if (m < 0) throw ConfigError("config: design.orders must be >= 0");
    for (auto k : design.kinds) {
      const auto& b = k == LinearizerKind::proposed ? design.proposed_branches : design.hammerstein_branches;
      if (b.empty()) throw ConfigError("config: empty branch list for " + std::string(to_string(k)));
      for (int n : b)
        if (n < 1) throw ConfigError("config: branch counts must be >= 1");
    }
    if (design.arithmetic_bits < 0 || design.coefficient_bits < 0) throw ConfigError("config: word lengths must be >= 0");
    if (design.proposed_interp_factor < 0 || design.proposed_interp_factor == 1)
      throw ConfigError("config: design.proposed_interp_factor must be 0 or >= 2");
    if (design.interp_delay < 1) throw ConfigError("config: design.interp_delay must be >= 1");
    if (!(robustness.null_fraction >= 0.0 && robustness.null_fraction < 1.0))
      throw ConfigError("config: robustness.null_fraction must be in [0, 1)");
    if (!(robustness.band_low >= 0.0 && robustness.band_low < robustness.band_high && robustness.band_high <= 1.0))
      throw ConfigError("config: robustness band must satisfy 0 <= low < high <= 1");
    for (double p : robustness.bias_perturbations)
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("config: bias perturbations must be in (0, 1)");
    MultitoneConfig tone;
    tone.num_subcarriers = signal.subcarriers;
    tone.active_carriers = signal.carriers;
    tone.length = signal.length;
    fdlin::validate(tone);
    DesignSpec probe;
    probe.bias_grid_size = design.bias_grid_size;
    probe.b_lower = design.b_lower;
    probe.b_upper = design.b_upper;
    probe.lambdas = lambda_grid(design.lambda_lo, design.lambda_hi, design.lambda_per_decade);
    probe.coefficient_bound = design.coefficient_bound;
    probe.validate();
  }
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be a table");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + where + (where.empty() ? "" : ".") + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    if constexpr (std::is_same_v<T, double>) {
      out = real_from_json(j.at(key));
    } else {
      out = j.at(key).get<T>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  ExperimentConfig c;
  detail::check_keys(j, "", {"id", "sampling", "seed", "output", "jobs", "distortion", "signal", "design", "robustness", "spectra"});
  read(j, "id", c.id);
  if (j.contains("sampling")) c.sampling = parse_sampling(j.at("sampling").get<std::string>());
  read(j, "seed", c.seed);
  read(j, "output", c.output);
  read(j, "jobs", c.jobs);
  read(j, "spectra", c.spectra);
  if (j.contains("distortion")) {
    const auto& d = j.at("distortion");
    detail::check_keys(d, "distortion", {"order", "max_power", "target_sndr_db", "interp_delay", "factorial_taper"});
    read(d, "order", c.distortion.order);
    read(d, "max_power", c.distortion.max_power);
    read(d, "target_sndr_db", c.distortion.target_sndr_db);
    read(d, "interp_delay", c.distortion.interp_delay);
    read(d, "factorial_taper", c.distortion.factorial_taper);
  }
  if (j.contains("signal")) {
    const auto& s = j.at("signal");
    detail::check_keys(s, "signal", {"type", "subcarriers", "carriers", "carrier_range", "length", "bits", "train_count",
                                     "eval_count", "gain_margin", "reference_bits"});
    if (s.contains("type") && s.at("type").get<std::string>() != "multitone")
      throw ConfigError("config: signal.type must be 'multitone'");
    read(s, "subcarriers", c.signal.subcarriers);
    read(s, "carriers", c.signal.carriers);
    if (s.contains("carrier_range")) {
      if (s.contains("carriers")) throw ConfigError("config: give either signal.carriers or signal.carrier_range");
      const auto r = s.at("carrier_range").get<std::vector<int>>();
      if (r.size() != 2 || r[0] > r[1]) throw ConfigError("config: signal.carrier_range must be [first, last]");
      for (int k = r[0]; k <= r[1]; ++k) c.signal.carriers.push_back(k);
    }
    read(s, "length", c.signal.length);
    read(s, "bits", c.signal.bits);
    read(s, "train_count", c.signal.train_count);
    read(s, "eval_count", c.signal.eval_count);
    read(s, "gain_margin", c.signal.gain_margin);
    read(s, "reference_bits", c.signal.reference_bits);
  }
  if (j.contains("design")) {
    const auto& d = j.at("design");
    detail::check_keys(d, "design", {"kinds", "orders", "proposed_branches", "hammerstein_branches", "nonlinearity",
                                     "bias_grid_size", "b_range", "lambda_range", "lambda_per_decade",
                                     "coefficient_bound", "proposed_interp_factor", "interp_delay", "arithmetic_bits",
                                     "coefficient_bits"});
    if (d.contains("kinds")) {
      c.design.kinds.clear();
      for (const auto& k : d.at("kinds")) c.design.kinds.push_back(parse_kind(k.get<std::string>()));
    }
    read(d, "orders", c.design.orders);
    read(d, "proposed_branches", c.design.proposed_branches);
    read(d, "hammerstein_branches", c.design.hammerstein_branches);
    if (d.contains("nonlinearity")) c.design.nonlinearity = parse_nonlinearity(d.at("nonlinearity").get<std::string>());
    read(d, "bias_grid_size", c.design.bias_grid_size);
    if (d.contains("b_range")) {
      const auto& r = d.at("b_range");
      if (!r.is_array() || r.size() != 2) throw ConfigError("config: design.b_range must be [low, high]");
      c.design.b_lower = real_from_json(r[0]);
      c.design.b_upper = real_from_json(r[1]);
    }
    if (d.contains("lambda_range")) {
      const auto& r = d.at("lambda_range");
      if (!r.is_array() || r.size() != 2) throw ConfigError("config: design.lambda_range must be [low, high]");
      c.design.lambda_lo = real_from_json(r[0]);
      c.design.lambda_hi = real_from_json(r[1]);
    }
    read(d, "lambda_per_decade", c.design.lambda_per_decade);
    read(d, "coefficient_bound", c.design.coefficient_bound);
    read(d, "proposed_interp_factor", c.design.proposed_interp_factor);
    read(d, "interp_delay", c.design.interp_delay);
    read(d, "arithmetic_bits", c.design.arithmetic_bits);
    read(d, "coefficient_bits", c.design.coefficient_bits);
  }
  if (j.contains("robustness")) {
    const auto& r = j.at("robustness");
    detail::check_keys(r, "robustness", {"null_fraction", "band", "bias_perturbations", "models"});
    read(r, "null_fraction", c.robustness.null_fraction);
    if (r.contains("band")) {
      const auto& b = r.at("band");
      if (!b.is_array() || b.size() != 2) throw ConfigError("config: robustness.band must be [low, high]");
      c.robustness.band_low = real_from_json(b[0]);
      c.robustness.band_high = real_from_json(b[1]);
    }
    read(r, "bias_perturbations", c.robustness.bias_perturbations);
    read(r, "models", c.robustness.models);
  }
  c.validate();
  return c;
}

/// TOML unless the file name ends in ".json".
inline ExperimentConfig load_config(const std::string& path) {
  const bool is_json = fs::path(path).extension() == ".json";
  return config_from_json(is_json ? read_json(path) : toml_lite::parse_file(path));
}

// ---------------------------------------------------------------------------
// Seeds and signal sets

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Consecutive seed blocks: training, evaluation, null-subcarrier, bandpass noise, spectral probe.
struct SeedPlan {
  std::uint64_t base = 1;
  std::size_t train_count = 0;
  std::size_t eval_count = 0;

  std::uint64_t train(std::size_t i) const { return base + i; }
  std::uint64_t eval(std::size_t i) const { return base + train_count + i; }
  std::uint64_t nulls(std::size_t i) const { return base + train_count + eval_count + i; }
  std::uint64_t bandpass(std::size_t i) const { return base + train_count + 2 * eval_count + i; }
  std::uint64_t probe() const { return base + train_count + 3 * eval_count; }
  std::uint64_t model() const { return splitmix64(base); }
};

/// FNV-1a over the IEEE-754 bit patterns, as 16 hex digits.
inline std::string checksum(const Signal& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : s.samples()) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct Manifest {
  std::string id;
  SamplingModel sampling = SamplingModel::pre;
  SeedPlan seeds;
  std::size_t length = 0;
  int bits = 12;
  int reference_bits = 12;
  int subcarriers = 64;
  std::vector<int> carriers;
  /// per-carrier amplitude before G; keeps every raw multi-tone within [-1, 1]
  double base_gain = 1.0;
  double gain = 1.0;
  std::string train_checksum;
  std::string eval_checksum;
  CalibrationReport calibration;

  MultitoneConfig tone(double null_fraction = 0.0, std::optional<double> offset = std::nullopt) const {
    MultitoneConfig t;
    t.length = length;
    t.num_subcarriers = subcarriers;
    t.active_carriers = carriers;
    t.gain = base_gain;
    t.null_fraction = null_fraction;
    t.freq_offset = offset;
    return t;
  }

  Signal raw(std::uint64_t seed) const { return gen_multitone(tone(), seed); }
  Signal clean(std::uint64_t seed) const { return raw(seed).scaled(gain); }
};

inline nlohmann::json to_json(const Manifest& m) {
  return {{"version", kFormatVersion},
          {"type", "manifest"},
          {"id", m.id},
          {"sampling", std::string(to_string(m.sampling))},
          {"seeds",
           {{"base", m.seeds.base},
            {"model", m.seeds.model()},
            {"train_first", m.seeds.train(0)},
            {"eval_first", m.seeds.eval(0)},
            {"null_first", m.seeds.nulls(0)},
            {"bandpass_first", m.seeds.bandpass(0)},
            {"probe", m.seeds.probe()}}},
          {"train_count", m.seeds.train_count},
          {"eval_count", m.seeds.eval_count},
          {"length", m.length},
          {"bits", m.bits},
          {"reference_bits", m.reference_bits},
          {"subcarriers", m.subcarriers},
          {"carriers", m.carriers},
          {"base_gain", m.base_gain},
          {"gain", m.gain},
          {"train_checksum", m.train_checksum},
          {"eval_checksum", m.eval_checksum},
          {"calibration",
           {{"target_sndr_db", real_to_json(m.calibration.target_sndr_db)},
            {"mean_sndr_db", real_to_json(m.calibration.mean_sndr_db)},
            {"scale", m.calibration.scale},
            {"iterations", m.calibration.iterations}}}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  fdlin::detail::check_version(j, "manifest");
  Manifest m;
  m.id = j.at("id").get<std::string>();
  m.sampling = parse_sampling(j.at("sampling").get<std::string>());
  m.seeds.base = j.at("seeds").at("base").get<std::uint64_t>();
  m.seeds.train_count = j.at("train_count").get<std::size_t>();
  m.seeds.eval_count = j.at("eval_count").get<std::size_t>();
  m.length = j.at("length").get<std::size_t>();
  m.bits = j.at("bits").get<int>();
  m.reference_bits = j.at("reference_bits").get<int>();
  m.subcarriers = j.at("subcarriers").get<int>();
  m.carriers = j.at("carriers").get<std::vector<int>>();
  m.base_gain = j.at("base_gain").get<double>();
  m.gain = j.at("gain").get<double>();
  m.train_checksum = j.at("train_checksum").get<std::string>();
  m.eval_checksum = j.at("eval_checksum").get<std::string>();
  const auto& c = j.at("calibration");
  m.calibration.target_sndr_db = real_from_json(c.at("target_sndr_db"));
  m.calibration.mean_sndr_db = real_from_json(c.at("mean_sndr_db"));
  m.calibration.scale = c.at("scale").get<double>();
  m.calibration.iterations = c.at("iterations").get<int>();
  return m;
}

/// The distorted, quantized observation of x paired with its aligned reference.
inline TrainingPair observe(const DistortionModel& model, const Signal& x, int bits, int reference_bits) {
  Signal v = quantize(apply(model, x), bits);
  std::vector<double> ref = delay(x.samples(), bulk_delay(model));
  if (reference_bits > 0) ref = quantize(ref, reference_bits);
  return {Signal(std::move(ref)), std::move(v)};
}

inline std::vector<TrainingPair> observe_all(const DistortionModel& model, const std::vector<Signal>& xs, int bits,
                                             int reference_bits, unsigned jobs) {
  std::vector<TrainingPair> out(xs.size());
  parallel_for(xs.size(), jobs, [&](std::size_t i) { out[i] = observe(model, xs[i], bits, reference_bits); });
  return out;
}

enum class SetKind { train, eval, nulls, bandpass };

inline std::string_view to_string(SetKind k) {
  switch (k) {
    case SetKind::train: return "train";
    case SetKind::eval: return "matched";
    case SetKind::nulls: return "null_subcarrier";
    case SetKind::bandpass: return "bandpass_noise";
  }
  return "?";
}

/// Clean signals of one set, regenerated from seeds. Multi-tone sets carry the
/// gain G; bandpass noise comes at unit peak (see bandpass_set).
inline std::vector<Signal> clean_set(const Manifest& man, SetKind kind, const ExperimentConfig::Robustness& rob = {}) {
  std::vector<Signal> out;
  switch (kind) {
    case SetKind::train:
      for (std::size_t i = 0; i < man.seeds.train_count; ++i) out.push_back(man.clean(man.seeds.train(i)));
      if (!out.empty() && checksum(out.front()) != man.train_checksum)
        throw RegenerationError("training signal regenerated from seed " + std::to_string(man.seeds.train(0)) +
                                " does not match the manifest checksum " + man.train_checksum);
      break;
    case SetKind::eval:
      for (std::size_t i = 0; i < man.seeds.eval_count; ++i) out.push_back(man.clean(man.seeds.eval(i)));
      if (!out.empty() && checksum(out.front()) != man.eval_checksum)
        throw RegenerationError("evaluation signal regenerated from seed " + std::to_string(man.seeds.eval(0)) +
                                " does not match the manifest checksum " + man.eval_checksum);
      break;
    case SetKind::nulls:
      for (std::size_t i = 0; i < man.seeds.eval_count; ++i)
        out.push_back(gen_multitone(man.tone(rob.null_fraction), man.seeds.nulls(i)).scaled(man.gain));
      break;
    case SetKind::bandpass:
      for (std::size_t i = 0; i < man.seeds.eval_count; ++i)
        out.push_back(gen_bandpass_noise({rob.band_low, rob.band_high}, man.length, man.seeds.bandpass(i)));
      break;
  }
  return out;
}

inline double mean_power(std::span<const Signal> set) {
  double p = 0.0;
  for (const auto& s : set) {
    double e = 0.0;
    for (double v : s.samples()) e += v * v;
    p += e / static_cast<double>(s.size());
  }
  return p / static_cast<double>(set.size());
}

/// Bandpass noise at the mean power of the training multi-tones, capped so no
/// distorted signal of the set exceeds the margin.
inline std::vector<Signal> bandpass_set(const Manifest& man, const DistortionModel& model,
                                        const ExperimentConfig::Robustness& rob, double margin) {
  auto set = clean_set(man, SetKind::bandpass, rob);
  const double target = mean_power(clean_set(man, SetKind::train));
  const double g = std::min(std::sqrt(target / mean_power(set)), distortion_gain(model, set, margin));
  for (auto& s : set) s = s.scaled(g);
  return set;
}

// ---------------------------------------------------------------------------
// Generation

struct Generated {
  DistortionModel model;
  Manifest manifest;
};

/// Draws the distortion model and the gain G jointly: G keeps every distorted
/// training and evaluation signal within the margin, the model scale hits the
/// SNDR target on the G-scaled training set. Three alternations.
inline Generated generate(const ExperimentConfig& cfg) {
  cfg.validate();
  Manifest man;
  man.id = cfg.id;
  man.sampling = cfg.sampling;
  man.seeds = {cfg.seed, cfg.signal.train_count, cfg.signal.eval_count};
  man.length = cfg.signal.length;
  man.bits = cfg.signal.bits;
  man.reference_bits = cfg.signal.reference_bits;
  man.subcarriers = cfg.signal.subcarriers;
  man.carriers = fdlin::detail::resolved_carriers(man.tone());
  man.base_gain = 1.0 / static_cast<double>(man.carriers.size());

  std::vector<Signal> raw_all, raw_train;
  for (std::size_t i = 0; i < man.seeds.train_count; ++i) raw_train.push_back(man.raw(man.seeds.train(i)));
  raw_all = raw_train;
  for (std::size_t i = 0; i < man.seeds.eval_count; ++i) raw_all.push_back(man.raw(man.seeds.eval(i)));

  double gain = compute_gain(raw_all, [](const Signal& s) { return s; }, cfg.signal.gain_margin);
  RandomModelOptions opt;
  opt.bits = cfg.signal.bits;
  opt.interp_delay = cfg.distortion.interp_delay;
  opt.factorial_taper = cfg.distortion.factorial_taper;
  GeneratedModel gm;
  for (int round = 0; round < 3; ++round) {
    std::vector<Signal> calib;
    for (const auto& s : raw_train) calib.push_back(s.scaled(gain));
    gm = gen_random_model(cfg.sampling, cfg.distortion.order, cfg.distortion.max_power, cfg.distortion.target_sndr_db,
                          calib, man.seeds.model(), opt);
    if (round < 2) gain = distortion_gain(gm.model, raw_all, cfg.signal.gain_margin);
  }
  man.gain = gain;
  man.calibration = gm.report;
  man.train_checksum = checksum(man.clean(man.seeds.train(0)));
  man.eval_checksum = checksum(man.clean(man.seeds.eval(0)));
  return {gm.model, man};
}

// ---------------------------------------------------------------------------
// Design grid

struct GridPoint {
  LinearizerKind kind = LinearizerKind::proposed;
  SamplingModel sampling = SamplingModel::pre;
  int order = 0;
  int branches = 1;

  std::string tag() const {
    return std::string(fdlin::to_string(kind)) + "_" + std::string(fdlin::to_string(sampling)) + "_M" +
           std::to_string(order) + "_N" + std::to_string(branches);
  }
};

inline std::vector<GridPoint> grid_points(const ExperimentConfig& cfg) {
  std::vector<GridPoint> g;
  for (auto kind : cfg.design.kinds) {
    const auto& branches = kind == LinearizerKind::proposed ? cfg.design.proposed_branches : cfg.design.hammerstein_branches;
    for (int m : cfg.design.orders)
      for (int n : branches) g.push_back({kind, cfg.sampling, m, n});
  }
  return g;
}

inline DesignSpec design_spec(const ExperimentConfig& cfg, const GridPoint& p, std::size_t skip) {
  DesignSpec s;
  s.layout.kind = p.kind;
  s.layout.sampling = p.sampling;
  s.layout.order = p.order;
  s.layout.branches = p.branches;
  s.layout.nonlinearity = cfg.design.nonlinearity;
  s.layout.interp_delay = cfg.design.interp_delay;
  s.layout.proposed_interp_factor = cfg.design.proposed_interp_factor;
  s.layout.arithmetic_bits = cfg.design.arithmetic_bits;
  s.bias_grid_size = cfg.design.bias_grid_size;
  s.b_lower = cfg.design.b_lower;
  s.b_upper = cfg.design.b_upper;
  s.lambdas = lambda_grid(cfg.design.lambda_lo, cfg.design.lambda_hi, cfg.design.lambda_per_decade);
  s.coefficient_bound = cfg.design.coefficient_bound;
  s.skip = skip;
  s.jobs = 1;
  return s;
}

struct DesignOutcome {
  GridPoint point;
  std::optional<DesignResult> result;
  std::string error;
};

inline std::vector<DesignOutcome> design_grid(const ExperimentConfig& cfg, std::span<const TrainingPair> train,
                                              std::size_t skip) {
  const auto points = grid_points(cfg);
  std::vector<DesignOutcome> out(points.size());
  parallel_for(points.size(), cfg.jobs, [&](std::size_t i) {
    out[i].point = points[i];
    try {
      out[i].result = design_linearizer(train, design_spec(cfg, points[i], skip));
    } catch (const DesignError& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

/// Learned parameters rounded to `bits` (mid-tread, saturating).
inline LinearizerModel with_quantized_coefficients(LinearizerModel m, int bits) {
  if (bits <= 0) return m;
  m.offset = quantize_sample(m.offset, bits);
  for (auto& t : m.linear_delta) t = quantize_sample(t, bits);
  for (auto& row : m.branch_taps)
    for (auto& t : row) t = quantize_sample(t, bits);
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

/// On-grid multi-tone (no frequency offset) long enough to discard start-up;
/// the last `length` samples are analysed.
struct Probe {
  Signal clean;
  std::set<std::size_t> signal_bins;
  std::size_t length = 0;
};

inline Probe make_probe(const Manifest& man) {
  Probe p;
  p.length = man.length;
  const std::size_t lead = 256;
  auto tone = man.tone(0.0, 0.0);
  tone.length = man.length + lead;
  p.clean = gen_multitone(tone, man.seeds.probe()).scaled(man.gain);
  for (int k : man.carriers) {
    const double bin = static_cast<double>(k) * static_cast<double>(man.length) / man.subcarriers;
    p.signal_bins.insert(static_cast<std::size_t>(std::llround(bin)));
  }
  return p;
}

inline std::span<const double> tail(const Signal& s, std::size_t n) { return s.samples().subspan(s.size() - n, n); }

struct ResultRow {
  GridPoint point;
  ComplexityCount complexity;
  double mean_before = 0.0;
  double mean_after = 0.0;
  double var_after = 0.0;
  double sfdr_before = 0.0;
  double sfdr_after = 0.0;
};

struct ProbeSpectra {
  Spectrum before;
  Spectrum after;
};

inline ResultRow evaluate_point(const GridPoint& point, const LinearizerModel& model,
                                std::span<const TrainingPair> eval, std::size_t skip, const Probe& probe,
                                const DistortionModel& distortion, int bits, unsigned jobs,
                                ProbeSpectra* spectra = nullptr) {
  ResultRow row;
  row.point = point;
  const auto rep = evaluate_linearizer(model, eval, skip, jobs);
  row.complexity = rep.complexity;
  row.mean_before = rep.mean_before;
  row.mean_after = rep.mean_after;
  row.var_after = rep.var_after;
  const Signal v = quantize(apply(distortion, probe.clean), bits);
  const Signal y = apply(model, v);
  row.sfdr_before = sfdr_dbfs(tail(v, probe.length), probe.signal_bins);
  row.sfdr_after = sfdr_dbfs(tail(y, probe.length), probe.signal_bins);
  if (spectra) {
    spectra->before = spectrum(tail(v, probe.length));
    spectra->after = spectrum(tail(y, probe.length));
  }
  return row;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180: CRLF records, quoted fields where needed)

inline std::string csv_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write '" + path.string() + "'");
    row(header);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_field(fields[i]);
    out_ << "\r\n";
    if (!out_) throw IoError("CSV write failed");
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Stages with file outputs under the output directory

struct Paths {
  fs::path root;
  fs::path distortion() const { return root / "distortion.json"; }
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path linearizers() const { return root / "linearizers"; }
  fs::path model(const GridPoint& p) const { return linearizers() / (p.tag() + ".json"); }
  fs::path report(const GridPoint& p) const { return linearizers() / (p.tag() + ".report.json"); }
  fs::path design_csv() const { return root / "design.csv"; }
  fs::path results_csv() const { return root / "results.csv"; }
  fs::path robustness_csv() const { return root / "robustness.csv"; }
  fs::path complexity_csv() const { return root / "complexity.csv"; }
  fs::path spectra() const { return root / "spectra"; }
};

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

using Log = std::ostream;

inline Generated cmd_generate(const ExperimentConfig& cfg, Log& log) {
  const Paths paths{cfg.output};
  ensure_dir(paths.root);
  auto g = generate(cfg);
  write_json(paths.distortion().string(), to_json(g.model));
  write_json(paths.manifest().string(), to_json(g.manifest));
  log << "generate: " << to_string(cfg.sampling) << " model D=" << cfg.distortion.order << " Q=" << cfg.distortion.max_power
      << ", calibrated mean SNDR " << csv_real(g.manifest.calibration.mean_sndr_db) << " dB, G = " << g.manifest.gain
      << "\n";
  return g;
}

inline Generated load_generated(const Paths& paths) {
  return {distortion_from_json(read_json(paths.distortion().string())),
          manifest_from_json(read_json(paths.manifest().string()))};
}

/// Returns the number of grid points whose design failed.
inline std::size_t cmd_design(const ExperimentConfig& cfg, Log& log) {
  const Paths paths{cfg.output};
  const auto g = load_generated(paths);
  ensure_dir(paths.linearizers());
  const auto points = grid_points(cfg);
  if (points.empty()) {
    log << "design: empty grid, nothing to do\n";
    return 0;
  }
  const auto train = observe_all(g.model, clean_set(g.manifest, SetKind::train), g.manifest.bits,
                                 g.manifest.reference_bits, cfg.jobs);
  const std::size_t skip = transient(g.model);
  const auto outcomes = design_grid(cfg, train, skip);
  CsvWriter csv(paths.design_csv(), {"kind", "sampling", "M", "branches", "status", "E", "b_max", "lambda", "rcond",
                                     "train_sndr", "coefficient_max_abs", "message"});
  std::size_t failures = 0;
  for (const auto& o : outcomes) {
    const auto& p = o.point;
    std::vector<std::string> row{std::string(fdlin::to_string(p.kind)), std::string(fdlin::to_string(p.sampling)),
                                 std::to_string(p.order), std::to_string(p.branches)};
    if (o.result) {
      const auto& r = o.result->report;
      write_json(paths.model(p).string(), to_json(o.result->model));
      write_json(paths.report(p).string(), to_json(r));
      row.insert(row.end(), {"ok", csv_real(r.E), csv_real(r.chosen_b_max), csv_real(r.chosen_lambda),
                             csv_real(r.rcond), csv_real(r.train_sndr), csv_real(r.coefficient_max_abs), ""});
      log << "design: " << p.tag() << " train SNDR " << csv_real(r.train_sndr) << " dB (b_max "
          << csv_real(r.chosen_b_max) << ", lambda " << csv_real(r.chosen_lambda) << ")\n";
    } else {
      ++failures;
      std::error_code ec;
      fs::remove(paths.model(p), ec);
      fs::remove(paths.report(p), ec);
      row.insert(row.end(), {"failed", "", "", "", "", "", "", o.error});
      log << "design: " << p.tag() << " FAILED: " << o.error << "\n";
    }
    csv.row(row);
  }
  return failures;
}

inline std::optional<LinearizerModel> load_linearizer(const Paths& paths, const GridPoint& p, double bound) {
  if (!fs::exists(paths.model(p))) return std::nullopt;
  return linearizer_from_json(read_json(paths.model(p).string()), bound);
}

inline void write_spectrum(const fs::path& path, const Spectrum& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_spectrum_csv(out, s);
}

inline std::vector<ResultRow> cmd_evaluate(const ExperimentConfig& cfg, Log& log) {
  const Paths paths{cfg.output};
  const auto g = load_generated(paths);
  const auto eval = observe_all(g.model, clean_set(g.manifest, SetKind::eval), g.manifest.bits, 0, cfg.jobs);
  const std::size_t skip = transient(g.model);
  const auto probe = make_probe(g.manifest);
  if (cfg.spectra) ensure_dir(paths.spectra());
  std::vector<ResultRow> rows;
  CsvWriter csv(paths.results_csv(), {"kind", "sampling", "M", "branches", "multiplications", "additions",
                                      "mean_sndr_before", "mean_sndr_after", "sndr_var", "sfdr"});
  for (const auto& p : grid_points(cfg)) {
    auto model = load_linearizer(paths, p, cfg.design.coefficient_bound);
    if (!model) {
      log << "evaluate: no linearizer for " << p.tag() << ", skipped\n";
      continue;
    }
    const auto m = with_quantized_coefficients(*model, cfg.design.coefficient_bits);
    ProbeSpectra spectra;
    auto row = evaluate_point(p, m, eval, skip, probe, g.model, g.manifest.bits, cfg.jobs, cfg.spectra ? &spectra : nullptr);
    if (cfg.spectra) {
      write_spectrum(paths.spectra() / (p.tag() + "_before.csv"), spectra.before);
      write_spectrum(paths.spectra() / (p.tag() + "_after.csv"), spectra.after);
    }
    csv.row({std::string(fdlin::to_string(p.kind)), std::string(fdlin::to_string(p.sampling)), std::to_string(p.order),
             std::to_string(p.branches), std::to_string(row.complexity.multiplications),
             std::to_string(row.complexity.additions), csv_real(row.mean_before), csv_real(row.mean_after),
             csv_real(row.var_after), csv_real(row.sfdr_after)});
    log << "evaluate: " << p.tag() << " SNDR " << csv_real(row.mean_before) << " -> " << csv_real(row.mean_after)
        << " dB, " << row.complexity.multiplications << " mult\n";
    rows.push_back(row);
  }
  return rows;
}

struct RobustnessRow {
  GridPoint point;
  std::string set;
  double mean_before = 0.0;
  double mean_after = 0.0;
  double degradation = 0.0;
};

inline std::vector<RobustnessRow> cmd_robustness(const ExperimentConfig& cfg, Log& log) {
  const Paths paths{cfg.output};
  const auto g = load_generated(paths);
  const std::size_t skip = transient(g.model);
  const int bits = g.manifest.bits;
  std::vector<GridPoint> points;
  for (const auto& p : grid_points(cfg))
    if (cfg.robustness.models.empty() ||
        std::find(cfg.robustness.models.begin(), cfg.robustness.models.end(), p.tag()) != cfg.robustness.models.end())
      points.push_back(p);

  const auto matched = observe_all(g.model, clean_set(g.manifest, SetKind::eval), bits, 0, cfg.jobs);
  const auto nulls = observe_all(g.model, clean_set(g.manifest, SetKind::nulls, cfg.robustness), bits, 0, cfg.jobs);
  const auto band = observe_all(g.model, bandpass_set(g.manifest, g.model, cfg.robustness, cfg.signal.gain_margin), bits, 0, cfg.jobs);
  std::vector<TrainingPair> train;
  bool need_train = false;
  for (const auto& p : points) need_train = need_train || p.kind == LinearizerKind::proposed;
  if (need_train && !cfg.robustness.bias_perturbations.empty())
    train = observe_all(g.model, clean_set(g.manifest, SetKind::train), bits, g.manifest.reference_bits, cfg.jobs);

  std::vector<RobustnessRow> rows;
  CsvWriter csv(paths.robustness_csv(),
                {"kind", "sampling", "M", "branches", "set", "mean_sndr_before", "mean_sndr_after", "degradation_db"});
  auto emit = [&](const RobustnessRow& r) {
    rows.push_back(r);
    csv.row({std::string(fdlin::to_string(r.point.kind)), std::string(fdlin::to_string(r.point.sampling)),
             std::to_string(r.point.order), std::to_string(r.point.branches), r.set, csv_real(r.mean_before),
             csv_real(r.mean_after), csv_real(r.degradation)});
    log << "robustness: " << r.point.tag() << " " << r.set << " " << csv_real(r.mean_after) << " dB (degradation "
        << csv_real(r.degradation) << " dB)\n";
  };

  for (const auto& p : points) {
    auto loaded = load_linearizer(paths, p, cfg.design.coefficient_bound);
    if (!loaded) {
      log << "robustness: no linearizer for " << p.tag() << ", skipped\n";
      continue;
    }
    const auto model = with_quantized_coefficients(*loaded, cfg.design.coefficient_bits);
    const auto base = evaluate_linearizer(model, matched, skip, cfg.jobs);
    emit({p, "matched", base.mean_before, base.mean_after, 0.0});
    for (auto [name, set] : {std::pair{"null_subcarrier", &nulls}, std::pair{"bandpass_noise", &band}}) {
      const auto r = evaluate_linearizer(model, *set, skip, cfg.jobs);
      emit({p, name, r.mean_before, r.mean_after, base.mean_after - r.mean_after});
    }
    if (p.kind != LinearizerKind::proposed) continue;
    for (double delta : cfg.robustness.bias_perturbations) {
      for (double sign : {-1.0, 1.0}) {
        const double b = model.b_max * (1.0 + sign * delta);
        auto spec = design_spec(cfg, p, skip);
        const auto redesigned = design_with_fixed_b_max(train, spec, b);
        const auto m = with_quantized_coefficients(redesigned.model, cfg.design.coefficient_bits);
        const auto r = evaluate_linearizer(m, matched, skip, cfg.jobs);
        std::ostringstream name;
        name << "b_max" << (sign > 0 ? "+" : "-") << delta * 100 << "%";
        emit({p, name.str(), r.mean_before, r.mean_after, base.mean_after - r.mean_after});
      }
    }
  }
  return rows;
}

inline std::vector<std::pair<GridPoint, ComplexityCount>> cmd_complexity(const ExperimentConfig& cfg, Log& out) {
  std::vector<std::pair<GridPoint, ComplexityCount>> rows;
  for (const auto& p : grid_points(cfg)) rows.emplace_back(p, complexity({p.kind, p.sampling, p.order, p.branches}));
  out << std::left << std::setw(28) << "linearizer" << std::right << std::setw(8) << "mult" << std::setw(8) << "add"
      << "   per branch (mult/add)\n";
  for (const auto& [p, c] : rows) {
    out << std::left << std::setw(28) << p.tag() << std::right << std::setw(8) << c.multiplications << std::setw(8)
        << c.additions << "   ";
    for (const auto& b : c.detail) out << b.label << " " << b.multiplications << "/" << b.additions << "; ";
    out << "\n";
  }
  const Paths paths{cfg.output};
  ensure_dir(paths.root);
  CsvWriter csv(paths.complexity_csv(), {"kind", "sampling", "M", "branches", "multiplications", "additions"});
  for (const auto& [p, c] : rows)
    csv.row({std::string(fdlin::to_string(p.kind)), std::string(fdlin::to_string(p.sampling)), std::to_string(p.order),
             std::to_string(p.branches), std::to_string(c.multiplications), std::to_string(c.additions)});
  return rows;
}

}  // namespace fdlin::experiment
