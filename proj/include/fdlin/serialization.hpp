#pragma once

// Versioned JSON for distortion models, linearizer models and design reports.
// Non-finite reals are written as the strings "inf", "-inf", "nan".

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdlin/design.hpp"
#include "fdlin/distortion.hpp"
#include "fdlin/error.hpp"
#include "fdlin/linearizer.hpp"
#include "fdlin/types.hpp"

namespace fdlin {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

inline json real_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double real_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ConfigError("expected a real number, got " + j.dump());
}

namespace detail {

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
  return j.at(key);
}

inline Taps taps_from(const json& j) {
  if (!j.is_array()) throw ConfigError("expected an array of taps");
  Taps t;
  for (const auto& v : j) t.push_back(real_from_json(v));
  return t;
}

inline std::vector<Taps> rows_from(const json& j) {
  if (!j.is_array()) throw ConfigError("expected an array of tap rows");
  std::vector<Taps> rows;
  for (const auto& r : j) rows.push_back(taps_from(r));
  return rows;
}

inline void check_version(const json& j, const char* type) {
  if (field(j, "version").get<int>() != kFormatVersion)
    throw ConfigError("unsupported " + std::string(type) + " format version " + j.at("version").dump());
  if (field(j, "type").get<std::string>() != type)
    throw ConfigError("expected a " + std::string(type) + " document, got '" + j.at("type").get<std::string>() + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline json to_json(const DistortionModel& m) {
  json j;
  j["version"] = kFormatVersion;
  j["type"] = "distortion";
  j["sampling"] = std::string(to_string(sampling_of(m)));
  if (const auto* pre = std::get_if<PreSamplingModel>(&m)) {
    j["D"] = pre->order();
    j["Q"] = pre->max_power();
    j["offset"] = pre->offset;
    j["linear_taps"] = pre->linear_taps;
    j["nonlinear_taps"] = pre->nonlinear_taps;
  } else {
    const auto& post = std::get<PostSamplingModel>(m);
    j["D"] = post.order();
    j["Q"] = post.max_power();
    j["offset"] = post.offset;
    j["linear_taps"] = post.linear_taps;
    j["nonlinear_taps"] = post.branch_taps;
    j["interp_factors"] = post.factors;
    j["interp_delay"] = post.interp_delay;
    j["interp_taps"] = post.interp_taps;
  }
  return j;
}

inline DistortionModel distortion_from_json(const json& j) {
  detail::check_version(j, "distortion");
  const auto sampling = parse_sampling(detail::field(j, "sampling").get<std::string>());
  if (sampling == SamplingModel::pre) {
    PreSamplingModel m;
    m.offset = real_from_json(detail::field(j, "offset"));
    m.linear_taps = detail::taps_from(detail::field(j, "linear_taps"));
    m.nonlinear_taps = detail::rows_from(detail::field(j, "nonlinear_taps"));
    m.validate();
    return m;
  }
  PostSamplingModel m;
  m.offset = real_from_json(detail::field(j, "offset"));
  m.linear_taps = detail::taps_from(detail::field(j, "linear_taps"));
  m.branch_taps = detail::rows_from(detail::field(j, "nonlinear_taps"));
  m.factors = detail::field(j, "interp_factors").get<std::vector<int>>();
  m.interp_delay = detail::field(j, "interp_delay").get<int>();
  m.interp_taps = detail::rows_from(detail::field(j, "interp_taps"));
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------

inline json to_json(const LinearizerModel& m) {
  json j;
  j["version"] = kFormatVersion;
  j["type"] = "linearizer";
  j["kind"] = std::string(to_string(m.kind));
  j["sampling"] = std::string(to_string(m.sampling));
  j["M"] = m.order;
  j["branches"] = m.branches();
  j["passthrough_delay"] = m.passthrough_delay();
  j["offset"] = m.offset;
  j["linear_delta_taps"] = m.linear_delta;
  j["branch_taps"] = m.branch_taps;
  j["arithmetic_bits"] = m.arithmetic_bits;
  if (m.kind == LinearizerKind::proposed) {
    std::vector<std::string> f;
    for (auto n : m.nonlinearities) f.emplace_back(to_string(n));
    j["nonlinearity"] = f;
    j["b_max"] = m.b_max;
    j["biases"] = m.biases;
  }
  if (m.sampling == SamplingModel::post) {
    j["P"] = m.interp_factors;
    j["interp_delay"] = m.interp_delay;
    j["interp_taps"] = m.interp_taps;
    json tables = json::array();
    for (int b = 0; b < m.branches(); ++b) {
      const auto bp = branch_polyphase(m, b);
      json t;
      t["active_phases"] = bp.active_phases;
      json h = json::array(), w = json::array();
      for (std::size_t i : bp.active_phases) {
        h.push_back(bp.interp.phases[i]);
        w.push_back(bp.filter.phases[i]);
      }
      t["H"] = h;
      t["W"] = w;
      tables.push_back(t);
    }
    j["polyphase"] = tables;
  }
  return j;
}

/// Loads and validates; `coefficient_bound` > 0 also enforces the design bound.
inline LinearizerModel linearizer_from_json(const json& j, double coefficient_bound = 0.0) {
  detail::check_version(j, "linearizer");
  LinearizerModel m;
  m.kind = parse_kind(detail::field(j, "kind").get<std::string>());
  m.sampling = parse_sampling(detail::field(j, "sampling").get<std::string>());
  m.order = detail::field(j, "M").get<int>();
  m.offset = real_from_json(detail::field(j, "offset"));
  m.linear_delta = detail::taps_from(detail::field(j, "linear_delta_taps"));
  m.branch_taps = detail::rows_from(detail::field(j, "branch_taps"));
  m.arithmetic_bits = j.value("arithmetic_bits", 0);
  if (detail::field(j, "branches").get<int>() != m.branches())
    throw StructureError("linearizer: 'branches' disagrees with the branch tap rows");
  if (m.kind == LinearizerKind::proposed) {
    for (const auto& f : detail::field(j, "nonlinearity")) m.nonlinearities.push_back(parse_nonlinearity(f.get<std::string>()));
    m.b_max = real_from_json(detail::field(j, "b_max"));
    m.biases = detail::taps_from(detail::field(j, "biases"));
  } else if (j.contains("biases") || j.contains("b_max")) {
    throw StructureError("linearizer: Hammerstein model carries bias fields");
  }
  if (m.sampling == SamplingModel::post) {
    m.interp_factors = detail::field(j, "P").get<std::vector<int>>();
    m.interp_delay = detail::field(j, "interp_delay").get<int>();
    m.interp_taps = detail::rows_from(detail::field(j, "interp_taps"));
  }
  m.validate(coefficient_bound);
  if (m.sampling == SamplingModel::post && j.contains("polyphase")) {
    const auto& tables = j.at("polyphase");
    if (!tables.is_array() || static_cast<int>(tables.size()) != m.branches())
      throw StructureError("linearizer: one polyphase table per branch expected");
    for (int b = 0; b < m.branches(); ++b) {
      const auto bp = branch_polyphase(m, b);
      const auto& t = tables[static_cast<std::size_t>(b)];
      if (detail::field(t, "active_phases").get<std::vector<std::size_t>>() != bp.active_phases)
        throw StructureError("linearizer: stored polyphase phases disagree with the taps");
      const auto h = detail::rows_from(detail::field(t, "H"));
      const auto w = detail::rows_from(detail::field(t, "W"));
      for (std::size_t k = 0; k < bp.active_phases.size(); ++k) {
        const auto i = bp.active_phases[k];
        if (k >= h.size() || k >= w.size() || h[k] != bp.interp.phases[i] || w[k] != bp.filter.phases[i])
          throw StructureError("linearizer: stored polyphase components disagree with the taps");
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

inline json to_json(const DesignReport& r) {
  return json{{"version", kFormatVersion},
              {"type", "design_report"},
              {"E", real_to_json(r.E)},
              {"chosen_b_max", real_to_json(r.chosen_b_max)},
              {"chosen_lambda", real_to_json(r.chosen_lambda)},
              {"rcond", real_to_json(r.rcond)},
              {"train_sndr", real_to_json(r.train_sndr)},
              {"coefficient_max_abs", real_to_json(r.coefficient_max_abs)},
              {"candidates", r.candidates},
              {"feasible", r.feasible}};
}

inline DesignReport design_report_from_json(const json& j) {
  detail::check_version(j, "design_report");
  DesignReport r;
  r.E = real_from_json(detail::field(j, "E"));
  r.chosen_b_max = real_from_json(detail::field(j, "chosen_b_max"));
  r.chosen_lambda = real_from_json(detail::field(j, "chosen_lambda"));
  r.rcond = real_from_json(detail::field(j, "rcond"));
  r.train_sndr = real_from_json(detail::field(j, "train_sndr"));
  r.coefficient_max_abs = real_from_json(detail::field(j, "coefficient_max_abs"));
  r.candidates = j.value("candidates", std::size_t{0});
  r.feasible = j.value("feasible", std::size_t{0});
  return r;
}

// ---------------------------------------------------------------------------

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in '" + path + "': " + e.what());
  }
}

}  // namespace fdlin
