#pragma once

#include <string>
#include <string_view>

#include "fdlin/error.hpp"

namespace fdlin {

enum class LinearizerKind { hammerstein, proposed };
enum class SamplingModel { pre, post };
enum class Nonlinearity { modulus, relu };

inline std::string_view to_string(LinearizerKind k) { return k == LinearizerKind::hammerstein ? "hammerstein" : "proposed"; }
inline std::string_view to_string(SamplingModel s) { return s == SamplingModel::pre ? "pre" : "post"; }
inline std::string_view to_string(Nonlinearity f) { return f == Nonlinearity::modulus ? "modulus" : "relu"; }

inline LinearizerKind parse_kind(std::string_view s) {
  if (s == "hammerstein") return LinearizerKind::hammerstein;
  if (s == "proposed") return LinearizerKind::proposed;
  throw ConfigError("unknown linearizer kind '" + std::string(s) + "'");
}

inline SamplingModel parse_sampling(std::string_view s) {
  if (s == "pre") return SamplingModel::pre;
  if (s == "post") return SamplingModel::post;
  throw ConfigError("unknown sampling model '" + std::string(s) + "'");
}

inline Nonlinearity parse_nonlinearity(std::string_view s) {
  if (s == "modulus") return Nonlinearity::modulus;
  if (s == "relu") return Nonlinearity::relu;
  throw ConfigError("unknown nonlinearity '" + std::string(s) + "'");
}

}  // namespace fdlin
