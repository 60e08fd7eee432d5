#pragma once

// Reader for the TOML subset used by experiment configs: comments, [table]
// and [dotted.table] headers, bare or quoted keys (dotted keys allowed),
// basic and literal strings, integers, floats (including inf/nan),
// booleans, arrays (multi-line, nested) and inline tables. Produces
// nlohmann::json.

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdlin/error.hpp"

namespace fdlin::toml_lite {

using json = nlohmann::json;

namespace detail {

class Parser {
 public:
  explicit Parser(std::string text) : s_(std::move(text)) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        if (peek() == '[') fail("arrays of tables are not supported");
        skip_inline_ws();
        const auto path = key_path();
        skip_inline_ws();
        expect(']');
        end_of_line();
        table = &descend(root, path, true);
      } else {
        const auto path = key_path();
        skip_inline_ws();
        expect('=');
        skip_inline_ws();
        json v = value();
        assign(*table, path, std::move(v));
        end_of_line();
      }
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < s_.size(); ++i) line += s_[i] == '\n';
    throw ConfigError("toml line " + std::to_string(line) + ": " + what);
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }
  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }
  void skip_ws_comments_newlines() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }
  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (!eof() && peek() != '\n') fail("unexpected trailing characters");
  }

  std::string bare_or_quoted_key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (pos_ == start) fail("expected a key");
    return s_.substr(start, pos_ - start);
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> path{bare_or_quoted_key()};
    skip_inline_ws();
    while (peek() == '.') {
      ++pos_;
      skip_inline_ws();
      path.push_back(bare_or_quoted_key());
      skip_inline_ws();
    }
    return path;
  }

  json& descend(json& root, const std::vector<std::string>& path, bool header) {
    json* node = &root;
    for (std::size_t i = 0; i < path.size(); ++i) {
      auto& child = (*node)[path[i]];
      if (child.is_null()) {
        child = json::object();
      } else if (!child.is_object()) {
        fail("key '" + path[i] + "' is not a table");
      } else if (header && i + 1 == path.size() && defined_tables_.count(joined(path))) {
        fail("table '" + joined(path) + "' defined twice");
      }
      node = &child;
    }
    if (header) defined_tables_.insert(joined(path));
    return *node;
  }

  static std::string joined(const std::vector<std::string>& path) {
    std::string s;
    for (const auto& p : path) s += (s.empty() ? "" : ".") + p;
    return s;
  }

  void assign(json& table, const std::vector<std::string>& path, json v) {
    json* node = &table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      auto& child = (*node)[path[i]];
      if (child.is_null()) child = json::object();
      if (!child.is_object()) fail("key '" + path[i] + "' is not a table");
      node = &child;
    }
    if (node->contains(path.back())) fail("duplicate key '" + path.back() + "'");
    (*node)[path.back()] = std::move(v);
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      const char e = s_[pos_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape '\\") + e + "'");
      }
    }
    return out;
  }

  std::string literal_string() {
    expect('\'');
    const std::size_t start = pos_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++pos_;
    if (peek() != '\'') fail("unterminated string");
    std::string out = s_.substr(start, pos_ - start);
    ++pos_;
    return out;
  }

  json number_or_keyword() {
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || std::string("+-._").find(peek()) != std::string::npos))
      ++pos_;
    std::string tok = s_.substr(start, pos_ - start);
    if (tok == "true") return true;
    if (tok == "false") return false;
    const bool neg = !tok.empty() && tok[0] == '-';
    const std::string body = (!tok.empty() && (tok[0] == '+' || tok[0] == '-')) ? tok.substr(1) : tok;
    if (body == "inf") return neg ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    if (body == "nan") return std::numeric_limits<double>::quiet_NaN();
    std::string digits;
    for (char c : tok)
      if (c != '_') digits += c;
    if (digits.empty()) fail("expected a value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double d = std::stod(digits, &used);
        if (used != digits.size()) fail("malformed number '" + tok + "'");
        return d;
      }
      const long long i = std::stoll(digits, &used, 10);
      if (used != digits.size()) fail("malformed number '" + tok + "'");
      return i;
    } catch (const std::logic_error&) {
      fail("malformed value '" + tok + "'");
    }
  }

  json array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_ws_comments_newlines();
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(value());
      skip_ws_comments_newlines();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
  }

  json inline_table() {
    expect('{');
    json t = json::object();
    skip_inline_ws();
    if (peek() == '}') {
      ++pos_;
      return t;
    }
    while (true) {
      skip_inline_ws();
      const auto path = key_path();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      assign(t, path, value());
      skip_inline_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() == '}') {
        ++pos_;
        return t;
      } else {
        fail("expected ',' or '}' in inline table");
      }
    }
  }

  json value() {
    switch (peek()) {
      case '"': return basic_string();
      case '\'': return literal_string();
      case '[': return array();
      case '{': return inline_table();
      default: return number_or_keyword();
    }
  }

  std::string s_;
  std::size_t pos_ = 0;
  std::set<std::string> defined_tables_;
};

}  // namespace detail

inline json parse(std::string text) { return detail::Parser(std::move(text)).parse(); }

inline json parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace fdlin::toml_lite
