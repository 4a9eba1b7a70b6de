#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>

#include "json.hpp"

#include "kflock/errors.hpp"

namespace kflock {

/// Decimal text of x with 17 significant digits (round-trips every double).
inline std::string fmt_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void dump_json17(std::ostream& os, const nlohmann::json& j, int indent, int depth) {
  using nlohmann::json;
  auto newline = [&](int d) {
    if (indent < 0) return;
    os << '\n' << std::string(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ',';
        first = false;
        newline(depth + 1);
        os << json(it.key()).dump() << (indent < 0 ? ":" : ": ");
        dump_json17(os, it.value(), indent, depth + 1);
      }
      newline(depth);
      os << '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) os << ',';
        first = false;
        newline(depth + 1);
        dump_json17(os, e, indent, depth + 1);
      }
      newline(depth);
      os << ']';
      return;
    }
    case json::value_t::number_float: {
      const double x = j.get<double>();
      // JSON has no inf/nan literals
      if (!std::isfinite(x)) {
        os << "null";
        return;
      }
      std::string s = fmt_num(x);
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      os << s;
      return;
    }
    default:
      os << j.dump();
  }
}

}  // namespace detail

/// JSON text with every floating-point value at 17 significant digits.
inline std::string dump_json17(const nlohmann::json& j, int indent = 2) {
  std::ostringstream os;
  detail::dump_json17(os, j, indent, 0);
  os << '\n';
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// 64-bit FNV-1a, used for stable config fingerprints.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  auto res = std::to_chars(buf, buf + 16, x, 16);
  std::string s(buf, res.ptr);
  return std::string(16 - s.size(), '0') + s;
}

}  // namespace kflock
