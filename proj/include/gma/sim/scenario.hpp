#pragma once

// Text form of scenarios: "tdma:5", "qaloha:0.8", "fwaloha:2", "ebaloha:3[:b]", joined with '+'.

#include <charconv>
#include <sstream>
#include <string>
#include <string_view>

#include "gma/sim/protocol.hpp"

namespace gma::sim {

namespace detail {

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline double parse_double(std::string_view s, std::string_view what) {
  try {
    std::size_t used = 0;
    const std::string str(s);
    const double v = std::stod(str, &used);
    if (used != str.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  }
}

inline int parse_int(std::string_view s, std::string_view what) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ConfigError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    parts.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return parts;
}

}  // namespace detail

/// Human-readable label in the notation used in experiment reports, e.g. "TDMA(5)".
inline std::string label(const ProtocolSpec& spec) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, QAloha>) {
          return "q-ALOHA(" + detail::fmt_num(p.q) + ")";
        } else if constexpr (std::is_same_v<T, FwAloha>) {
          return "FW-ALOHA(" + std::to_string(p.window) + ")";
        } else if constexpr (std::is_same_v<T, EbAloha>) {
          if (p.max_stage == 2) return "EB-ALOHA(" + std::to_string(p.window) + ")";
          return "EB-ALOHA(" + std::to_string(p.window) + ",b=" + std::to_string(p.max_stage) + ")";
        } else {
          if (p.frame == 10) return "TDMA(" + std::to_string(p.slot) + ")";
          return "TDMA(" + std::to_string(p.slot) + "/" + std::to_string(p.frame) + ")";
        }
      },
      spec);
}

inline std::string label(const Scenario& scenario) {
  std::string out;
  for (const auto& p : scenario) {
    if (!out.empty()) out += "+";
    out += label(p);
  }
  return out;
}

/// Canonical machine form, inverse of parse_scenario.
inline std::string to_text(const ProtocolSpec& spec) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, QAloha>) {
          return "qaloha:" + detail::fmt_num(p.q);
        } else if constexpr (std::is_same_v<T, FwAloha>) {
          return "fwaloha:" + std::to_string(p.window);
        } else if constexpr (std::is_same_v<T, EbAloha>) {
          return "ebaloha:" + std::to_string(p.window) + ":" + std::to_string(p.max_stage);
        } else {
          return "tdma:" + std::to_string(p.slot) + ":" + std::to_string(p.frame);
        }
      },
      spec);
}

inline std::string to_text(const Scenario& scenario) {
  std::string out;
  for (const auto& p : scenario) {
    if (!out.empty()) out += "+";
    out += to_text(p);
  }
  return out;
}

inline ProtocolSpec parse_protocol(std::string_view text) {
  const auto parts = detail::split(text, ':');
  const std::string kind(parts[0]);
  ProtocolSpec spec;
  const auto need = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo || parts.size() > hi) throw ConfigError("malformed protocol '" + std::string(text) + "'");
  };
  if (kind == "qaloha") {
    need(2, 2);
    spec = QAloha{detail::parse_double(parts[1], "q")};
  } else if (kind == "fwaloha") {
    need(2, 2);
    spec = FwAloha{detail::parse_int(parts[1], "W")};
  } else if (kind == "ebaloha") {
    need(2, 3);
    EbAloha p{detail::parse_int(parts[1], "W"), 2};
    if (parts.size() == 3) p.max_stage = detail::parse_int(parts[2], "b");
    spec = p;
  } else if (kind == "tdma") {
    need(2, 3);
    Tdma p{detail::parse_int(parts[1], "X"), 10};
    if (parts.size() == 3) p.frame = detail::parse_int(parts[2], "F");
    spec = p;
  } else {
    throw ConfigError("unknown protocol '" + kind + "'");
  }
  validate(spec);
  return spec;
}

inline Scenario parse_scenario(std::string_view text) {
  if (text.empty()) throw ConfigError("empty scenario");
  Scenario out;
  for (auto part : detail::split(text, '+')) out.push_back(parse_protocol(part));
  return out;
}

}  // namespace gma::sim
