#pragma once

// Binary dump of named arrays and Adam state. Doubles are stored as raw IEEE-754 bytes in host
// byte order, so a save/load round trip is bit-exact.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "gma/ad/tape.hpp"

namespace gma::ad {

inline constexpr std::uint32_t kStoreFormatVersion = 1;

namespace io {

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("truncated checkpoint");
  return v;
}
inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw ConfigError("corrupt checkpoint string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ConfigError("truncated checkpoint");
  return s;
}
inline void put_matrix(std::ostream& os, const Matrix& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}
inline Matrix get_matrix(std::istream& is) {
  const auto r = get<std::int64_t>(is);
  const auto c = get<std::int64_t>(is);
  if (r < 0 || c < 0 || r * c > (1LL << 28)) throw ConfigError("corrupt checkpoint matrix shape");
  Matrix m(r, c);
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw ConfigError("truncated checkpoint");
  return m;
}

}  // namespace io

inline void save_store(std::ostream& os, const ParamStore& store) {
  io::put<std::uint32_t>(os, kStoreFormatVersion);
  io::put<std::int64_t>(os, store.step);
  io::put<std::uint64_t>(os, store.all().size());
  for (const auto& p : store.all()) {
    io::put_string(os, p.name);
    io::put_matrix(os, p.value);
    io::put_matrix(os, p.m);
    io::put_matrix(os, p.v);
  }
}

inline ParamStore load_store(std::istream& is) {
  const auto version = io::get<std::uint32_t>(is);
  if (version != kStoreFormatVersion) throw ConfigError("unsupported parameter store version");
  ParamStore store;
  store.step = io::get<std::int64_t>(is);
  const auto n = io::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto name = io::get_string(is);
    auto& p = store.add(name, io::get_matrix(is));
    p.m = io::get_matrix(is);
    p.v = io::get_matrix(is);
    if (p.m.rows() != p.value.rows() || p.m.cols() != p.value.cols() || p.v.rows() != p.value.rows() ||
        p.v.cols() != p.value.cols())
      throw ConfigError("optimizer state shape mismatch for '" + name + "'");
  }
  return store;
}

/// Bitwise equality of values and optimizer state.
inline bool identical(const ParamStore& a, const ParamStore& b) {
  if (!a.same_layout(b) || a.step != b.step) return false;
  for (std::size_t i = 0; i < a.all().size(); ++i) {
    const auto& x = a.all()[i];
    const auto& y = b.all()[i];
    const auto bytes = sizeof(double) * static_cast<std::size_t>(x.value.size());
    if (std::memcmp(x.value.data(), y.value.data(), bytes) != 0) return false;
    if (std::memcmp(x.m.data(), y.m.data(), bytes) != 0) return false;
    if (std::memcmp(x.v.data(), y.v.data(), bytes) != 0) return false;
  }
  return true;
}

/// FNV-1a over parameter values; used to check that frozen networks stay untouched.
inline std::uint64_t value_hash(const ParamStore& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : s.all()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(p.value.size()); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace gma::ad
