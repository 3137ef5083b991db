#pragma once

#include <cstdio>
#include <string>

namespace flare {
namespace detail {

// Shortest float form that round-trips through text for our purposes.
// Used everywhere a metric lands in a CSV or JSON file so reruns produce
// byte-identical output.
inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// RFC 4180 quoting, applied only when the field needs it.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail
}  // namespace flare
