#include "hoi/common.hpp"

#include <cstdio>
#include <cstdlib>

namespace hoi {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_double(const std::string& tok) {
  if (tok.empty()) throw ParseError("empty numeric token");
  const char* begin = tok.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + tok.size()) throw ParseError("bad numeric token: '" + tok + "'");
  return v;
}

std::int64_t parse_int(const std::string& tok) {
  if (tok.empty()) throw ParseError("empty integer token");
  const char* begin = tok.c_str();
  char* end = nullptr;
  long long v = std::strtoll(begin, &end, 10);
  if (end != begin + tok.size()) throw ParseError("bad integer token: '" + tok + "'");
  return static_cast<std::int64_t>(v);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace hoi
