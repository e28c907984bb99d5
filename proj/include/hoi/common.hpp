#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hoi {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trippable decimal form (%.17g).
std::string fmt_g17(double v);

// Hex float form (%a); parses back bit-exact via strtod.
std::string fmt_hex(double v);

// Strict full-token parse; throws ParseError on trailing garbage.
double parse_double(const std::string& tok);
std::int64_t parse_int(const std::string& tok);

// FNV-1a 64-bit over a byte string; used for config hashes.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace hoi
