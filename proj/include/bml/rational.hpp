#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace bml {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline double to_double(double x) { return x; }
inline double to_double(const Rational& r) { return r.convert_to<double>(); }

// The planning code is generic over the scalar: exact rationals compare with
// ==, floats get a documented relative tolerance.
template <class S>
struct scalar_traits;

template <>
struct scalar_traits<double> {
  static constexpr bool exact = false;
  static constexpr double tie_tolerance = 1e-12;
  static bool close(double a, double b) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tie_tolerance * scale;
  }
};

template <>
struct scalar_traits<Rational> {
  static constexpr bool exact = true;
  static bool close(const Rational& a, const Rational& b) { return a == b; }
};

namespace detail {

inline BigInt pow10(int k) {
  BigInt r = 1;
  for (int i = 0; i < k; ++i) r *= 10;
  return r;
}

}  // namespace detail

// Parses "p/q", integer, or decimal/scientific literals ("0.1", "-3e-2")
// exactly: 0.1 becomes 1/10, not its binary approximation.
inline Rational parse_rational(std::string_view text) {
  const auto fail = [&] {
    throw ConfigInvalid("not a rational literal: '" + std::string(text) + "'");
  };
  if (text.empty()) fail();

  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    const Rational num = parse_rational(text.substr(0, slash));
    const Rational den = parse_rational(text.substr(slash + 1));
    if (den == 0) fail();
    return num / den;
  }

  std::size_t i = 0;
  bool negative = false;
  if (text[i] == '+' || text[i] == '-') negative = text[i++] == '-';

  BigInt mantissa = 0;
  int frac_digits = 0, total_digits = 0;
  bool seen_point = false;
  for (; i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.'); ++i) {
    if (text[i] == '.') {
      if (seen_point) fail();
      seen_point = true;
      continue;
    }
    mantissa = mantissa * 10 + (text[i] - '0');
    ++total_digits;
    if (seen_point) ++frac_digits;
  }
  if (total_digits == 0) fail();

  long exponent = 0;
  if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
    const char* begin = text.data() + i + 1;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, exponent);
    if (ec != std::errc{} || ptr != end) fail();
    i = text.size();
  }
  if (i != text.size()) fail();

  Rational value(mantissa, detail::pow10(frac_digits));
  if (exponent > 0)
    value *= detail::pow10(static_cast<int>(exponent));
  else if (exponent < 0)
    value /= detail::pow10(static_cast<int>(-exponent));
  return negative ? -value : value;
}

// Exact rational value of a double through its shortest round-trip decimal
// form, so a JSON "0.1" comes back as 1/10.
inline Rational rational_from_shortest_decimal(double x) {
  if (!std::isfinite(x)) throw ConfigInvalid("non-finite value has no rational form");
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw ConfigInvalid("could not render value");
  return parse_rational(std::string_view(buf, static_cast<std::size_t>(ptr - buf)));
}

inline std::string to_string(const Rational& r) { return r.str(); }

}  // namespace bml
