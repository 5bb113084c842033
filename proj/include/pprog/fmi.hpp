/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include "pprog/error.hpp"

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

namespace pprog {

inline constexpr double kFmiFactor = 1.0000001;

/// Exactly `n` dependent multiplications starting from `x`. The chain is
/// serial, so one stage cannot be spread over execution units. noipa keeps
/// the compiler from treating repeated calls as one.
[[gnu::noipa]] inline double fmi_burn(std::uint64_t n, double x = 1.0) {
  for (std::uint64_t i = 0; i < n; ++i) x *= kFmiFactor;
  return x;
}

/// Shortest text that parses back to the same double.
inline std::string format_value(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_value(std::string_view text) {
  double v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw ProtocolError(Errc::invalid_argument, "not a number: '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace pprog
