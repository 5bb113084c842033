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

#include <stdexcept>
#include <string>
#include <string_view>

namespace pprog {

enum class Errc {
  layer_mismatch,
  expired,
  config_timeout,
  no_such_child,
  duplicate_service,
  router_has_no_services,
  invalid_service,
  no_provider,
  timeout,
  unreachable,
  registration_incomplete,
  not_master,
  missing_model,
  invalid_argument,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::layer_mismatch: return "layer-mismatch";
    case Errc::expired: return "expired";
    case Errc::config_timeout: return "config-timeout";
    case Errc::no_such_child: return "no-such-child";
    case Errc::duplicate_service: return "duplicate-service";
    case Errc::router_has_no_services: return "router-has-no-services";
    case Errc::invalid_service: return "invalid-service";
    case Errc::no_provider: return "no-provider";
    case Errc::timeout: return "timeout";
    case Errc::unreachable: return "unreachable";
    case Errc::registration_incomplete: return "registration-incomplete";
    case Errc::not_master: return "not-master";
    case Errc::missing_model: return "missing-model";
    case Errc::invalid_argument: return "invalid-argument";
  }
  return "unknown";
}

/// Every failure raised by the runtime carries one of the codes above so
/// callers can branch without string matching.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace pprog
