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

#include <atomic>
#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace pprog {

using Clock = std::chrono::steady_clock;
using Timestamp = Clock::time_point;

/// Identity of one node. Allocated by the runtime from a counter, so it is
/// unique and never reused; zero means "no node".
struct Address {
  std::uint64_t id = 0;

  constexpr bool valid() const noexcept { return id != 0; }
  friend constexpr auto operator<=>(Address, Address) = default;
};

inline std::string to_string(Address a) { return std::to_string(a.id); }

inline std::ostream& operator<<(std::ostream& os, Address a) { return os << a.id; }

inline std::optional<Address> parse_address(std::string_view text) {
  std::uint64_t id = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
  if (ec != std::errc{} || ptr != text.data() + text.size() || id == 0) return std::nullopt;
  return Address{id};
}

enum class Layer : std::uint8_t { transmission, service, domain };

enum class Action : std::uint8_t { config, config_ack, hello, echo, tick, exit, reg, req, ack };

constexpr std::string_view to_string(Layer layer) noexcept {
  switch (layer) {
    case Layer::transmission: return "TRANSMISSION";
    case Layer::service: return "SERVICE";
    case Layer::domain: return "DOMAIN";
  }
  return "?";
}

constexpr std::string_view to_string(Action action) noexcept {
  switch (action) {
    case Action::config: return "CONFIG";
    case Action::config_ack: return "CONFIG_ACK";
    case Action::hello: return "HELLO";
    case Action::echo: return "ECHO";
    case Action::tick: return "TICK";
    case Action::exit: return "EXIT";
    case Action::reg: return "REG";
    case Action::req: return "REQ";
    case Action::ack: return "ACK";
  }
  return "?";
}

/// The domain layer owns no actions of its own: domain work travels as
/// service-layer REQ/ACK traffic.
constexpr bool valid_for(Layer layer, Action action) noexcept {
  switch (action) {
    case Action::config:
    case Action::config_ack:
    case Action::hello:
    case Action::echo:
    case Action::tick:
    case Action::exit:
      return layer == Layer::transmission;
    case Action::reg:
    case Action::req:
    case Action::ack:
      return layer == Layer::service;
  }
  return false;
}

inline constexpr std::size_t kDefaultTimeToLive = 64;

/// One protocol message. Moved between queues, never shared mutably.
struct Message {
  Layer layer = Layer::transmission;
  Action action = Action::tick;
  Address intend;
  Address creator;
  bool need_echo = false;
  std::size_t time_to_live = kDefaultTimeToLive;
  Timestamp create_time{};
  std::uint64_t correlation_id = 0;
  std::vector<Address> route;
  std::vector<std::string> params;

  bool valid() const noexcept { return valid_for(layer, action); }
};

namespace detail {
inline std::atomic<std::uint64_t>& correlation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
}  // namespace detail

inline std::uint64_t next_correlation_id() {
  return detail::correlation_counter().fetch_add(1, std::memory_order_relaxed) + 1;
}

inline Message new_message(Layer layer, Action action, Address intend, Address creator,
                           std::vector<std::string> params = {}) {
  if (!valid_for(layer, action)) {
    throw ProtocolError(Errc::layer_mismatch, std::string(to_string(action)) + " is not a " +
                                                  std::string(to_string(layer)) + " action");
  }
  Message msg;
  msg.layer = layer;
  msg.action = action;
  msg.intend = intend;
  msg.creator = creator;
  msg.create_time = Clock::now();
  msg.correlation_id = next_correlation_id();
  msg.params = std::move(params);
  return msg;
}

/// Spends one unit of TTL and records `via` as the forwarding node.
inline Message hop(Message msg, Address via) {
  if (msg.time_to_live == 0) {
    throw ProtocolError(Errc::expired, "message " + std::to_string(msg.correlation_id) +
                                           " has no hops left");
  }
  --msg.time_to_live;
  msg.route.push_back(via);
  return msg;
}

/// Total order used to line up arrived messages: creation time first, then
/// (creator, correlation id).
inline std::weak_ordering arrival_order(const Message& a, const Message& b) noexcept {
  if (auto c = a.create_time <=> b.create_time; c != 0) return c;
  if (auto c = a.creator <=> b.creator; c != 0) return c;
  return a.correlation_id <=> b.correlation_id;
}

struct ArrivalBefore {
  bool operator()(const Message& a, const Message& b) const noexcept {
    return arrival_order(a, b) < 0;
  }
};

/// Single-line debug rendering; field order is fixed.
inline std::string to_string(const Message& msg) {
  std::ostringstream os;
  os << "layer=" << to_string(msg.layer) << " action=" << to_string(msg.action)
     << " intend=" << msg.intend << " creator=" << msg.creator << " ttl=" << msg.time_to_live
     << " route=[";
  for (std::size_t i = 0; i < msg.route.size(); ++i) os << (i ? "," : "") << msg.route[i];
  os << "] params=[";
  for (std::size_t i = 0; i < msg.params.size(); ++i) os << (i ? "," : "") << msg.params[i];
  os << ']';
  return os.str();
}

inline std::ostream& operator<<(std::ostream& os, const Message& msg) { return os << to_string(msg); }

}  // namespace pprog

template <>
struct std::hash<pprog::Address> {
  std::size_t operator()(pprog::Address a) const noexcept { return std::hash<std::uint64_t>{}(a.id); }
};
