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

#include "pprog/message.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace pprog {

enum class EventKind : std::uint8_t {
  spawn,
  config,
  config_ack,
  hello,
  echo,
  tick,
  exit,
  terminated,
  state,
  deliver,
  forward,
  drop,
  outlet,
  reg,
  req,
  ack,
};

inline constexpr std::array<std::string_view, 16> kEventNames = {
    "SPAWN", "CONFIG", "CONFIG_ACK", "HELLO",  "ECHO",   "TICK", "EXIT", "TERMINATED",
    "STATE", "DELIVER", "FORWARD",   "DROP",   "OUTLET", "REG",  "REQ",  "ACK"};

constexpr std::string_view to_string(EventKind kind) noexcept {
  return kEventNames[static_cast<std::size_t>(kind)];
}

inline std::optional<EventKind> parse_event_kind(std::string_view name) {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == name) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

struct TraceEvent {
  std::int64_t t_ns = 0;  // since the runtime's epoch, monotonic
  Address node;
  EventKind kind = EventKind::state;
  std::string detail;
};

/// Renders as `<t_ns> <node> <KIND> <detail>`.
inline std::string to_line(const TraceEvent& ev) {
  std::string out = std::to_string(ev.t_ns);
  out += ' ';
  out += to_string(ev.node);
  out += ' ';
  out += to_string(ev.kind);
  if (!ev.detail.empty()) {
    out += ' ';
    out += ev.detail;
  }
  return out;
}

inline std::optional<TraceEvent> parse_line(std::string_view line) {
  auto next_token = [&line]() -> std::string_view {
    auto sp = line.find(' ');
    auto tok = line.substr(0, sp);
    line = sp == std::string_view::npos ? std::string_view{} : line.substr(sp + 1);
    return tok;
  };
  TraceEvent ev;
  auto t = next_token();
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), ev.t_ns);
  if (ec != std::errc{} || p != t.data() + t.size()) return std::nullopt;
  auto node = parse_address(next_token());
  auto kind = parse_event_kind(next_token());
  if (!node || !kind) return std::nullopt;
  ev.node = *node;
  ev.kind = *kind;
  ev.detail = std::string(line);
  return ev;
}

/// Looks up `key=value` inside an event detail.
inline std::optional<std::string_view> detail_field(std::string_view detail, std::string_view key) {
  std::size_t pos = 0;
  while (pos < detail.size()) {
    auto end = detail.find(' ', pos);
    if (end == std::string_view::npos) end = detail.size();
    auto tok = detail.substr(pos, end - pos);
    if (tok.size() > key.size() && tok.substr(0, key.size()) == key && tok[key.size()] == '=') {
      return tok.substr(key.size() + 1);
    }
    pos = end + 1;
  }
  return std::nullopt;
}

class TraceLog {
 public:
  explicit TraceLog(bool enabled = true) : enabled_(enabled), epoch_(Clock::now()) {}

  bool enabled() const noexcept { return enabled_.load(std::memory_order_relaxed); }
  void set_enabled(bool on) noexcept { enabled_.store(on, std::memory_order_relaxed); }

  std::int64_t since_epoch(Timestamp t) const noexcept {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(t - epoch_).count();
  }
  std::int64_t now_ns() const noexcept { return since_epoch(Clock::now()); }

  void record(Address node, EventKind kind, std::string detail = {}) {
    if (!enabled()) return;
    std::lock_guard lock(mu_);
    events_.push_back(TraceEvent{now_ns(), node, kind, std::move(detail)});
  }

  std::vector<TraceEvent> snapshot() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  std::vector<std::string> lines() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    out.reserve(events_.size());
    for (const auto& ev : events_) out.push_back(to_line(ev));
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return events_.size();
  }

  void clear() {
    std::lock_guard lock(mu_);
    events_.clear();
  }

 private:
  std::atomic<bool> enabled_;
  Timestamp epoch_;
  mutable std::mutex mu_;
  std::vector<TraceEvent> events_;
};

/// One service execution as seen by the provider.
struct ExecutionInterval {
  Address provider;
  std::string service;
  std::uint64_t correlation_id = 0;
  std::int64_t start_ns = 0;
  std::int64_t end_ns = 0;
  std::int64_t cpu_ns = 0;  // thread CPU time spent inside the handler
  bool ok = true;
};

class ExecutionLog {
 public:
  void record(ExecutionInterval iv) {
    std::lock_guard lock(mu_);
    intervals_.push_back(std::move(iv));
  }

  std::vector<ExecutionInterval> snapshot() const {
    std::lock_guard lock(mu_);
    return intervals_;
  }

  std::vector<ExecutionInterval> for_service(std::string_view name) const {
    std::lock_guard lock(mu_);
    std::vector<ExecutionInterval> out;
    for (const auto& iv : intervals_) {
      if (iv.service == name) out.push_back(iv);
    }
    return out;
  }

  void clear() {
    std::lock_guard lock(mu_);
    intervals_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::vector<ExecutionInterval> intervals_;
};

}  // namespace pprog
