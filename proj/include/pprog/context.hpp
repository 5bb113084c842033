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

#include "pprog/mailbox.hpp"
#include "pprog/message.hpp"
#include "pprog/trace.hpp"

#include <array>
#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string_view>

namespace pprog {

using std::chrono::milliseconds;

struct RuntimeOptions {
  milliseconds handshake_timeout{5000};
  milliseconds sweep_timeout{5000};
  milliseconds tick_timeout{5000};
  milliseconds teardown_timeout{5000};
  milliseconds request_timeout{5000};
  bool trace = true;

  /// Uses one value for every timeout.
  static RuntimeOptions with_timeout(milliseconds t, bool trace = true) {
    return RuntimeOptions{t, t, t, t, t, trace};
  }
};

enum class DropReason : std::uint8_t {
  expired,
  unknown_destination,
  dead_next_hop,
  unhandled_layer,
  node_terminated,
  invalid_message,
};

inline constexpr std::size_t kDropReasonCount = 6;

constexpr std::string_view to_string(DropReason r) noexcept {
  switch (r) {
    case DropReason::expired: return "expired";
    case DropReason::unknown_destination: return "unknown-destination";
    case DropReason::dead_next_hop: return "dead-next-hop";
    case DropReason::unhandled_layer: return "unhandled-layer";
    case DropReason::node_terminated: return "node-terminated";
    case DropReason::invalid_message: return "invalid-message";
  }
  return "?";
}

/// A node's address plus the capability to append to its inbound queue.
/// Holding an endpoint never keeps the node alive; it only keeps the queue
/// object around so that late senders get a clean refusal.
struct NodeEndpoint {
  Address address;
  std::shared_ptr<Mailbox<Message>> inbound;

  /// False when the node has terminated (or the endpoint is empty).
  bool enqueue(Message msg) const { return inbound && inbound->push(std::move(msg)); }
  bool try_enqueue(Message& msg) const { return inbound && inbound->try_push(msg); }
};

/// Resolves the handle a child reports in its CONFIG message.
class Directory {
 public:
  void add(const NodeEndpoint& ep) {
    std::lock_guard lock(mu_);
    entries_[ep.address] = ep;
  }

  std::optional<NodeEndpoint> resolve(Address a) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(a);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

 private:
  mutable std::mutex mu_;
  std::map<Address, NodeEndpoint> entries_;
};

class DropCounters {
 public:
  void add(DropReason r) { counts_[static_cast<std::size_t>(r)].fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t count(DropReason r) const {
    return counts_[static_cast<std::size_t>(r)].load(std::memory_order_relaxed);
  }
  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (const auto& c : counts_) sum += c.load(std::memory_order_relaxed);
    return sum;
  }

 private:
  std::array<std::atomic<std::uint64_t>, kDropReasonCount> counts_{};
};

/// State shared by every node of one runtime instance.
struct RuntimeContext {
  explicit RuntimeContext(RuntimeOptions opts) : options(opts), trace(opts.trace) {}

  Address allocate_address() { return Address{next_address.fetch_add(1) + 1}; }

  RuntimeOptions options;
  TraceLog trace;
  ExecutionLog executions;
  Directory directory;
  DropCounters drops;
  std::atomic<std::uint64_t> next_address{0};
};

}  // namespace pprog
