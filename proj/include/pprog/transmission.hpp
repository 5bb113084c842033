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

#include "pprog/context.hpp"
#include "pprog/error.hpp"
#include "pprog/mailbox.hpp"
#include "pprog/message.hpp"
#include "pprog/trace.hpp"

#include <condition_variable>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace pprog {

enum class NodeRole : std::uint8_t { master, server, router };

enum class NodeState : std::uint8_t { initializing, configured, connected, exiting, terminated };

constexpr std::string_view to_string(NodeRole role) noexcept {
  switch (role) {
    case NodeRole::master: return "MASTER";
    case NodeRole::server: return "SERVER";
    case NodeRole::router: return "ROUTER";
  }
  return "?";
}

constexpr std::string_view to_string(NodeState state) noexcept {
  switch (state) {
    case NodeState::initializing: return "INITIALIZING";
    case NodeState::configured: return "CONFIGURED";
    case NodeState::connected: return "CONNECTED";
    case NodeState::exiting: return "EXITING";
    case NodeState::terminated: return "TERMINATED";
  }
  return "?";
}

inline std::optional<NodeState> parse_node_state(std::string_view s) {
  for (auto st : {NodeState::initializing, NodeState::configured, NodeState::connected,
                  NodeState::exiting, NodeState::terminated}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

inline std::optional<NodeRole> parse_node_role(std::string_view s) {
  for (auto r : {NodeRole::master, NodeRole::server, NodeRole::router}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

/// Upward by default, downward when the destination is a known descendant.
struct RoutingTable {
  std::optional<NodeEndpoint> parent;
  std::map<Address, NodeEndpoint> children;
  std::map<Address, Address> descendants;  // destination -> next-hop child
};

enum class RouteKind : std::uint8_t { delivered, forwarded, dropped };

struct RouteDecision {
  RouteKind kind = RouteKind::dropped;
  Address next;                                    // set when forwarded
  DropReason reason = DropReason::unknown_destination;  // set when dropped
};

struct ConnectReport {
  bool complete = false;
  std::uint64_t sweep_id = 0;
  std::size_t node_count = 0;
  std::vector<Address> unresponsive;  // children of the master whose subtree never echoed
};

struct TickReport {
  Address target;
  NodeState state = NodeState::initializing;
  std::size_t inbound_length = 0;
  std::size_t delivered_length = 0;
  std::size_t hops_out = 0;
  std::size_t hops_back = 0;

  std::size_t round_trip_hops() const noexcept { return hops_out + hops_back; }
};

struct ShutdownReport {
  bool complete = false;
  std::vector<Address> unresponsive;  // children that never confirmed
  std::vector<Address> forced;        // nodes the runtime had to stop
};

/// Bottom layer of every node: owns the inbound queue, the router activity
/// (sole consumer of that queue) and the actor activity (sole consumer of
/// the delivered list). The master additionally keeps a control activity
/// that drives sweeps, registration rounds and teardown.
///
/// Messages that do not belong to the transmission layer are handed to
/// `transmission_outlet`, which upper layers override.
class TransmissionNode {
 public:
  TransmissionNode(RuntimeContext& ctx, Address self, NodeRole role,
                   std::optional<NodeEndpoint> parent)
      : ctx_(ctx), self_(self), role_(role), inbound_(std::make_shared<Mailbox<Message>>()) {
    if ((role == NodeRole::master) == parent.has_value()) {
      throw ProtocolError(Errc::invalid_argument, "a node has a parent unless it is the master");
    }
    table_.parent = std::move(parent);
  }

  TransmissionNode(const TransmissionNode&) = delete;
  TransmissionNode& operator=(const TransmissionNode&) = delete;

  virtual ~TransmissionNode() { TransmissionNode::halt(); }

  Address address() const noexcept { return self_; }
  NodeRole role() const noexcept { return role_; }
  NodeState state() const noexcept { return state_.load(); }
  NodeEndpoint endpoint() const { return NodeEndpoint{self_, inbound_}; }

  std::optional<Address> parent_address() const {
    std::lock_guard lock(mu_);
    if (!table_.parent) return std::nullopt;
    return table_.parent->address;
  }

  std::vector<Address> children() const {
    std::lock_guard lock(mu_);
    std::vector<Address> out;
    for (const auto& [a, _] : table_.children) out.push_back(a);
    return out;
  }

  RoutingTable routing_table() const {
    std::lock_guard lock(mu_);
    return table_;
  }

  std::size_t inbound_length() const { return inbound_->size(); }
  std::size_t delivered_length() const { return delivered_.size(); }

  /// Launches the router and actor activities (and the master's control
  /// activity). Called once, after construction.
  void start() {
    trace(EventKind::spawn, "role=" + std::string(to_string(role_)));
    router_ = std::thread([this] { router_loop(); });
    actor_ = std::thread([this] { actor_loop(); });
    if (role_ == NodeRole::master) {
      control_ = std::thread([this] { control_loop(); });
      set_state(NodeState::configured);
    }
    on_start();
  }

  /// CONFIG handshake: report our handle to the parent and wait for the
  /// acknowledgement on a transient configurer activity.
  void configure() {
    if (role_ == NodeRole::master) return;
    bool ok = false;
    std::thread configurer([this, &ok] {
      Address parent = table_.parent->address;
      trace(EventKind::config, "parent=" + to_string(parent));
      post(new_message(Layer::transmission, Action::config, parent, self_, {to_string(self_)}));
      std::unique_lock lock(mu_);
      ok = cv_.wait_for(lock, ctx_.options.handshake_timeout,
                        [this] { return configured_ || halted_.load(); }) &&
           configured_;
    });
    configurer.join();
    if (!ok) {
      throw ProtocolError(Errc::config_timeout,
                          "node " + to_string(self_) + " got no CONFIG_ACK from its parent");
    }
    set_state(NodeState::configured);
  }

  /// Originates a message from this node. All traffic leaves through the
  /// node's own router.
  void post(Message msg) {
    if (!inbound_->push(std::move(msg))) ctx_.drops.add(DropReason::node_terminated);
  }

  /// Pure routing decision for a message sitting in this node's inbound queue.
  RouteDecision decide_route(const Message& msg) const {
    if (msg.intend == self_) return {RouteKind::delivered, {}, {}};
    if (msg.time_to_live == 0) return {RouteKind::dropped, {}, DropReason::expired};
    std::lock_guard lock(mu_);
    return decide_locked(msg);
  }

  /// HELLO/ECHO sweep over the whole tree. Master only.
  ConnectReport start_connect() {
    return run_on_control([this] { return connect_sweep(); });
  }

  /// Repeats the sweep after a timeout, up to `attempts` times in total.
  ConnectReport connect_with_restart(int attempts) {
    ConnectReport report;
    for (int i = 0; i < attempts && !report.complete; ++i) report = start_connect();
    return report;
  }

  /// Round trip to `target`; throws Errc::unreachable when no answer comes
  /// back in time or the path is dead.
  TickReport tick(Address target, std::optional<milliseconds> timeout = std::nullopt) {
    Message msg = new_message(Layer::transmission, Action::tick, target, self_);
    msg.need_echo = true;
    const auto corr = msg.correlation_id;
    std::future<Message> reply_future;
    {
      std::lock_guard lock(pending_mu_);
      reply_future = pending_ticks_[corr].get_future();
    }
    trace(EventKind::tick, "target=" + to_string(target) + " corr=" + std::to_string(corr));
    post(std::move(msg));
    if (reply_future.wait_for(timeout.value_or(ctx_.options.tick_timeout)) !=
        std::future_status::ready) {
      std::lock_guard lock(pending_mu_);
      if (pending_ticks_.erase(corr) == 1) {
        throw ProtocolError(Errc::unreachable, "no reply from node " + to_string(target));
      }
    }
    Message reply = reply_future.get();
    if (reply.params.size() < 2 || reply.params[1] != "ok") {
      std::string why = reply.params.size() > 2 ? reply.params[2] : "no route";
      throw ProtocolError(Errc::unreachable, "node " + to_string(target) + ": " + why);
    }
    TickReport report;
    report.target = target;
    if (reply.params.size() >= 6) {
      report.state = parse_node_state(reply.params[2]).value_or(NodeState::initializing);
      report.inbound_length = std::stoul(reply.params[3]);
      report.delivered_length = std::stoul(reply.params[4]);
      report.hops_out = std::stoul(reply.params[5]);
    }
    report.hops_back = reply.route.size();
    return report;
  }

  /// Protocol teardown started at the master: EXIT floods down, confirmations
  /// flow up, the master terminates last.
  ShutdownReport shutdown() {
    if (role_ == NodeRole::master) {
      return run_on_control([this] { return exit_and_wait(); });
    }
    return exit_and_wait();
  }

  /// Removes `child` and everything routed through it. Returns the removed
  /// addresses.
  std::vector<Address> detach_subtree(Address child) {
    std::vector<Address> removed;
    std::vector<Message> out;
    {
      std::lock_guard lock(mu_);
      if (table_.children.erase(child) == 0) {
        throw ProtocolError(Errc::no_such_child,
                            to_string(child) + " is not a child of " + to_string(self_));
      }
      removed.push_back(child);
      for (auto it = table_.descendants.begin(); it != table_.descendants.end();) {
        if (it->second == child) {
          if (it->first != child) removed.push_back(it->first);
          it = table_.descendants.erase(it);
        } else {
          ++it;
        }
      }
      if (!hello_.done && hello_.pending.erase(child) == 1 && hello_.pending.empty()) {
        complete_hello_locked(out);
      }
      exit_.pending.erase(child);
    }
    trace(EventKind::state, "detached=" + to_string(child) + " removed=" + std::to_string(removed.size()));
    for (auto& m : out) post(std::move(m));
    on_subtree_removed(child, removed);
    return removed;
  }

  void suspend_router() { router_gate_.suspend(); }
  void resume_router() { router_gate_.resume(); }
  void suspend_actor() { actor_gate_.suspend(); }
  void resume_actor() { actor_gate_.resume(); }

  /// Stops every activity without running the protocol. Idempotent.
  virtual void halt() {
    if (halted_.exchange(true)) return;
    {
      std::lock_guard lock(mu_);
    }
    cv_.notify_all();
    inbound_->close();
    delivered_.close();
    control_jobs_.close();
    router_gate_.release();
    actor_gate_.release();
    join(router_);
    join(actor_);
    join(control_);
    if (state() != NodeState::terminated) {
      state_.store(NodeState::terminated);
      trace(EventKind::terminated, "forced=1");
    }
    std::unordered_map<std::uint64_t, std::promise<Message>> ticks;
    {
      std::lock_guard lock(pending_mu_);
      ticks.swap(pending_ticks_);
    }
    for (auto& [_, p] : ticks) {
      p.set_exception(std::make_exception_ptr(ProtocolError(Errc::unreachable, "node halted")));
    }
  }

  bool halted() const noexcept { return halted_.load(); }

 protected:
  /// Non-transmission messages end up here, on the actor activity, in
  /// arrival order.
  virtual void transmission_outlet(Message msg) { drop(std::move(msg), DropReason::unhandled_layer, false); }

  /// A message from the layer above that could not be routed.
  virtual void undeliverable(Message, DropReason) {}

  virtual void on_start() {}
  /// Runs on the actor once every child has confirmed EXIT, before the node
  /// reports TERMINATED.
  virtual void on_exiting() {}
  virtual void on_subtree_removed(Address, const std::vector<Address>&) {}

  void trace(EventKind kind, std::string detail = {}) const {
    ctx_.trace.record(self_, kind, std::move(detail));
  }

  /// Records `addrs` as reachable through `child`.
  void learn_descendants(Address child, const std::vector<Address>& addrs) {
    std::lock_guard lock(mu_);
    if (!table_.children.contains(child)) return;
    for (auto a : addrs) {
      if (a != self_) table_.descendants[a] = child;
    }
  }

  template <class F>
  auto run_on_control(F&& f) -> decltype(f()) {
    using R = decltype(f());
    if (role_ != NodeRole::master) {
      throw ProtocolError(Errc::not_master, "node " + to_string(self_) + " has no control activity");
    }
    std::packaged_task<R()> task(std::forward<F>(f));
    auto fut = task.get_future();
    if (!control_jobs_.push([&task] { task(); })) {
      throw ProtocolError(Errc::unreachable, "master control activity has stopped");
    }
    return fut.get();
  }

  void drop(Message msg, DropReason reason, bool may_bounce) {
    ctx_.drops.add(reason);
    if (ctx_.trace.enabled()) {
      trace(EventKind::drop, "reason=" + std::string(to_string(reason)) + " action=" +
                                 std::string(to_string(msg.action)) +
                                 " corr=" + std::to_string(msg.correlation_id) +
                                 " intend=" + to_string(msg.intend));
    }
    if (!may_bounce) return;
    const bool bounce = (msg.layer == Layer::transmission && msg.action == Action::tick) ||
                        msg.layer != Layer::transmission;
    if (bounce) delivered_.push(Delivery{std::move(msg), reason});
  }

  RuntimeContext& ctx_;
  const Address self_;
  const NodeRole role_;

 private:
  struct Delivery {
    Message msg;
    std::optional<DropReason> bounced;
  };
  struct DeliveryBefore {
    bool operator()(const Delivery& a, const Delivery& b) const noexcept {
      return arrival_order(a.msg, b.msg) < 0;
    }
  };
  struct Sweep {
    std::uint64_t id = 0;
    bool done = false;
    std::set<Address> pending;
    std::set<Address> collected;
  };
  struct Teardown {
    bool started = false;
    std::set<Address> pending;
  };

  static void join(std::thread& t) {
    if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
  }

  void set_state(NodeState s) {
    state_.store(s);
    if (s == NodeState::terminated) {
      trace(EventKind::terminated);
    } else {
      trace(EventKind::state, "state=" + std::string(to_string(s)));
    }
  }

  RouteDecision decide_locked(const Message& msg) const {
    if (auto it = table_.descendants.find(msg.intend); it != table_.descendants.end()) {
      if (table_.children.contains(it->second)) return {RouteKind::forwarded, it->second, {}};
    }
    if (!table_.parent) return {RouteKind::dropped, {}, DropReason::unknown_destination};
    // Heading down but the destination is not below us: the subtree is gone.
    const bool from_parent = !msg.route.empty() && msg.route.back() == table_.parent->address;
    if (from_parent) return {RouteKind::dropped, {}, DropReason::unknown_destination};
    return {RouteKind::forwarded, table_.parent->address, {}};
  }

  void router_loop() {
    for (;;) {
      router_gate_.wait();
      auto msg = inbound_->pop();
      if (!msg) break;
      router_gate_.wait();
      route_message(std::move(*msg));
    }
  }

  void route_message(Message msg) {
    if (!msg.valid()) return drop(std::move(msg), DropReason::invalid_message, false);
    if (msg.intend == self_) {
      if (ctx_.trace.enabled()) {
        trace(EventKind::deliver, "action=" + std::string(to_string(msg.action)) +
                                      " corr=" + std::to_string(msg.correlation_id) +
                                      " hops=" + std::to_string(msg.route.size()));
      }
      if (!delivered_.push(Delivery{std::move(msg), std::nullopt})) {
        ctx_.drops.add(DropReason::node_terminated);
      }
      return;
    }
    if (msg.time_to_live == 0) return drop(std::move(msg), DropReason::expired, true);

    RouteDecision d;
    NodeEndpoint next;
    {
      std::lock_guard lock(mu_);
      // Anything climbing out of a child's subtree has only travelled
      // upward, so every address on its route lives below that child.
      if (!msg.route.empty()) {
        const Address child = msg.route.back();
        if (table_.children.contains(child)) {
          for (auto a : msg.route) table_.descendants[a] = child;
        }
      }
      d = decide_locked(msg);
      if (d.kind == RouteKind::forwarded) {
        auto it = table_.children.find(d.next);
        next = it != table_.children.end() ? it->second : *table_.parent;
      }
    }
    if (d.kind == RouteKind::dropped) return drop(std::move(msg), d.reason, true);

    msg = hop(std::move(msg), self_);
    if (ctx_.trace.enabled()) {
      trace(EventKind::forward, "action=" + std::string(to_string(msg.action)) +
                                    " corr=" + std::to_string(msg.correlation_id) +
                                    " next=" + to_string(next.address) +
                                    " ttl=" + std::to_string(msg.time_to_live));
    }
    if (!next.try_enqueue(msg)) drop(std::move(msg), DropReason::dead_next_hop, true);
  }

  void actor_loop() {
    for (;;) {
      actor_gate_.wait();
      auto item = delivered_.pop();
      if (!item) break;
      // suspended while blocked in pop: park the item again, order is kept
      if (!actor_gate_.is_open()) {
        if (!delivered_.try_push(*item)) ctx_.drops.add(DropReason::node_terminated);
        continue;
      }
      if (state() == NodeState::terminated) {
        ctx_.drops.add(DropReason::node_terminated);
        continue;
      }
      try {
        if (item->bounced) {
          handle_bounce(std::move(item->msg), *item->bounced);
        } else if (item->msg.layer == Layer::transmission) {
          handle_transmission(std::move(item->msg));
        } else {
          if (ctx_.trace.enabled()) {
            trace(EventKind::outlet, "action=" + std::string(to_string(item->msg.action)) +
                                         " corr=" + std::to_string(item->msg.correlation_id));
          }
          transmission_outlet(std::move(item->msg));
        }
      } catch (const std::exception& e) {
        trace(EventKind::drop, std::string("reason=handler-error what=") + e.what());
      }
    }
  }

  void control_loop() {
    while (auto job = control_jobs_.pop()) (*job)();
  }

  void handle_bounce(Message msg, DropReason reason) {
    if (msg.layer == Layer::transmission) {
      if (msg.action != Action::tick) return;
      Message reply = new_message(Layer::transmission, Action::echo, msg.creator, self_,
                                  {"tick", "unreachable", std::string(to_string(reason))});
      reply.correlation_id = msg.correlation_id;
      post(std::move(reply));
      return;
    }
    undeliverable(std::move(msg), reason);
  }

  void handle_transmission(Message msg) {
    switch (msg.action) {
      case Action::config: return on_config(msg);
      case Action::config_ack: {
        {
          std::lock_guard lock(mu_);
          configured_ = true;
        }
        trace(EventKind::config_ack, "from=" + to_string(msg.creator));
        cv_.notify_all();
        return;
      }
      case Action::hello:
        if (!msg.params.empty()) on_hello(std::stoull(msg.params[0]));
        return;
      case Action::echo: return on_echo(msg);
      case Action::tick: return on_tick(msg);
      case Action::exit:
        if (!msg.params.empty() && msg.params[0] == "down") return begin_exit();
        if (!msg.params.empty() && msg.params[0] == "up") return on_exit_confirm(msg.creator);
        return;
      default: return;
    }
  }

  void on_config(const Message& msg) {
    auto child = msg.params.empty() ? std::nullopt : parse_address(msg.params[0]);
    auto ep = child ? ctx_.directory.resolve(*child) : std::nullopt;
    if (!ep) return drop(msg, DropReason::invalid_message, false);
    {
      std::lock_guard lock(mu_);
      table_.children[*child] = *ep;
      table_.descendants[*child] = *child;
    }
    trace(EventKind::config, "child=" + to_string(*child));
    post(new_message(Layer::transmission, Action::config_ack, *child, self_));
  }

  void on_hello(std::uint64_t id) {
    std::vector<Message> out;
    {
      std::lock_guard lock(mu_);
      if (id < hello_.id) return;
      if (id == hello_.id) {
        // Duplicate of the current sweep: answer again if we already
        // answered, never forward twice.
        if (hello_.done && table_.parent) out.push_back(make_echo_locked());
      } else {
        hello_ = Sweep{id, false, {}, {self_}};
        for (const auto& [child, _] : table_.children) {
          hello_.pending.insert(child);
          out.push_back(new_message(Layer::transmission, Action::hello, child, self_,
                                    {std::to_string(id)}));
        }
        trace(EventKind::hello, "sweep=" + std::to_string(id) +
                                    " children=" + std::to_string(hello_.pending.size()));
        if (hello_.pending.empty()) complete_hello_locked(out);
      }
    }
    for (auto& m : out) post(std::move(m));
  }

  void on_echo(const Message& msg) {
    if (msg.params.empty()) return;
    if (msg.params[0] == "tick") return resolve_tick(msg);
    if (msg.params[0] != "hello" || msg.params.size() < 2) return;
    const std::uint64_t id = std::stoull(msg.params[1]);
    std::vector<Message> out;
    {
      std::lock_guard lock(mu_);
      if (id != hello_.id || hello_.done || hello_.pending.erase(msg.creator) == 0) return;
      const bool is_child = table_.children.contains(msg.creator);
      for (std::size_t i = 2; i < msg.params.size(); ++i) {
        if (auto a = parse_address(msg.params[i])) {
          hello_.collected.insert(*a);
          if (is_child && *a != self_) table_.descendants[*a] = msg.creator;
        }
      }
      if (hello_.pending.empty()) complete_hello_locked(out);
    }
    for (auto& m : out) post(std::move(m));
  }

  Message make_echo_locked() const {
    std::vector<std::string> params{"hello", std::to_string(hello_.id)};
    params.reserve(2 + hello_.collected.size());
    for (auto a : hello_.collected) params.push_back(to_string(a));
    return new_message(Layer::transmission, Action::echo, table_.parent->address, self_,
                       std::move(params));
  }

  void complete_hello_locked(std::vector<Message>& out) {
    hello_.done = true;
    auto s = state();
    if (s != NodeState::exiting && s != NodeState::terminated) set_state(NodeState::connected);
    if (table_.parent) {
      trace(EventKind::echo, "sweep=" + std::to_string(hello_.id) + " to=" +
                                 to_string(table_.parent->address) +
                                 " nodes=" + std::to_string(hello_.collected.size()));
      out.push_back(make_echo_locked());
    } else {
      trace(EventKind::echo, "sweep=" + std::to_string(hello_.id) +
                                 " root=1 nodes=" + std::to_string(hello_.collected.size()));
    }
    cv_.notify_all();
  }

  ConnectReport connect_sweep() {
    std::uint64_t id = 0;
    {
      std::lock_guard lock(mu_);
      id = ++sweep_counter_;
    }
    post(new_message(Layer::transmission, Action::hello, self_, self_, {std::to_string(id)}));
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, ctx_.options.sweep_timeout,
                 [&] { return halted_.load() || (hello_.id == id && hello_.done); });
    ConnectReport report;
    report.sweep_id = id;
    report.complete = hello_.id == id && hello_.done;
    if (report.complete) {
      report.node_count = hello_.collected.size();
    } else if (hello_.id == id) {
      report.unresponsive.assign(hello_.pending.begin(), hello_.pending.end());
    } else {
      for (const auto& [child, _] : table_.children) report.unresponsive.push_back(child);
    }
    return report;
  }

  void on_tick(const Message& msg) {
    Message reply = new_message(
        Layer::transmission, Action::echo, msg.creator, self_,
        {"tick", "ok", std::string(to_string(state())), std::to_string(inbound_->size()),
         std::to_string(delivered_.size()), std::to_string(msg.route.size())});
    reply.correlation_id = msg.correlation_id;
    trace(EventKind::tick, "reply=" + to_string(msg.creator) +
                               " corr=" + std::to_string(msg.correlation_id));
    post(std::move(reply));
  }

  void resolve_tick(const Message& msg) {
    std::promise<Message> p;
    {
      std::lock_guard lock(pending_mu_);
      auto it = pending_ticks_.find(msg.correlation_id);
      if (it == pending_ticks_.end()) return;
      p = std::move(it->second);
      pending_ticks_.erase(it);
    }
    p.set_value(msg);
  }

  void begin_exit() {
    std::vector<Message> out;
    bool finish = false;
    {
      std::lock_guard lock(mu_);
      if (exit_.started) return;
      exit_.started = true;
      for (const auto& [child, _] : table_.children) {
        exit_.pending.insert(child);
        out.push_back(new_message(Layer::transmission, Action::exit, child, self_, {"down"}));
      }
      finish = exit_.pending.empty();
    }
    set_state(NodeState::exiting);
    trace(EventKind::exit, "children=" + std::to_string(out.size()));
    for (auto& m : out) post(std::move(m));
    if (finish) finish_exit();
  }

  void on_exit_confirm(Address child) {
    bool finish = false;
    {
      std::lock_guard lock(mu_);
      if (!exit_.started || exit_.pending.erase(child) == 0) return;
      finish = exit_.pending.empty();
    }
    trace(EventKind::exit, "confirmed=" + to_string(child));
    if (finish) finish_exit();
  }

  void finish_exit() {
    on_exiting();
    std::optional<Address> parent = parent_address();
    {
      std::lock_guard lock(mu_);
      set_state(NodeState::terminated);
    }
    // Confirmation is the last thing this node sends; the router drains it
    // after the inbound queue closes.
    if (parent) post(new_message(Layer::transmission, Action::exit, *parent, self_, {"up"}));
    inbound_->close();
    for (auto& left : delivered_.close_and_take()) {
      (void)left;
      ctx_.drops.add(DropReason::node_terminated);
    }
    control_jobs_.close();
    cv_.notify_all();
  }

  ShutdownReport exit_and_wait() {
    post(new_message(Layer::transmission, Action::exit, self_, self_, {"down"}));
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, ctx_.options.teardown_timeout,
                 [&] { return halted_.load() || state() == NodeState::terminated; });
    ShutdownReport report;
    report.complete = state() == NodeState::terminated;
    if (!report.complete) report.unresponsive.assign(exit_.pending.begin(), exit_.pending.end());
    return report;
  }

  RoutingTable table_;
  std::shared_ptr<Mailbox<Message>> inbound_;
  OrderedMailbox<Delivery, DeliveryBefore> delivered_;
  Mailbox<std::function<void()>> control_jobs_;
  Gate router_gate_;
  Gate actor_gate_;
  std::thread router_;
  std::thread actor_;
  std::thread control_;
  std::atomic<NodeState> state_{NodeState::initializing};
  std::atomic<bool> halted_{false};

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool configured_ = false;
  Sweep hello_;
  Teardown exit_;
  std::uint64_t sweep_counter_ = 0;

  std::mutex pending_mu_;
  std::unordered_map<std::uint64_t, std::promise<Message>> pending_ticks_;
};

}  // namespace pprog
