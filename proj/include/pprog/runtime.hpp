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

#include "pprog/service.hpp"

#include <memory>
#include <mutex>
#include <vector>

namespace pprog {

/// Owns every node of one connecting network plus the shared trace and
/// execution logs. Destroying the runtime stops whatever is still running.
class Runtime {
 public:
  explicit Runtime(RuntimeOptions options = {})
      : ctx_(std::make_unique<RuntimeContext>(options)) {}

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  ~Runtime() { halt_all(); }

  /// Spawns a node and, unless it is the master, runs the CONFIG handshake
  /// with `parent` before returning.
  template <class NodeT = ServiceNode>
  NodeT& spawn_as(NodeRole role, std::optional<Address> parent = std::nullopt) {
    std::optional<NodeEndpoint> parent_ep;
    if (parent) {
      parent_ep = ctx_->directory.resolve(*parent);
      if (!parent_ep) throw ProtocolError(Errc::invalid_argument, "unknown parent " + to_string(*parent));
    }
    if (role == NodeRole::master && master_ != nullptr) {
      throw ProtocolError(Errc::invalid_argument, "a connecting network has exactly one master");
    }
    auto node = std::make_unique<NodeT>(*ctx_, ctx_->allocate_address(), role, std::move(parent_ep));
    NodeT& ref = *node;
    ctx_->directory.add(ref.endpoint());
    {
      std::lock_guard lock(mu_);
      nodes_.push_back(std::move(node));
    }
    ref.start();
    try {
      ref.configure();
    } catch (...) {
      ref.halt();
      throw;
    }
    if (role == NodeRole::master) master_ = &ref;
    return ref;
  }

  ServiceNode& spawn(NodeRole role, std::optional<Address> parent = std::nullopt) {
    return spawn_as<ServiceNode>(role, parent);
  }

  TransmissionNode& master() const {
    if (master_ == nullptr) throw ProtocolError(Errc::not_master, "no master has been spawned");
    return *master_;
  }

  ServiceNode& service_master() const { return service(master().address()); }

  TransmissionNode* find(Address a) const {
    std::lock_guard lock(mu_);
    for (const auto& n : nodes_) {
      if (n->address() == a) return n.get();
    }
    return nullptr;
  }

  TransmissionNode& node(Address a) const {
    auto* n = find(a);
    if (n == nullptr) throw ProtocolError(Errc::invalid_argument, "unknown node " + to_string(a));
    return *n;
  }

  ServiceNode& service(Address a) const {
    auto* n = dynamic_cast<ServiceNode*>(&node(a));
    if (n == nullptr) throw ProtocolError(Errc::invalid_argument, to_string(a) + " has no service layer");
    return *n;
  }

  std::vector<TransmissionNode*> nodes() const {
    std::lock_guard lock(mu_);
    std::vector<TransmissionNode*> out;
    for (const auto& n : nodes_) out.push_back(n.get());
    return out;
  }

  ConnectReport start_connect(int attempts = 1) { return master().connect_with_restart(attempts); }

  RegistrationReport run_registration() { return service_master().run_registration(); }

  /// Teardown from the master. Anything that did not confirm in time is
  /// stopped by force and listed in the report.
  ShutdownReport shutdown() {
    ShutdownReport report = master().shutdown();
    for (auto* n : nodes()) {
      if (n->state() != NodeState::terminated) {
        report.forced.push_back(n->address());
      }
      n->halt();
    }
    return report;
  }

  std::vector<Address> detach(Address parent, Address child) { return node(parent).detach_subtree(child); }

  /// Tears down a subtree that was detached earlier.
  ShutdownReport retire(Address root, const std::vector<Address>& subtree) {
    ShutdownReport report = node(root).shutdown();
    for (auto a : subtree) {
      auto* n = find(a);
      if (n == nullptr) continue;
      if (n->state() != NodeState::terminated) report.forced.push_back(a);
      n->halt();
    }
    return report;
  }

  void halt_all() {
    for (auto* n : nodes()) n->halt();
  }

  const RuntimeOptions& options() const noexcept { return ctx_->options; }
  TraceLog& trace() noexcept { return ctx_->trace; }
  const TraceLog& trace() const noexcept { return ctx_->trace; }
  ExecutionLog& executions() noexcept { return ctx_->executions; }
  const DropCounters& drops() const noexcept { return ctx_->drops; }

 private:
  std::unique_ptr<RuntimeContext> ctx_;
  mutable std::mutex mu_;
  std::vector<std::unique_ptr<TransmissionNode>> nodes_;
  TransmissionNode* master_ = nullptr;
};

}  // namespace pprog
