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

#include "pprog/transmission.hpp"

#include <nlohmann/json.hpp>

#include <ctime>
#include <list>
#include <span>
#include <unordered_set>

namespace pprog {

enum class ExecutionMode : std::uint8_t { worker, function };

constexpr std::string_view to_string(ExecutionMode m) noexcept {
  return m == ExecutionMode::worker ? "WORKER" : "FUNCTION";
}

/// What a node knows about one service: who provides it, how to get there
/// (provider first, holder of this copy last) and how it runs.
struct ServiceDescription {
  std::string name;
  Address provider;
  std::vector<Address> route;
  ExecutionMode mode = ExecutionMode::function;
  bool reentrant = false;

  friend bool operator==(const ServiceDescription&, const ServiceDescription&) = default;
};

inline void to_json(nlohmann::json& j, const ServiceDescription& d) {
  std::vector<std::uint64_t> route;
  for (auto a : d.route) route.push_back(a.id);
  j = nlohmann::json{{"name", d.name},
                     {"provider", d.provider.id},
                     {"route", route},
                     {"mode", std::string(to_string(d.mode))},
                     {"reentrant", d.reentrant}};
}

inline void from_json(const nlohmann::json& j, ServiceDescription& d) {
  d.name = j.at("name").get<std::string>();
  d.provider = Address{j.at("provider").get<std::uint64_t>()};
  d.route.clear();
  for (auto id : j.at("route")) d.route.push_back(Address{id.get<std::uint64_t>()});
  d.mode = j.at("mode").get<std::string>() == "WORKER" ? ExecutionMode::worker : ExecutionMode::function;
  d.reentrant = j.at("reentrant").get<bool>();
}

/// name -> descriptions sorted by provider, plus a round-robin cursor per name.
class ServiceRegistry {
 public:
  /// Replaces the entry with the same (name, provider), else inserts.
  void upsert(ServiceDescription d) {
    auto& list = entries_[d.name];
    auto it = std::lower_bound(list.begin(), list.end(), d.provider,
                               [](const ServiceDescription& x, Address p) { return x.provider < p; });
    if (it != list.end() && it->provider == d.provider) {
      *it = std::move(d);
    } else {
      list.insert(it, std::move(d));
    }
  }

  void replace(std::vector<ServiceDescription> all) {
    entries_.clear();
    for (auto& d : all) upsert(std::move(d));
    clamp_cursors();
  }

  std::size_t prune(const std::set<Address>& providers) {
    std::size_t removed = 0;
    for (auto it = entries_.begin(); it != entries_.end();) {
      auto& list = it->second;
      removed += std::erase_if(list, [&](const auto& d) { return providers.contains(d.provider); });
      it = list.empty() ? entries_.erase(it) : std::next(it);
    }
    clamp_cursors();
    return removed;
  }

  std::vector<ServiceDescription> match(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) return {};
    return it->second;
  }

  /// Round-robin over the matches in provider order.
  ServiceDescription select(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end() || it->second.empty()) {
      throw ProtocolError(Errc::no_provider, "no provider for '" + std::string(name) + "'");
    }
    auto cur = cursor_.find(name);
    if (cur == cursor_.end()) cur = cursor_.emplace(std::string(name), 0).first;
    const auto& list = it->second;
    ServiceDescription picked = list[cur->second % list.size()];
    cur->second = (cur->second + 1) % list.size();
    return picked;
  }

  std::size_t cursor(std::string_view name) const {
    auto it = cursor_.find(name);
    return it == cursor_.end() ? 0 : it->second;
  }

  std::vector<ServiceDescription> all() const {
    std::vector<ServiceDescription> out;
    for (const auto& [_, list] : entries_) out.insert(out.end(), list.begin(), list.end());
    return out;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, list] : entries_) n += list.size();
    return n;
  }

  bool empty() const { return entries_.empty(); }

 private:
  void clamp_cursors() {
    for (auto it = cursor_.begin(); it != cursor_.end();) {
      auto e = entries_.find(it->first);
      if (e == entries_.end()) {
        it = cursor_.erase(it);
      } else {
        it->second %= e->second.size();
        ++it;
      }
    }
  }

  std::map<std::string, std::vector<ServiceDescription>, std::less<>> entries_;
  std::map<std::string, std::size_t, std::less<>> cursor_;
};

/// Exact, case-sensitive name match.
inline std::vector<ServiceDescription> match_service(const ServiceRegistry& registry,
                                                     std::string_view name) {
  return registry.match(name);
}

inline ServiceDescription select_provider(ServiceRegistry& registry, std::string_view name) {
  return registry.select(name);
}

enum class RequestMode : std::uint8_t { sync, async };

struct RequestHandle {
  std::uint64_t correlation_id = 0;
  RequestMode mode = RequestMode::async;
  Timestamp submitted_at{};
};

enum class ReplyStatus : std::uint8_t { ok, no_provider, timeout, service_error, terminated };

constexpr std::string_view to_string(ReplyStatus s) noexcept {
  switch (s) {
    case ReplyStatus::ok: return "ok";
    case ReplyStatus::no_provider: return "no-provider";
    case ReplyStatus::timeout: return "timeout";
    case ReplyStatus::service_error: return "service-error";
    case ReplyStatus::terminated: return "terminated";
  }
  return "?";
}

/// Outcome of a synchronous request.
struct Reply {
  ReplyStatus status = ReplyStatus::timeout;
  std::vector<std::string> values;
  std::string detail;
  std::uint64_t correlation_id = 0;
  Address served_by;
  std::vector<Address> request_route;  // hops the REQ took to reach the provider
  std::size_t ack_hops = 0;

  bool ok() const noexcept { return status == ReplyStatus::ok; }
};

class ServiceNode;

/// Handed to a service handler for one execution.
struct ServiceCall {
  ServiceNode& node;
  const Message& request;
  std::string_view service;
  std::span<const std::string> args;
};

using ServiceHandler = std::function<std::vector<std::string>(ServiceCall&)>;

struct RegistrationReport {
  bool complete = false;
  std::uint64_t round = 0;
  std::size_t service_count = 0;
  std::vector<Address> silent;  // children of the master whose subtree never reported
};

struct ServiceStats {
  std::uint64_t acks_received = 0;
  std::uint64_t duplicate_acks = 0;  // ACK for a request that already resolved
  std::uint64_t late_acks = 0;       // ACK after the caller timed out
  std::uint64_t unmatched_acks = 0;  // ACK for a correlation id never issued here
  std::uint64_t async_failures = 0;
  std::uint64_t executions = 0;
};

namespace detail {
inline std::int64_t thread_cpu_ns() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return std::int64_t{ts.tv_sec} * 1'000'000'000 + ts.tv_nsec;
}

inline std::string join_route(const std::vector<Address>& route) {
  std::string out;
  for (std::size_t i = 0; i < route.size(); ++i) {
    if (i) out += ',';
    out += to_string(route[i]);
  }
  return out;
}

inline std::vector<Address> split_route(std::string_view text) {
  std::vector<Address> out;
  while (!text.empty()) {
    auto comma = text.find(',');
    if (auto a = parse_address(text.substr(0, comma))) out.push_back(*a);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}
}  // namespace detail

/// Service layer. REQ parameters are laid out as
/// `[name, phase, args...]` where phase is "seek" while the request climbs
/// towards the master looking for a match and "serve" once a provider has
/// been chosen. ACK parameters are `["ok", req-route, values...]` or
/// `["error", req-route, code, detail]`.
class ServiceNode : public TransmissionNode {
 public:
  using TransmissionNode::TransmissionNode;

  ~ServiceNode() override { ServiceNode::halt(); }

  void register_local(ServiceDescription desc, ServiceHandler handler) {
    if (role_ == NodeRole::router) {
      throw ProtocolError(Errc::router_has_no_services,
                          "router " + to_string(self_) + " cannot provide '" + desc.name + "'");
    }
    if (desc.name.empty()) throw ProtocolError(Errc::invalid_service, "service name is empty");
    if (!desc.provider.valid()) desc.provider = self_;
    if (desc.provider != self_) {
      throw ProtocolError(Errc::invalid_service, "provider of '" + desc.name + "' must be this node");
    }
    if (!handler) throw ProtocolError(Errc::invalid_service, "'" + desc.name + "' has no handler");
    desc.route = {self_};
    std::lock_guard lock(svc_mu_);
    if (local_.contains(desc.name)) {
      throw ProtocolError(Errc::duplicate_service,
                          "'" + desc.name + "' already provided by " + to_string(self_));
    }
    auto svc = std::make_shared<LocalService>(LocalService{desc, std::move(handler), nullptr});
    if (desc.mode == ExecutionMode::worker && !desc.reentrant) {
      svc->worker = std::make_unique<Worker>();
      svc->worker->thread = std::thread([this, raw = svc.get()] {
        while (auto m = raw->worker->box.pop()) execute(*raw, *m);
      });
    }
    local_.emplace(desc.name, std::move(svc));
    registry_.upsert(desc);
  }

  void register_local(std::string name, ExecutionMode mode, bool reentrant, ServiceHandler handler) {
    register_local(ServiceDescription{std::move(name), self_, {}, mode, reentrant}, std::move(handler));
  }

  std::vector<ServiceDescription> local_services() const {
    std::lock_guard lock(svc_mu_);
    std::vector<ServiceDescription> out;
    for (const auto& [_, svc] : local_) out.push_back(svc->desc);
    return out;
  }

  ServiceRegistry registry() const {
    std::lock_guard lock(svc_mu_);
    return registry_;
  }

  /// REG round from the master: descriptions are collected leaves-first and
  /// every node ends up knowing its own subtree.
  RegistrationReport run_registration() {
    return run_on_control([this] { return registration_round(); });
  }

  Reply request_sync(std::string name, std::vector<std::string> args,
                     std::optional<milliseconds> timeout = std::nullopt) {
    Message req = make_request(std::move(name), std::move(args));
    req.need_echo = true;
    const auto corr = req.correlation_id;
    std::future<Message> fut;
    {
      std::lock_guard lock(pending_mu_);
      if (halting_) return failed_reply(ReplyStatus::terminated, "node halted", corr);
      fut = pending_[corr].promise.get_future();
      pending_[corr].submitted = Clock::now();
    }
    trace_request(req, "sync");
    post(std::move(req));
    if (fut.wait_for(timeout.value_or(ctx_.options.request_timeout)) != std::future_status::ready) {
      std::lock_guard lock(pending_mu_);
      if (pending_.erase(corr) == 1) {
        timed_out_.insert(corr);
        return failed_reply(ReplyStatus::timeout, "no ACK in time", corr);
      }
    }
    return to_reply(fut.get());
  }

  /// Fire and forget; failures come back as error ACKs and are counted.
  RequestHandle request_async(std::string name, std::vector<std::string> args) {
    Message req = make_request(std::move(name), std::move(args));
    RequestHandle handle{req.correlation_id, RequestMode::async, req.create_time};
    {
      std::lock_guard lock(pending_mu_);
      async_ids_.insert(req.correlation_id);
    }
    trace_request(req, "async");
    post(std::move(req));
    return handle;
  }

  ServiceStats stats() const {
    std::lock_guard lock(pending_mu_);
    return stats_;
  }

  std::size_t service_list_length() const { return service_list_.size(); }

  void halt() override {
    std::unordered_map<std::uint64_t, Pending> pending;
    {
      std::lock_guard lock(pending_mu_);
      halting_ = true;
      pending.swap(pending_);
    }
    for (auto& [corr, p] : pending) {
      Message m;
      m.correlation_id = corr;
      m.params = {"error", "", "terminated", "node halted"};
      p.promise.set_value(std::move(m));
    }
    {
      std::lock_guard lock(svc_mu_);
      stopping_ = true;
    }
    reg_cv_.notify_all();
    TransmissionNode::halt();
    stop_execution();
  }

 protected:
  void on_start() override {
    if (role_ != NodeRole::router) executor_ = std::thread([this] { executor_loop(); });
  }

  void transmission_outlet(Message msg) override {
    if (msg.layer != Layer::service) return drop(std::move(msg), DropReason::unhandled_layer, false);
    switch (msg.action) {
      case Action::reg: return on_reg(msg);
      case Action::req: return on_req(std::move(msg));
      case Action::ack: return on_ack(msg);
      default: return;
    }
  }

  void undeliverable(Message msg, DropReason reason) override {
    if (msg.layer == Layer::service && msg.action == Action::req) {
      send_failure(msg, "no-provider", "undeliverable: " + std::string(to_string(reason)));
    }
  }

  void on_exiting() override { stop_execution(); }

  void on_subtree_removed(Address child, const std::vector<Address>& removed) override {
    std::vector<Message> out;
    {
      std::lock_guard lock(svc_mu_);
      registry_.prune(std::set<Address>(removed.begin(), removed.end()));
      if (!reg_.done && reg_.pending.erase(child) == 1 && reg_.pending.empty()) {
        complete_round_locked(out);
      }
    }
    for (auto& m : out) post(std::move(m));
  }

 private:
  struct Worker {
    Mailbox<Message> box;
    std::thread thread;
  };
  struct LocalService {
    ServiceDescription desc;
    ServiceHandler handler;
    std::unique_ptr<Worker> worker;
  };
  struct Runner {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  struct Pending {
    std::promise<Message> promise;
    Timestamp submitted{};
  };
  struct RegRound {
    std::uint64_t id = 0;
    bool done = true;
    std::set<Address> pending;
    std::vector<ServiceDescription> collected;
    std::set<Address> nodes;
  };

  Message make_request(std::string name, std::vector<std::string> args) {
    if (name.empty()) throw ProtocolError(Errc::invalid_argument, "service name is empty");
    std::vector<std::string> params;
    params.reserve(args.size() + 2);
    params.push_back(std::move(name));
    params.emplace_back("seek");
    for (auto& a : args) params.push_back(std::move(a));
    return new_message(Layer::service, Action::req, self_, self_, std::move(params));
  }

  void trace_request(const Message& req, std::string_view mode) {
    if (!ctx_.trace.enabled()) return;
    trace(EventKind::req, "corr=" + std::to_string(req.correlation_id) + " name=" + req.params[0] +
                              " mode=" + std::string(mode));
  }

  // --- registration -------------------------------------------------------

  RegistrationReport registration_round() {
    std::uint64_t id = 0;
    {
      std::lock_guard lock(svc_mu_);
      id = ++reg_counter_;
    }
    post(new_message(Layer::service, Action::reg, self_, self_, {"collect", std::to_string(id)}));
    std::unique_lock lock(svc_mu_);
    reg_cv_.wait_for(lock, ctx_.options.sweep_timeout,
                     [&] { return stopping_ || (reg_.id == id && reg_.done); });
    RegistrationReport report;
    report.round = id;
    report.complete = reg_.id == id && reg_.done;
    report.service_count = registry_.size();
    if (!report.complete && reg_.id == id) report.silent.assign(reg_.pending.begin(), reg_.pending.end());
    return report;
  }

  void on_reg(const Message& msg) {
    if (msg.params.size() < 2) return;
    const std::uint64_t id = std::stoull(msg.params[1]);
    std::vector<Message> out;
    if (msg.params[0] == "collect") {
      std::lock_guard lock(svc_mu_);
      if (id < reg_.id) return;
      if (id == reg_.id) {
        if (reg_.done && parent_address()) out.push_back(report_locked());
      } else {
        reg_ = RegRound{id, false, {}, {}, {self_}};
        for (const auto& [_, svc] : local_) reg_.collected.push_back(svc->desc);
        for (auto child : children()) {
          reg_.pending.insert(child);
          out.push_back(new_message(Layer::service, Action::reg, child, self_,
                                    {"collect", std::to_string(id)}));
        }
        trace(EventKind::reg, "round=" + std::to_string(id) +
                                  " children=" + std::to_string(reg_.pending.size()));
        if (reg_.pending.empty()) complete_round_locked(out);
      }
    } else if (msg.params[0] == "report" && msg.params.size() >= 3) {
      auto payload = nlohmann::json::parse(msg.params[2]);
      std::lock_guard lock(svc_mu_);
      if (id != reg_.id || reg_.done || reg_.pending.erase(msg.creator) == 0) return;
      std::vector<Address> learned;
      for (const auto& n : payload.at("nodes")) {
        Address a{n.get<std::uint64_t>()};
        reg_.nodes.insert(a);
        learned.push_back(a);
      }
      for (auto d : payload.at("services").get<std::vector<ServiceDescription>>()) {
        learned.insert(learned.end(), d.route.begin(), d.route.end());
        d.route.push_back(self_);
        reg_.collected.push_back(std::move(d));
      }
      learn_descendants(msg.creator, learned);
      if (reg_.pending.empty()) complete_round_locked(out);
    }
    for (auto& m : out) post(std::move(m));
  }

  Message report_locked() const {
    std::vector<std::uint64_t> nodes;
    for (auto a : reg_.nodes) nodes.push_back(a.id);
    nlohmann::json payload{{"nodes", nodes}, {"services", reg_.collected}};
    return new_message(Layer::service, Action::reg, *parent_address(), self_,
                       {"report", std::to_string(reg_.id), payload.dump()});
  }

  void complete_round_locked(std::vector<Message>& out) {
    reg_.done = true;
    registry_.replace(reg_.collected);
    trace(EventKind::reg, "round=" + std::to_string(reg_.id) + " done=1 services=" +
                              std::to_string(reg_.collected.size()));
    if (parent_address()) out.push_back(report_locked());
    reg_cv_.notify_all();
  }

  // --- requests -----------------------------------------------------------

  void on_req(Message msg) {
    if (msg.params.size() < 2) return send_failure(msg, "no-provider", "malformed request");
    const std::string name = msg.params[0];
    if (msg.params[1] == "serve") return enqueue_execution(std::move(msg));

    std::optional<ServiceDescription> pick;
    {
      std::lock_guard lock(svc_mu_);
      if (!registry_.match(name).empty()) pick = registry_.select(name);
    }
    if (pick) {
      msg.params[1] = "serve";
      if (pick->provider == self_) return enqueue_execution(std::move(msg));
      if (ctx_.trace.enabled()) {
        trace(EventKind::req, "corr=" + std::to_string(msg.correlation_id) + " name=" + name +
                                  " provider=" + to_string(pick->provider));
      }
      msg.intend = pick->provider;
      return post(std::move(msg));
    }
    if (auto parent = parent_address()) {
      msg.intend = *parent;
      return post(std::move(msg));
    }
    send_failure(msg, "no-provider", "no node provides '" + name + "'");
  }

  void enqueue_execution(Message msg) {
    {
      std::lock_guard lock(svc_mu_);
      if (!local_.contains(msg.params[0])) {
        return send_failure(msg, "no-provider", "'" + msg.params[0] + "' is not provided here");
      }
    }
    if (!service_list_.try_push(msg)) send_failure(msg, "no-provider", "provider is shutting down");
  }

  void send_failure(const Message& req, std::string_view code, std::string detail) {
    if (ctx_.trace.enabled()) {
      trace(EventKind::ack, "corr=" + std::to_string(req.correlation_id) +
                                " status=" + std::string(code) + " to=" + to_string(req.creator));
    }
    Message ack = new_message(Layer::service, Action::ack, req.creator, self_,
                              {"error", detail::join_route(req.route), std::string(code), std::move(detail)});
    ack.correlation_id = req.correlation_id;
    post(std::move(ack));
  }

  void on_ack(const Message& msg) {
    std::optional<Pending> p;
    {
      std::lock_guard lock(pending_mu_);
      ++stats_.acks_received;
      auto it = pending_.find(msg.correlation_id);
      if (it != pending_.end()) {
        p = std::move(it->second);
        pending_.erase(it);
        resolved_.insert(msg.correlation_id);
      } else if (timed_out_.contains(msg.correlation_id)) {
        ++stats_.late_acks;
      } else if (resolved_.contains(msg.correlation_id)) {
        ++stats_.duplicate_acks;
      } else if (async_ids_.contains(msg.correlation_id)) {
        ++stats_.async_failures;
      } else {
        ++stats_.unmatched_acks;
      }
    }
    if (ctx_.trace.enabled()) {
      std::string detail = "corr=" + std::to_string(msg.correlation_id) +
                           " status=" + (msg.params.empty() ? std::string("?") : msg.params[0]) +
                           " from=" + to_string(msg.creator);
      if (msg.params.size() > 1) detail += " route=" + msg.params[1];
      if (p) {
        auto us = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - p->submitted);
        detail += " latency_us=" + std::to_string(us.count());
      }
      trace(EventKind::ack, std::move(detail));
    }
    if (p) p->promise.set_value(msg);
  }

  static Reply failed_reply(ReplyStatus status, std::string detail, std::uint64_t corr) {
    Reply r;
    r.status = status;
    r.detail = std::move(detail);
    r.correlation_id = corr;
    return r;
  }

  static Reply to_reply(const Message& ack) {
    Reply r;
    r.correlation_id = ack.correlation_id;
    r.served_by = ack.creator;
    r.ack_hops = ack.route.size();
    const auto& p = ack.params;
    if (p.size() > 1) r.request_route = detail::split_route(p[1]);
    if (!p.empty() && p[0] == "ok") {
      r.status = ReplyStatus::ok;
      r.values.assign(p.begin() + std::min<std::size_t>(2, p.size()), p.end());
      return r;
    }
    const std::string code = p.size() > 2 ? p[2] : "service-error";
    r.detail = p.size() > 3 ? p[3] : "";
    if (code == "no-provider") {
      r.status = ReplyStatus::no_provider;
    } else if (code == "terminated") {
      r.status = ReplyStatus::terminated;
    } else {
      r.status = ReplyStatus::service_error;
    }
    return r;
  }

  // --- execution ----------------------------------------------------------

  void executor_loop() {
    while (auto msg = service_list_.pop()) dispatch(std::move(*msg));
  }

  void dispatch(Message msg) {
    std::shared_ptr<LocalService> svc;
    {
      std::lock_guard lock(svc_mu_);
      if (auto it = local_.find(msg.params[0]); it != local_.end()) svc = it->second;
    }
    if (!svc) return send_failure(msg, "no-provider", "'" + msg.params[0] + "' is not provided here");
    if (svc->desc.reentrant) {
      std::lock_guard lock(runners_mu_);
      std::erase_if(runners_, [](Runner& r) {
        if (!r.done->load()) return false;
        r.thread.join();
        return true;
      });
      auto done = std::make_shared<std::atomic<bool>>(false);
      runners_.push_back(Runner{std::thread([this, svc, done, m = std::move(msg)] {
                                  execute(*svc, m);
                                  done->store(true);
                                }),
                                done});
      return;
    }
    if (svc->worker) {
      if (!svc->worker->box.try_push(msg)) send_failure(msg, "no-provider", "worker has stopped");
      return;
    }
    execute(*svc, msg);
  }

  void execute(const LocalService& svc, const Message& req) {
    const auto start = Clock::now();
    const auto cpu0 = detail::thread_cpu_ns();
    std::vector<std::string> values;
    std::string error;
    bool ok = true;
    try {
      std::span<const std::string> args(req.params);
      ServiceCall call{*this, req, svc.desc.name, args.subspan(std::min<std::size_t>(2, args.size()))};
      values = svc.handler(call);
    } catch (const std::exception& e) {
      ok = false;
      error = e.what();
    }
    const auto cpu1 = detail::thread_cpu_ns();
    const auto end = Clock::now();
    ctx_.executions.record(ExecutionInterval{self_, svc.desc.name, req.correlation_id,
                                             ctx_.trace.since_epoch(start),
                                             ctx_.trace.since_epoch(end), cpu1 - cpu0, ok});
    {
      std::lock_guard lock(pending_mu_);
      ++stats_.executions;
    }
    if (req.need_echo) {
      std::vector<std::string> params;
      if (ok) {
        params.reserve(values.size() + 2);
        params = {"ok", detail::join_route(req.route)};
        for (auto& v : values) params.push_back(std::move(v));
      } else {
        params = {"error", detail::join_route(req.route), "service-error", error};
      }
      Message ack = new_message(Layer::service, Action::ack, req.creator, self_, std::move(params));
      ack.correlation_id = req.correlation_id;
      post(std::move(ack));
    } else if (!ok) {
      trace(EventKind::ack, "corr=" + std::to_string(req.correlation_id) +
                                " status=service-error async=1 what=" + error);
    }
  }

  /// Drains the service message list and joins every execution activity.
  void stop_execution() {
    std::lock_guard stop_lock(stop_mu_);
    service_list_.close();
    if (executor_.joinable()) executor_.join();
    std::vector<LocalService*> workers;
    {
      std::lock_guard lock(svc_mu_);
      for (auto& [_, svc] : local_) {
        if (svc->worker) workers.push_back(svc.get());
      }
    }
    for (auto* w : workers) {
      w->worker->box.close();
      if (w->worker->thread.joinable()) w->worker->thread.join();
    }
    std::list<Runner> runners;
    {
      std::lock_guard lock(runners_mu_);
      runners.swap(runners_);
    }
    for (auto& r : runners) {
      if (r.thread.joinable()) r.thread.join();
    }
  }

  mutable std::mutex svc_mu_;
  std::condition_variable reg_cv_;
  std::map<std::string, std::shared_ptr<LocalService>, std::less<>> local_;
  ServiceRegistry registry_;
  RegRound reg_;
  std::uint64_t reg_counter_ = 0;
  bool stopping_ = false;

  OrderedMailbox<Message, ArrivalBefore> service_list_;
  std::thread executor_;
  std::mutex runners_mu_;
  std::list<Runner> runners_;
  std::mutex stop_mu_;

  mutable std::mutex pending_mu_;
  bool halting_ = false;
  std::unordered_map<std::uint64_t, Pending> pending_;
  std::unordered_set<std::uint64_t> timed_out_;
  std::unordered_set<std::uint64_t> resolved_;
  std::unordered_set<std::uint64_t> async_ids_;
  ServiceStats stats_;
};

}  // namespace pprog
