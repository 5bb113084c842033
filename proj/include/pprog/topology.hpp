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

#include "pprog/fmi.hpp"
#include "pprog/runtime.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace pprog {

struct ServiceSpec {
  std::string name;
  std::uint64_t fmi = 1;
  ExecutionMode mode = ExecutionMode::function;
  bool reentrant = false;
};

/// One record of a topology config: `{id, role, parent, services:[{name, fmi}]}`.
struct NodeSpec {
  std::string id;
  NodeRole role = NodeRole::server;
  std::optional<std::string> parent;
  std::vector<ServiceSpec> services;
};

using TopologySpec = std::vector<NodeSpec>;

inline NodeRole parse_role_text(std::string text) {
  for (auto& c : text) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (auto r = parse_node_role(text)) return *r;
  throw ProtocolError(Errc::invalid_argument, "unknown role '" + text + "'");
}

inline TopologySpec parse_topology(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ProtocolError(Errc::invalid_argument, "topology must be a JSON list");
  TopologySpec spec;
  for (const auto& rec : doc) {
    NodeSpec n;
    n.id = rec.at("id").get<std::string>();
    n.role = parse_role_text(rec.at("role").get<std::string>());
    if (rec.contains("parent") && !rec.at("parent").is_null()) n.parent = rec.at("parent").get<std::string>();
    if (rec.contains("services")) {
      for (const auto& s : rec.at("services")) {
        ServiceSpec svc;
        svc.name = s.at("name").get<std::string>();
        svc.fmi = s.value("fmi", std::uint64_t{1});
        if (s.value("mode", std::string("FUNCTION")) == "WORKER") svc.mode = ExecutionMode::worker;
        svc.reentrant = s.value("reentrant", false);
        n.services.push_back(std::move(svc));
      }
    }
    spec.push_back(std::move(n));
  }
  return spec;
}

inline TopologySpec load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ProtocolError(Errc::invalid_argument, "cannot open config '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(Errc::invalid_argument, path + ": " + e.what());
  }
  try {
    return parse_topology(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(Errc::invalid_argument, path + ": " + e.what());
  }
}

inline nlohmann::json to_json(const TopologySpec& spec) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& n : spec) {
    nlohmann::json services = nlohmann::json::array();
    for (const auto& s : n.services) services.push_back({{"name", s.name}, {"fmi", s.fmi}});
    out.push_back({{"id", n.id},
                   {"role", std::string(to_string(n.role))},
                   {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
                   {"services", services}});
  }
  return out;
}

/// Orders nodes parent-first and checks the tree shape.
inline TopologySpec validated(const TopologySpec& spec) {
  std::map<std::string, const NodeSpec*> by_id;
  const NodeSpec* master = nullptr;
  for (const auto& n : spec) {
    if (!by_id.emplace(n.id, &n).second) {
      throw ProtocolError(Errc::invalid_argument, "duplicate node id '" + n.id + "'");
    }
    if (n.role == NodeRole::master) {
      if (master) throw ProtocolError(Errc::invalid_argument, "more than one master");
      if (n.parent) throw ProtocolError(Errc::invalid_argument, "the master has no parent");
      master = &n;
    } else if (!n.parent) {
      throw ProtocolError(Errc::invalid_argument, "node '" + n.id + "' needs a parent");
    }
    if (n.role == NodeRole::router && !n.services.empty()) {
      throw ProtocolError(Errc::router_has_no_services, "router '" + n.id + "' lists services");
    }
  }
  if (!master) throw ProtocolError(Errc::invalid_argument, "no master in topology");
  std::multimap<std::string, const NodeSpec*> kids;
  for (const auto& n : spec) {
    if (!n.parent) continue;
    if (!by_id.contains(*n.parent)) {
      throw ProtocolError(Errc::invalid_argument, "unknown parent '" + *n.parent + "'");
    }
    kids.emplace(*n.parent, &n);
  }
  TopologySpec ordered;
  std::deque<const NodeSpec*> todo{master};
  while (!todo.empty()) {
    const NodeSpec* n = todo.front();
    todo.pop_front();
    ordered.push_back(*n);
    auto [lo, hi] = kids.equal_range(n->id);
    for (auto it = lo; it != hi; ++it) todo.push_back(it->second);
  }
  if (ordered.size() != spec.size()) {
    throw ProtocolError(Errc::invalid_argument, "topology has nodes unreachable from the master");
  }
  return ordered;
}

/// Master, two routers, four leaf servers.
inline TopologySpec demo_tree() {
  return {
      {"master", NodeRole::master, std::nullopt, {}},
      {"left", NodeRole::router, "master", {}},
      {"right", NodeRole::router, "master", {}},
      {"s1", NodeRole::server, "left", {{"Service1", 1000}}},
      {"s2a", NodeRole::server, "left", {{"Service2", 2000}}},
      {"s2b", NodeRole::server, "right", {{"Service2", 2000}}},
      {"s3", NodeRole::server, "right", {{"Service3", 1000}}},
  };
}

/// Random recursive tree of 3..max_nodes nodes; each non-master node is a
/// server with probability 1/2 and then offers one or two of four services.
inline TopologySpec random_tree(std::uint64_t seed, std::size_t max_nodes = 30) {
  std::mt19937_64 rng(seed);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(3, std::max<std::size_t>(3, max_nodes))(rng);
  TopologySpec spec;
  spec.push_back({"n0", NodeRole::master, std::nullopt, {}});
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t parent = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    NodeSpec node{"n" + std::to_string(i), NodeRole::router, "n" + std::to_string(parent), {}};
    if (std::bernoulli_distribution(0.5)(rng)) {
      node.role = NodeRole::server;
      const int count = std::uniform_int_distribution<int>(1, 2)(rng);
      std::set<int> picked;
      for (int k = 0; k < count; ++k) picked.insert(std::uniform_int_distribution<int>(1, 4)(rng));
      for (int k : picked) node.services.push_back({"Service" + std::to_string(k), 1000u * static_cast<unsigned>(k)});
    }
    spec.push_back(std::move(node));
  }
  return spec;
}

/// A running network built from a spec, with the id <-> address mapping.
struct BuiltNetwork {
  std::unique_ptr<Runtime> runtime;
  std::map<std::string, Address> address_of;
  std::map<Address, std::string> id_of;
  TopologySpec spec;  // parent-first order
};

/// Every configured service burns its FMI count on the incoming value
/// (first argument, default 1.0) and returns the result.
inline ServiceHandler burn_handler(std::uint64_t fmi) {
  return [fmi](ServiceCall& call) -> std::vector<std::string> {
    const double in = call.args.empty() ? 1.0 : parse_value(call.args[0]);
    return {format_value(fmi_burn(fmi, in))};
  };
}

inline BuiltNetwork build_network(const TopologySpec& spec, RuntimeOptions options = {}) {
  BuiltNetwork net;
  net.spec = validated(spec);
  net.runtime = std::make_unique<Runtime>(options);
  for (const auto& n : net.spec) {
    std::optional<Address> parent;
    if (n.parent) parent = net.address_of.at(*n.parent);
    ServiceNode& node = net.runtime->spawn(n.role, parent);
    net.address_of[n.id] = node.address();
    net.id_of[node.address()] = n.id;
    for (const auto& s : n.services) {
      node.register_local(ServiceDescription{s.name, node.address(), {}, s.mode, s.reentrant},
                          burn_handler(s.fmi));
    }
  }
  return net;
}

inline std::string node_id(const BuiltNetwork& net, Address a) {
  auto it = net.id_of.find(a);
  return it == net.id_of.end() ? to_string(a) : it->second;
}

inline nlohmann::json topology_json(const BuiltNetwork& net) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& n : net.spec) {
    const auto& node = net.runtime->node(net.address_of.at(n.id));
    std::vector<std::uint64_t> kids;
    for (auto c : node.children()) kids.push_back(c.id);
    auto parent = node.parent_address();
    out.push_back({{"address", node.address().id},
                   {"id", n.id},
                   {"role", std::string(to_string(node.role()))},
                   {"state", std::string(to_string(node.state()))},
                   {"parent", parent ? nlohmann::json(parent->id) : nlohmann::json(nullptr)},
                   {"children", kids}});
  }
  return out;
}

/// Indented tree, one node per line.
inline std::string topology_text(const BuiltNetwork& net) {
  std::ostringstream os;
  auto& rt = *net.runtime;
  std::function<void(Address, int)> walk = [&](Address a, int depth) {
    const auto& node = rt.node(a);
    os << std::string(static_cast<std::size_t>(depth) * 2, ' ') << node_id(net, a) << " [" << a
       << "] " << to_string(node.role()) << ' ' << to_string(node.state()) << '\n';
    for (auto c : node.children()) walk(c, depth + 1);
  };
  walk(rt.master().address(), 0);
  return os.str();
}

inline nlohmann::json registry_json(const BuiltNetwork& net) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& n : net.spec) {
    auto& node = net.runtime->service(net.address_of.at(n.id));
    out.push_back({{"address", node.address().id}, {"id", n.id}, {"registry", node.registry().all()}});
  }
  return out;
}

inline std::string registry_text(const BuiltNetwork& net) {
  std::ostringstream os;
  for (const auto& n : net.spec) {
    auto& node = net.runtime->service(net.address_of.at(n.id));
    auto entries = node.registry().all();
    os << n.id << " [" << node.address() << "] " << entries.size() << " service(s)\n";
    for (const auto& d : entries) {
      os << "  " << d.name << " provider=" << node_id(net, d.provider) << " route=";
      for (std::size_t i = 0; i < d.route.size(); ++i) os << (i ? ">" : "") << node_id(net, d.route[i]);
      os << " mode=" << to_string(d.mode) << " reentrant=" << (d.reentrant ? "yes" : "no") << '\n';
    }
  }
  return os.str();
}

}  // namespace pprog
