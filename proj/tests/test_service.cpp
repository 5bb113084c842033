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

#include "pprog/fmi.hpp"
#include "pprog/runtime.hpp"
#include "tree_fixture.hpp"

#include <gtest/gtest.h>

using namespace pprog;
using namespace pprog::testing;

namespace {

ServiceHandler echo_handler(std::string tag) {
  return [tag](ServiceCall&) { return std::vector<std::string>{tag}; };
}

ServiceHandler sleeper(int ms) {
  return [ms](ServiceCall&) {
    std::this_thread::sleep_for(milliseconds{ms});
    return std::vector<std::string>{"slept"};
  };
}

std::size_t overlapping_pairs(const std::vector<ExecutionInterval>& ivs) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < ivs.size(); ++i) {
    for (std::size_t j = i + 1; j < ivs.size(); ++j) {
      if (ivs[i].start_ns < ivs[j].end_ns && ivs[j].start_ns < ivs[i].end_ns) ++n;
    }
  }
  return n;
}

void wait_for(const std::function<bool()>& done, int ms = 5000) {
  const auto until = Clock::now() + milliseconds{ms};
  while (!done() && Clock::now() < until) std::this_thread::sleep_for(milliseconds{2});
}

}  // namespace

TEST(Registry, RoundRobinInProviderOrder) {
  ServiceRegistry reg;
  reg.upsert({"S", Address{9}, {Address{9}}, ExecutionMode::function, false});
  reg.upsert({"S", Address{4}, {Address{4}}, ExecutionMode::function, false});
  std::vector<Address> picks;
  for (int i = 0; i < 4; ++i) picks.push_back(reg.select("S").provider);
  EXPECT_EQ(picks, (std::vector<Address>{Address{4}, Address{9}, Address{4}, Address{9}}));
}

TEST(Registry, RoundRobinBalancedOverThree) {
  ServiceRegistry reg;
  for (std::uint64_t p : {5, 2, 7}) reg.upsert({"S", Address{p}, {Address{p}}, ExecutionMode::function, false});
  std::map<Address, int> count;
  for (int i = 0; i < 1000; ++i) ++count[reg.select("S").provider];
  ASSERT_EQ(count.size(), 3u);
  for (auto& [_, c] : count) {
    EXPECT_GE(c, 333);
    EXPECT_LE(c, 334);
  }
}

TEST(Registry, MatchIsExactAndCaseSensitive) {
  ServiceRegistry reg;
  reg.upsert({"Service1", Address{2}, {}, ExecutionMode::function, false});
  EXPECT_EQ(match_service(reg, "Service1").size(), 1u);
  EXPECT_TRUE(match_service(reg, "service1").empty());
  EXPECT_TRUE(match_service(reg, "Service").empty());
  try {
    select_provider(reg, "service1");
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), Errc::no_provider);
  }
}

TEST(Registry, UpsertReplacesSameKey) {
  ServiceRegistry reg;
  reg.upsert({"S", Address{2}, {Address{2}}, ExecutionMode::function, false});
  reg.upsert({"S", Address{2}, {Address{2}, Address{1}}, ExecutionMode::worker, false});
  ASSERT_EQ(reg.size(), 1u);
  EXPECT_EQ(reg.all()[0].mode, ExecutionMode::worker);
}

TEST(Registry, PruneKeepsCursorInRange) {
  ServiceRegistry reg;
  for (std::uint64_t p : {1, 2, 3}) reg.upsert({"S", Address{p}, {}, ExecutionMode::function, false});
  reg.select("S");
  reg.select("S");
  EXPECT_EQ(reg.prune({Address{2}, Address{3}}), 2u);
  EXPECT_LT(reg.cursor("S"), 1u);
  EXPECT_EQ(reg.select("S").provider, Address{1});
}

TEST(Registry, DescriptionJsonRoundTrip) {
  ServiceDescription d{"S", Address{4}, {Address{4}, Address{2}, Address{1}}, ExecutionMode::worker, true};
  nlohmann::json j = d;
  EXPECT_EQ(j.get<ServiceDescription>(), d);
}

TEST(Register, Errors) {
  Runtime rt(quick());
  auto& m = rt.spawn(NodeRole::master);
  auto& r = rt.spawn(NodeRole::router, m.address());
  auto& s = rt.spawn(NodeRole::server, m.address());
  try {
    r.register_local("S", ExecutionMode::function, false, echo_handler("x"));
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), Errc::router_has_no_services);
  }
  try {
    s.register_local("", ExecutionMode::function, false, echo_handler("x"));
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), Errc::invalid_service);
  }
  s.register_local("S", ExecutionMode::function, false, echo_handler("x"));
  try {
    s.register_local("S", ExecutionMode::worker, false, echo_handler("y"));
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), Errc::duplicate_service);
  }
  EXPECT_EQ(s.local_services().size(), 1u);
  EXPECT_EQ(s.registry().size(), 1u);
}

TEST(Registration, EveryNodeKnowsItsSubtreeWithAncestorRoutes) {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 12; ++trial) {
    auto shape = random_shape(rng, 3 + rng() % 60, trial % 3 == 0);
    std::vector<NodeRole> roles(shape.size(), NodeRole::server);
    for (std::size_t i = 1; i < shape.size(); ++i) {
      if (rng() % 3 == 0) roles[i] = NodeRole::router;
    }
    auto t = build_tree(shape, quick(), [&](std::size_t i) { return roles[i]; });
    // ground truth: name -> providers
    std::multimap<std::size_t, std::string> offered;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (roles[i] == NodeRole::router) continue;
      for (int k = 1; k <= 4; ++k) {
        if (rng() % 3 == 0) {
          std::string name = "S" + std::to_string(k);
          t.nodes[i]->register_local(name, ExecutionMode::function, false, echo_handler(name));
          offered.emplace(i, name);
        }
      }
    }
    ASSERT_TRUE(t.rt->start_connect().complete);
    auto rep = t.rt->run_registration();
    ASSERT_TRUE(rep.complete);
    EXPECT_EQ(rep.service_count, offered.size());
    for (std::size_t x = 0; x < shape.size(); ++x) {
      std::set<std::pair<std::string, std::vector<Address>>> expected, got;
      for (auto& [p, name] : offered) {
        if (!shape.in_subtree(p, x)) continue;
        std::vector<Address> route;
        for (auto a : shape.path_to_root(p)) {
          route.push_back(t.addr(a));
          if (a == x) break;
        }
        expected.emplace(name, route);
      }
      for (auto& d : t.nodes[x]->registry().all()) {
        EXPECT_EQ(d.route.front(), d.provider);
        got.emplace(d.name, d.route);
      }
      EXPECT_EQ(got, expected) << "trial " << trial << " node " << x;
    }
  }
}

TEST(Registration, RouterOnlyTreeHasEmptyRegistry) {
  auto t = build_tree(seven_shape(), quick(), [](std::size_t) { return NodeRole::router; });
  ASSERT_TRUE(t.rt->start_connect().complete);
  auto rep = t.rt->run_registration();
  EXPECT_TRUE(rep.complete);
  EXPECT_EQ(rep.service_count, 0u);
}

class SevenTree : public ::testing::Test {
 protected:
  void SetUp() override {
    t = build_tree(seven_shape(), quick(), [](std::size_t i) { return i <= 2 ? NodeRole::router : NodeRole::server; });
    // leaves 3,4 under router 1; leaves 5,6 under router 2
    t.nodes[3]->register_local("Service1", ExecutionMode::function, false, [](ServiceCall& c) {
      return std::vector<std::string>{format_value(fmi_burn(1000, parse_value(c.args[0])))};
    });
    t.nodes[4]->register_local("Service2", ExecutionMode::function, false, echo_handler("p4"));
    t.nodes[5]->register_local("Service2", ExecutionMode::function, false, echo_handler("p5"));
    t.nodes[6]->register_local("Service3", ExecutionMode::worker, false,
                               [](ServiceCall& c) { return std::vector<std::string>{c.args.begin(), c.args.end()}; });
    t.nodes[6]->register_local("Broken", ExecutionMode::function, false,
                               [](ServiceCall&) -> std::vector<std::string> { throw std::runtime_error("boom"); });
    ASSERT_TRUE(t.rt->start_connect().complete);
    ASSERT_TRUE(t.rt->run_registration().complete);
  }
  LiveTree t;
};

TEST_F(SevenTree, HundredSyncRequestsAllAcked) {
  auto& m = *t.nodes[0];
  for (int i = 0; i < 100; ++i) {
    const double in = 1.0 + i;
    Reply r = m.request_sync("Service1", {format_value(in)});
    ASSERT_TRUE(r.ok()) << r.detail;
    ASSERT_EQ(r.values.size(), 1u);
    EXPECT_EQ(parse_value(r.values[0]), fmi_burn(1000, in));
    EXPECT_EQ(r.served_by, t.addr(3));
    EXPECT_EQ(r.request_route, (std::vector<Address>{t.addr(0), t.addr(1)}));
  }
  auto st = m.stats();
  EXPECT_EQ(st.acks_received, 100u);
  EXPECT_EQ(st.duplicate_acks, 0u);
}

TEST_F(SevenTree, RoundRobinAtMaster) {
  std::vector<std::string> who;
  for (int i = 0; i < 4; ++i) who.push_back(t.nodes[0]->request_sync("Service2", {}).values.at(0));
  EXPECT_EQ(who, (std::vector<std::string>{"p4", "p5", "p4", "p5"}));
}

TEST_F(SevenTree, NoProvider) {
  Reply r = t.nodes[3]->request_sync("Nothing", {});
  EXPECT_EQ(r.status, ReplyStatus::no_provider);
  Reply lower = t.nodes[0]->request_sync("service1", {"1"});
  EXPECT_EQ(lower.status, ReplyStatus::no_provider);
}

TEST_F(SevenTree, NearbyProviderNeverTouchesMaster) {
  // 3 asks for Service2: router 1 knows provider 4 and serves it locally
  const auto before = t.rt->trace().size();
  for (int i = 0; i < 5; ++i) {
    Reply r = t.nodes[3]->request_sync("Service2", {});
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.values[0], "p4");
    EXPECT_EQ(r.request_route, (std::vector<Address>{t.addr(3), t.addr(1)}));
  }
  auto evs = t.rt->trace().snapshot();
  for (std::size_t i = before; i < evs.size(); ++i) {
    EXPECT_NE(evs[i].node, t.addr(0)) << to_line(evs[i]);
  }
}

TEST_F(SevenTree, CrossSubtreeGoesThroughMaster) {
  Reply r = t.nodes[3]->request_sync("Service3", {"a", "b"});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.values, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.request_route, (std::vector<Address>{t.addr(3), t.addr(1), t.addr(0), t.addr(2)}));
}

TEST_F(SevenTree, HandlerErrorComesBack) {
  Reply r = t.nodes[0]->request_sync("Broken", {});
  EXPECT_EQ(r.status, ReplyStatus::service_error);
  EXPECT_NE(r.detail.find("boom"), std::string::npos);
  // the provider keeps serving
  EXPECT_TRUE(t.nodes[0]->request_sync("Service3", {"x"}).ok());
}

TEST_F(SevenTree, AsyncRequestsExecute) {
  std::vector<RequestHandle> hs;
  for (int i = 0; i < 20; ++i) hs.push_back(t.nodes[0]->request_async("Service3", {std::to_string(i)}));
  std::set<std::uint64_t> ids;
  for (auto& h : hs) ids.insert(h.correlation_id);
  EXPECT_EQ(ids.size(), 20u);
  wait_for([&] { return t.rt->executions().for_service("Service3").size() >= 20; });
  EXPECT_EQ(t.rt->executions().for_service("Service3").size(), 20u);
  // success needs no reply; nothing failed
  EXPECT_EQ(t.nodes[0]->stats().async_failures, 0u);
  EXPECT_EQ(t.nodes[0]->stats().acks_received, 0u);
}

TEST_F(SevenTree, AsyncToNowhereCountsFailure) {
  t.nodes[3]->request_async("Nothing", {});
  wait_for([&] { return t.nodes[3]->stats().async_failures >= 1; });
  EXPECT_EQ(t.nodes[3]->stats().async_failures, 1u);
}

TEST_F(SevenTree, DetachPrunesAndAttachRegisters) {
  auto removed = t.rt->detach(t.addr(2), t.addr(5));
  EXPECT_EQ(removed, std::vector<Address>{t.addr(5)});
  // the master still lists 5 until the next round; such requests fail cleanly
  for (int i = 0; i < 4; ++i) {
    Reply r = t.nodes[0]->request_sync("Service2", {});
    if (r.ok()) {
      EXPECT_EQ(r.values[0], "p4");
    } else {
      EXPECT_EQ(r.status, ReplyStatus::no_provider) << r.detail;
    }
  }
  ASSERT_TRUE(t.rt->run_registration().complete);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t.nodes[0]->request_sync("Service2", {}).values.at(0), "p4");
  auto& fresh = t.rt->spawn(NodeRole::server, t.addr(2));
  fresh.register_local("Service2", ExecutionMode::function, false, echo_handler("fresh"));
  ASSERT_TRUE(t.rt->start_connect().complete);
  auto rep = t.rt->run_registration();
  ASSERT_TRUE(rep.complete);
  EXPECT_EQ(rep.service_count, 5u);
  std::set<std::string> who;
  for (int i = 0; i < 4; ++i) who.insert(t.nodes[0]->request_sync("Service2", {}).values.at(0));
  EXPECT_EQ(who, (std::set<std::string>{"p4", "fresh"}));
}

TEST_F(SevenTree, TimeoutThenLateAckIsCounted) {
  t.nodes[6]->suspend_actor();
  Reply r = t.nodes[0]->request_sync("Service3", {"x"}, milliseconds{100});
  EXPECT_EQ(r.status, ReplyStatus::timeout);
  t.nodes[6]->resume_actor();
  wait_for([&] { return t.nodes[0]->stats().late_acks >= 1; });
  EXPECT_EQ(t.nodes[0]->stats().late_acks, 1u);
  EXPECT_EQ(t.nodes[0]->stats().duplicate_acks, 0u);
}

TEST(Execution, NonReentrantNeverOverlaps) {
  for (auto mode : {ExecutionMode::function, ExecutionMode::worker}) {
    Runtime rt(quick());
    auto& m = rt.spawn(NodeRole::master);
    auto& p = rt.spawn(NodeRole::server, m.address());
    p.register_local("Slow", mode, false, sleeper(15));
    ASSERT_TRUE(rt.start_connect().complete);
    ASSERT_TRUE(rt.run_registration().complete);
    for (int i = 0; i < 8; ++i) m.request_async("Slow", {});
    wait_for([&] { return rt.executions().for_service("Slow").size() >= 8; });
    auto ivs = rt.executions().for_service("Slow");
    ASSERT_EQ(ivs.size(), 8u);
    EXPECT_EQ(overlapping_pairs(ivs), 0u);
  }
}

TEST(Execution, ReentrantOverlaps) {
  Runtime rt(quick());
  auto& m = rt.spawn(NodeRole::master);
  auto& p = rt.spawn(NodeRole::server, m.address());
  p.register_local("Slow", ExecutionMode::function, true, sleeper(40));
  ASSERT_TRUE(rt.start_connect().complete);
  ASSERT_TRUE(rt.run_registration().complete);
  for (int i = 0; i < 8; ++i) m.request_async("Slow", {});
  wait_for([&] { return rt.executions().for_service("Slow").size() >= 8; });
  auto ivs = rt.executions().for_service("Slow");
  ASSERT_EQ(ivs.size(), 8u);
  EXPECT_GT(overlapping_pairs(ivs), 0u);
}

TEST(Execution, OwnServiceServedLocally) {
  Runtime rt(quick());
  auto& m = rt.spawn(NodeRole::master);
  m.register_local("Here", ExecutionMode::function, false, echo_handler("here"));
  ASSERT_TRUE(rt.start_connect().complete);
  Reply r = m.request_sync("Here", {});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.served_by, m.address());
  EXPECT_TRUE(r.request_route.empty());
}

TEST(Execution, RequestTotalityOnRandomTrees) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 4; ++trial) {
    auto shape = random_shape(rng, 10 + rng() % 40);
    auto t = build_tree(shape, quick(5000, false));
    std::set<std::string> names;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (rng() % 2) {
        std::string n = "S" + std::to_string(rng() % 6);
        if (!names.count(n) || rng() % 2) {
          try {
            t.nodes[i]->register_local(n, ExecutionMode::function, false, echo_handler(n));
            names.insert(n);
          } catch (const ProtocolError&) {
          }
        }
      }
    }
    ASSERT_TRUE(t.rt->start_connect().complete);
    ASSERT_TRUE(t.rt->run_registration().complete);
    for (int k = 0; k < 500; ++k) {
      auto& from = *t.nodes[rng() % shape.size()];
      std::string n = "S" + std::to_string(rng() % 8);
      Reply r = from.request_sync(n, {});
      if (names.contains(n)) {
        ASSERT_TRUE(r.ok()) << n << ": " << r.detail;
        EXPECT_EQ(r.values.at(0), n);
      } else {
        EXPECT_EQ(r.status, ReplyStatus::no_provider) << n;
      }
    }
    for (auto* n : t.nodes) {
      EXPECT_EQ(n->stats().duplicate_acks, 0u);
      EXPECT_EQ(n->stats().unmatched_acks, 0u);
      EXPECT_EQ(n->stats().late_acks, 0u);
    }
  }
}

TEST(Execution, HaltFailsPendingRequests) {
  Runtime rt(quick());
  auto& m = rt.spawn(NodeRole::master);
  auto& p = rt.spawn(NodeRole::server, m.address());
  p.register_local("Slow", ExecutionMode::function, false, sleeper(10));
  ASSERT_TRUE(rt.start_connect().complete);
  ASSERT_TRUE(rt.run_registration().complete);
  p.suspend_actor();
  std::thread halter([&] {
    std::this_thread::sleep_for(milliseconds{50});
    m.halt();
  });
  Reply r = m.request_sync("Slow", {});
  halter.join();
  EXPECT_EQ(r.status, ReplyStatus::terminated);
  EXPECT_EQ(m.request_sync("Slow", {}).status, ReplyStatus::terminated);
}
