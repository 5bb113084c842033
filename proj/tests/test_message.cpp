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

#include "pprog/message.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <thread>

using namespace pprog;

TEST(Message, DefaultsFromConstructor) {
  Message m = new_message(Layer::transmission, Action::hello, Address{2}, Address{1}, {"7"});
  EXPECT_EQ(m.time_to_live, kDefaultTimeToLive);
  EXPECT_EQ(m.time_to_live, 64u);
  EXPECT_TRUE(m.route.empty());
  EXPECT_FALSE(m.need_echo);
  EXPECT_NE(m.correlation_id, 0u);
  EXPECT_TRUE(m.valid());
  EXPECT_EQ(m.params, std::vector<std::string>{"7"});
}

TEST(Message, LayerActionPairsAreChecked) {
  EXPECT_NO_THROW(new_message(Layer::service, Action::req, Address{2}, Address{1}));
  EXPECT_NO_THROW(new_message(Layer::service, Action::ack, Address{2}, Address{1}));
  EXPECT_NO_THROW(new_message(Layer::service, Action::reg, Address{2}, Address{1}));
  for (auto a : {Action::config, Action::config_ack, Action::hello, Action::echo, Action::tick, Action::exit}) {
    EXPECT_NO_THROW(new_message(Layer::transmission, a, Address{2}, Address{1}));
    try {
      new_message(Layer::service, a, Address{2}, Address{1});
      ADD_FAILURE() << "service layer accepted " << to_string(a);
    } catch (const ProtocolError& e) {
      EXPECT_EQ(e.code(), Errc::layer_mismatch);
    }
  }
  for (auto a : {Action::reg, Action::req, Action::ack}) {
    EXPECT_THROW(new_message(Layer::transmission, a, Address{2}, Address{1}), ProtocolError);
    EXPECT_THROW(new_message(Layer::domain, a, Address{2}, Address{1}), ProtocolError);
  }
}

TEST(Message, HopAppendsAndDecrements) {
  Message m = new_message(Layer::transmission, Action::tick, Address{9}, Address{1});
  for (std::uint64_t i = 1; i <= 10; ++i) {
    m = hop(std::move(m), Address{i});
    EXPECT_EQ(m.route.size(), i);
    EXPECT_EQ(m.route.back(), Address{i});
    EXPECT_EQ(m.time_to_live, kDefaultTimeToLive - i);
  }
}

TEST(Message, HopAtZeroTtlExpires) {
  Message m = new_message(Layer::transmission, Action::tick, Address{9}, Address{1});
  m.time_to_live = 1;
  m = hop(std::move(m), Address{3});
  EXPECT_EQ(m.time_to_live, 0u);
  try {
    hop(m, Address{4});
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), Errc::expired);
  }
}

TEST(Message, SixtyFourHopsThenExpired) {
  Message m = new_message(Layer::transmission, Action::tick, Address{9}, Address{1});
  std::size_t hops = 0;
  try {
    for (;;) {
      m = hop(std::move(m), Address{2});
      ++hops;
    }
  } catch (const ProtocolError&) {
  }
  EXPECT_EQ(hops, 64u);
}

TEST(Message, ArrivalOrderMatchesStableSortOracle) {
  std::mt19937_64 rng(11);
  const auto base = Clock::now();
  std::vector<Message> msgs;
  for (int i = 0; i < 500; ++i) {
    Message m = new_message(Layer::transmission, Action::echo, Address{1}, Address{1 + rng() % 5});
    m.create_time = base + std::chrono::nanoseconds(rng() % 20);
    m.correlation_id = rng() % 50;
    msgs.push_back(m);
  }
  auto oracle = msgs;
  // brute force: lexicographic key
  std::stable_sort(oracle.begin(), oracle.end(), [](const Message& a, const Message& b) {
    return std::tuple(a.create_time, a.creator.id, a.correlation_id) <
           std::tuple(b.create_time, b.creator.id, b.correlation_id);
  });
  auto sorted = msgs;
  std::stable_sort(sorted.begin(), sorted.end(), ArrivalBefore{});
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    EXPECT_EQ(sorted[i].create_time, oracle[i].create_time);
    EXPECT_EQ(sorted[i].creator, oracle[i].creator);
    EXPECT_EQ(sorted[i].correlation_id, oracle[i].correlation_id);
  }
  // the relation is a strict weak order
  for (int i = 0; i < 2000; ++i) {
    const auto& a = msgs[rng() % msgs.size()];
    const auto& b = msgs[rng() % msgs.size()];
    EXPECT_FALSE(ArrivalBefore{}(a, b) && ArrivalBefore{}(b, a));
    EXPECT_EQ(arrival_order(a, b) == 0, arrival_order(b, a) == 0);
  }
}

TEST(Message, CorrelationIdsUniqueAcrossThreads) {
  constexpr int kThreads = 8, kEach = 1250;
  std::vector<std::vector<std::uint64_t>> ids(kThreads);
  std::vector<std::thread> ts;
  for (int t = 0; t < kThreads; ++t) {
    ts.emplace_back([&ids, t] {
      for (int i = 0; i < kEach; ++i) {
        ids[t].push_back(new_message(Layer::service, Action::req, Address{1}, Address{1}).correlation_id);
      }
    });
  }
  for (auto& t : ts) t.join();
  std::set<std::uint64_t> all;
  for (auto& v : ids) all.insert(v.begin(), v.end());
  EXPECT_EQ(all.size(), static_cast<std::size_t>(kThreads * kEach));
}

TEST(Message, AddressParsing) {
  EXPECT_EQ(parse_address("17"), Address{17});
  EXPECT_FALSE(parse_address("0"));
  EXPECT_FALSE(parse_address("x1"));
  EXPECT_FALSE(parse_address(""));
  EXPECT_FALSE(Address{}.valid());
}

TEST(Message, ToStringListsFields) {
  Message m = new_message(Layer::service, Action::req, Address{3}, Address{1}, {"a", "b"});
  m = hop(std::move(m), Address{1});
  const auto s = to_string(m);
  EXPECT_NE(s.find("action=REQ"), std::string::npos);
  EXPECT_NE(s.find("route=[1]"), std::string::npos);
  EXPECT_NE(s.find("params=[a,b]"), std::string::npos);
}
