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

// Builds a small tree by hand, registers two services and calls them.

#include "pprog/pprog.hpp"

#include <iostream>

using namespace pprog;

int main() {
  Runtime rt(RuntimeOptions::with_timeout(milliseconds{2000}, false));
  auto& master = rt.spawn(NodeRole::master);
  auto& hub = rt.spawn(NodeRole::router, master.address());
  auto& a = rt.spawn(NodeRole::server, hub.address());
  auto& b = rt.spawn(NodeRole::server, hub.address());

  a.register_local("square", ExecutionMode::function, false, [](ServiceCall& call) {
    const double x = parse_value(call.args.empty() ? "0" : call.args[0]);
    return std::vector<std::string>{format_value(x * x)};
  });
  b.register_local("burn", ExecutionMode::worker, false, [](ServiceCall& call) {
    const double x = parse_value(call.args.empty() ? "1" : call.args[0]);
    return std::vector<std::string>{format_value(fmi_burn(100000, x))};
  });

  auto connected = rt.start_connect();
  std::cout << "connected: " << connected.node_count << " nodes\n";
  auto reg = rt.run_registration();
  std::cout << "registered: " << reg.service_count << " services\n";

  for (const char* x : {"3", "1.5"}) {
    Reply r = master.request_sync("square", {x});
    std::cout << "square(" << x << ") = " << (r.ok() ? r.values.at(0) : r.detail) << " via "
              << r.served_by << '\n';
  }
  // b asks for a service that sits next to it; the request never reaches the master
  Reply r = b.request_sync("square", {"4"});
  std::cout << "from b: " << r.values.at(0) << " route " << detail::join_route(r.request_route) << '\n';

  Reply burned = master.request_sync("burn", {"1"});
  std::cout << "burn(1) = " << burned.values.at(0) << '\n';

  Reply missing = master.request_sync("nothing", {});
  std::cout << "nothing: " << (missing.ok() ? "?" : missing.detail) << '\n';

  auto down = rt.shutdown();
  std::cout << "shutdown " << (down.complete ? "complete" : "forced") << '\n';
}
