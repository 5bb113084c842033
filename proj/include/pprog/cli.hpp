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

#include "pprog/benchmark.hpp"
#include "pprog/topology.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <variant>

namespace pprog::cli {

enum class Command : std::uint8_t { bench, topo, registry, tick, demo };
enum class Format : std::uint8_t { text, csv, json };

struct RunSpec {
  Command command = Command::bench;
  std::vector<PipelineModel> models{kAllModels.begin(), kAllModels.end()};
  BenchmarkConfig bench;
  std::optional<std::string> out;
  Format format = Format::text;
  std::uint64_t seed = 0;  // 0: demo tree, otherwise random_tree(seed)
  std::optional<std::string> config;
  milliseconds timeout{5000};
};

inline std::vector<PipelineModel> parse_models(const std::string& text) {
  if (text == "all") return {kAllModels.begin(), kAllModels.end()};
  std::vector<PipelineModel> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto m = parse_model(item);
    if (!m) throw ProtocolError(Errc::invalid_argument, "unknown model '" + item + "'");
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  if (out.empty()) throw ProtocolError(Errc::invalid_argument, "empty model list");
  return out;
}

/// "a,b,c" sets the three counts; a single "f" means f,2f,f.
inline FmiTriple parse_fmi(const std::vector<std::uint64_t>& v) {
  if (v.size() == 1) return FmiTriple{v[0], 2 * v[0], v[0]};
  if (v.size() == 3) return FmiTriple{v[0], v[1], v[2]};
  throw ProtocolError(Errc::invalid_argument, "--fmi takes one or three counts");
}

/// Parses argv into a RunSpec. Returns an exit code instead when parsing
/// stops early (help or a usage error), with the message already printed.
inline std::variant<RunSpec, int> parse_args(int argc, const char* const* argv,
                                             std::ostream& out = std::cout,
                                             std::ostream& err = std::cerr) {
  CLI::App app{"tree-network protocol runtime and pipeline benchmark"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  RunSpec spec;
  std::string models = "all";
  std::vector<std::uint64_t> fmi;
  std::string format;
  std::int64_t timeout_ms = 5000;
  std::size_t items = spec.bench.items;
  std::size_t repeats = spec.bench.repeats;
  std::string out_path, config_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", spec.seed, "seed for the random tree (0 = demo tree)");
    sub->add_option("--config", config_path, "topology config (JSON list of node records)")
        ->check(CLI::ExistingFile);
    sub->add_option("--timeout-ms", timeout_ms, "protocol timeouts in ms")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_path, "write output here instead of stdout");
  };

  auto* bench = app.add_subcommand("bench", "run the pipeline benchmark");
  bench->add_option("--model", models, "all or a comma list of monotone,sequence,pipeline,super_pipeline");
  bench->add_option("--fmi", fmi, "multiplications for Service1,Service2,Service3")->delimiter(',');
  bench->add_option("--items", items, "items per run")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "runs per model")->check(CLI::PositiveNumber);
  bench->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  add_common(bench);

  std::vector<std::pair<CLI::App*, Command>> dumps;
  for (auto [name, cmd, help] : {std::tuple{"topo", Command::topo, "print the connected tree"},
                                 std::tuple{"registry", Command::registry, "print every node's registry"},
                                 std::tuple{"tick", Command::tick, "health-check every node"}}) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));
    add_common(sub);
    dumps.emplace_back(sub, cmd);
  }
  auto* demo = app.add_subcommand("demo", "one item through each model on the evaluation network");
  demo->add_option("--fmi", fmi, "multiplications for Service1,Service2,Service3")->delimiter(',');
  demo->add_option("--timeout-ms", timeout_ms, "protocol timeouts in ms")->check(CLI::PositiveNumber);
  demo->add_option("--out", out_path, "write output here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (bench->parsed()) {
      spec.command = Command::bench;
      spec.format = format == "json" ? Format::json : Format::csv;
    } else if (demo->parsed()) {
      spec.command = Command::demo;
    } else {
      for (auto [sub, cmd] : dumps) {
        if (sub->parsed()) spec.command = cmd;
      }
      spec.format = format == "json" ? Format::json : Format::text;
    }
    spec.models = parse_models(models);
    if (!fmi.empty()) spec.bench.fmi = parse_fmi(fmi);
    spec.bench.items = items;
    spec.bench.repeats = repeats;
    spec.timeout = milliseconds{timeout_ms};
    spec.bench.runtime = RuntimeOptions::with_timeout(spec.timeout, false);
    spec.bench.validate();
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  if (!out_path.empty()) spec.out = out_path;
  if (!config_path.empty()) spec.config = config_path;
  return spec;
}

inline TopologySpec topology_for(const RunSpec& spec) {
  if (spec.config) return load_topology(*spec.config);
  if (spec.seed == 0) return demo_tree();
  return random_tree(spec.seed);
}

/// Builds, connects and registers the network; throws if any step is partial.
inline BuiltNetwork bring_up(const RunSpec& spec) {
  BuiltNetwork net = build_network(topology_for(spec), RuntimeOptions::with_timeout(spec.timeout, false));
  auto connected = net.runtime->start_connect();
  if (!connected.complete) {
    std::string who;
    for (auto a : connected.unresponsive) who += " " + node_id(net, a);
    throw ProtocolError(Errc::timeout, "connect sweep incomplete, silent:" + who);
  }
  auto reg = net.runtime->run_registration();
  if (!reg.complete) throw ProtocolError(Errc::registration_incomplete, "registration round incomplete");
  return net;
}

inline int run_bench(const RunSpec& spec, std::ostream& out) {
  BenchmarkResult r = run_benchmark(spec.bench, spec.models);
  if (spec.format == Format::json) {
    out << to_json(r).dump(2) << '\n';
  } else {
    out << to_csv(r);
  }
  return 0;
}

inline int run_tick(const RunSpec& spec, std::ostream& out) {
  BuiltNetwork net = bring_up(spec);
  auto& master = net.runtime->master();
  nlohmann::json rows = nlohmann::json::array();
  int failed = 0;
  for (const auto& n : net.spec) {
    const Address a = net.address_of.at(n.id);
    try {
      TickReport t = master.tick(a);
      if (spec.format == Format::json) {
        rows.push_back({{"id", n.id}, {"address", a.id}, {"status", "OK"},
                        {"state", std::string(to_string(t.state))}, {"hops", t.round_trip_hops()}});
      } else {
        out << "OK " << n.id << " [" << a << "] state=" << to_string(t.state)
            << " inbound=" << t.inbound_length << " delivered=" << t.delivered_length
            << " hops=" << t.round_trip_hops() << '\n';
      }
    } catch (const ProtocolError& e) {
      ++failed;
      if (spec.format == Format::json) {
        rows.push_back({{"id", n.id}, {"address", a.id}, {"status", "UNREACHABLE"}, {"reason", e.what()}});
      } else {
        out << "UNREACHABLE " << n.id << " [" << a << "] " << e.what() << '\n';
      }
    }
  }
  if (spec.format == Format::json) out << rows.dump(2) << '\n';
  net.runtime->shutdown();
  return failed == 0 ? 0 : 1;
}

inline int run_demo(const RunSpec& spec, std::ostream& out) {
  BenchmarkConfig cfg = spec.bench;
  cfg.items = 1;
  cfg.repeats = 1;
  cfg.runtime.trace = true;
  for (auto m : kAllModels) {
    EvaluationNetwork net(m, cfg);
    RunObservation obs = net.run_once();
    out << "== " << to_string(m) << " wall_ms=" << format_value(obs.wall_ms)
        << " value=" << format_value(obs.sink_values.at(0)) << '\n';
    if (net.runtime()) {
      for (const auto& line : net.runtime()->trace().lines()) out << line << '\n';
    }
  }
  return 0;
}

inline int run(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  std::ofstream file;
  std::ostream* sink = &out;
  if (spec.out) {
    file.open(*spec.out);
    if (!file) {
      err << "error: cannot write '" << *spec.out << "'\n";
      return 1;
    }
    sink = &file;
  }
  try {
    switch (spec.command) {
      case Command::bench: return run_bench(spec, *sink);
      case Command::tick: return run_tick(spec, *sink);
      case Command::demo: return run_demo(spec, *sink);
      case Command::topo:
      case Command::registry: {
        BuiltNetwork net = bring_up(spec);
        if (spec.command == Command::topo) {
          *sink << (spec.format == Format::json ? topology_json(net).dump(2) + "\n" : topology_text(net));
        } else {
          *sink << (spec.format == Format::json ? registry_json(net).dump(2) + "\n" : registry_text(net));
        }
        net.runtime->shutdown();
        return 0;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout,
                std::ostream& err = std::cerr) {
  auto parsed = parse_args(argc, argv, out, err);
  if (auto* code = std::get_if<int>(&parsed)) return *code;
  return run(std::get<RunSpec>(parsed), out, err);
}

}  // namespace pprog::cli
