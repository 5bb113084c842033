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

#include <algorithm>
#include <array>
#include <condition_variable>
#include <sstream>

namespace pprog {

enum class PipelineModel : std::uint8_t { monotone, sequence, pipeline, super_pipeline };

inline constexpr std::array<PipelineModel, 4> kAllModels = {
    PipelineModel::monotone, PipelineModel::sequence, PipelineModel::pipeline,
    PipelineModel::super_pipeline};

constexpr std::string_view to_string(PipelineModel m) noexcept {
  switch (m) {
    case PipelineModel::monotone: return "monotone";
    case PipelineModel::sequence: return "sequence";
    case PipelineModel::pipeline: return "pipeline";
    case PipelineModel::super_pipeline: return "super_pipeline";
  }
  return "?";
}

inline std::optional<PipelineModel> parse_model(std::string_view s) {
  for (auto m : kAllModels) {
    if (to_string(m) == s) return m;
  }
  if (s == "super") return PipelineModel::super_pipeline;
  return std::nullopt;
}

/// Multiply counts for Service1, Service2 and Service3.
struct FmiTriple {
  std::uint64_t service1 = 1'000'000;
  std::uint64_t service2 = 2'000'000;
  std::uint64_t service3 = 1'000'000;

  std::uint64_t operator[](std::size_t stage) const {
    return stage == 0 ? service1 : stage == 1 ? service2 : service3;
  }
  std::uint64_t total() const { return service1 + service2 + service3; }
};

struct BenchmarkConfig {
  FmiTriple fmi;
  std::size_t items = 100;
  std::size_t repeats = 5;
  RuntimeOptions runtime = RuntimeOptions::with_timeout(milliseconds{60'000}, false);

  void validate() const {
    if (fmi.service1 == 0 || fmi.service2 == 0 || fmi.service3 == 0) {
      throw ProtocolError(Errc::invalid_argument, "FMI counts must be positive");
    }
    if (items == 0 || repeats == 0) {
      throw ProtocolError(Errc::invalid_argument, "items and repeats must be positive");
    }
  }
};

/// One stage execution of one item.
struct StageRecord {
  std::size_t item = 0;
  int stage = 0;  // 1, 2 or 3
  std::int64_t start_ns = 0;
  std::int64_t end_ns = 0;
  std::int64_t cpu_ns = 0;
};

struct RunObservation {
  double wall_ms = 0;
  std::size_t sink_items = 0;
  std::vector<double> sink_values;  // indexed by item
  std::vector<StageRecord> stages;
};

struct ModelTiming {
  PipelineModel model = PipelineModel::monotone;
  double median_ms = 0;
  std::vector<double> times_ms;
};

struct BenchmarkResult {
  BenchmarkConfig config;
  std::vector<ModelTiming> timings;

  const ModelTiming* find(PipelineModel m) const {
    for (const auto& t : timings) {
      if (t.model == m) return &t;
    }
    return nullptr;
  }
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw ProtocolError(Errc::invalid_argument, "median of nothing");
  std::sort(xs.begin(), xs.end());
  const auto n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// T_monotone / T_super_pipeline.
inline double compute_speedup(const BenchmarkResult& r) {
  const auto* mono = r.find(PipelineModel::monotone);
  const auto* super = r.find(PipelineModel::super_pipeline);
  if (mono == nullptr || super == nullptr) {
    throw ProtocolError(Errc::missing_model, "speedup needs monotone and super_pipeline timings");
  }
  return mono->median_ms / super->median_ms;
}

/// T_monotone / T_model, or nothing when monotone was not run.
inline std::optional<double> speedup_vs_monotone(const BenchmarkResult& r, PipelineModel m) {
  const auto* mono = r.find(PipelineModel::monotone);
  const auto* row = r.find(m);
  if (mono == nullptr || row == nullptr) return std::nullopt;
  return mono->median_ms / row->median_ms;
}

/// The evaluation network for one model: a master (which hosts the sink)
/// with Service1, Service2 and Service3 providers as children; the super
/// pipeline gets a second Service2 provider. Items carry a running value
/// from stage to stage.
class EvaluationNetwork {
 public:
  EvaluationNetwork(PipelineModel model, BenchmarkConfig cfg) : model_(model), cfg_(cfg) {
    cfg_.validate();
    if (model_ == PipelineModel::monotone) return;
    runtime_ = std::make_unique<Runtime>(cfg_.runtime);
    master_ = &runtime_->spawn(NodeRole::master);
    master_->register_local("Sink", ExecutionMode::function, false,
                            [this](ServiceCall& call) { return sink(call); });
    add_stage(1, "Service1");
    add_stage(2, "Service2");
    if (model_ == PipelineModel::super_pipeline) add_stage(2, "Service2");
    add_stage(3, "Service3");
    if (!runtime_->start_connect().complete) {
      throw ProtocolError(Errc::timeout, "evaluation network did not connect");
    }
    if (!runtime_->run_registration().complete) {
      throw ProtocolError(Errc::registration_incomplete, "evaluation services did not register");
    }
  }

  EvaluationNetwork(const EvaluationNetwork&) = delete;
  EvaluationNetwork& operator=(const EvaluationNetwork&) = delete;

  ~EvaluationNetwork() {
    if (runtime_) runtime_->shutdown();
  }

  Runtime* runtime() noexcept { return runtime_.get(); }

  /// Pushes every item through the three stages and waits for the last
  /// one to reach the sink.
  RunObservation run_once() {
    {
      std::lock_guard lock(mu_);
      values_.assign(cfg_.items, 0.0);
      arrived_ = 0;
      stages_.clear();
      stages_.reserve(cfg_.items * 3);
    }
    const auto start = Clock::now();
    switch (model_) {
      case PipelineModel::monotone: run_monotone(); break;
      case PipelineModel::sequence: run_sequence(); break;
      case PipelineModel::pipeline:
      case PipelineModel::super_pipeline: run_pipelined(); break;
    }
    const auto end = Clock::now();
    RunObservation obs;
    obs.wall_ms = std::chrono::duration<double, std::milli>(end - start).count();
    std::lock_guard lock(mu_);
    obs.sink_items = arrived_;
    obs.sink_values = values_;
    obs.stages = stages_;
    if (obs.sink_items != cfg_.items) {
      throw ProtocolError(Errc::timeout, std::string(to_string(model_)) + ": sink saw " +
                                             std::to_string(obs.sink_items) + " of " +
                                             std::to_string(cfg_.items) + " items");
    }
    return obs;
  }

 private:
  std::int64_t now_ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - epoch_).count();
  }

  void record_stage(std::size_t item, int stage, std::int64_t t0, std::int64_t t1, std::int64_t cpu) {
    std::lock_guard lock(mu_);
    stages_.push_back(StageRecord{item, stage, t0, t1, cpu});
  }

  void add_stage(int stage, const std::string& name) {
    auto& node = runtime_->spawn(NodeRole::server, master_->address());
    const std::uint64_t fmi = cfg_.fmi[static_cast<std::size_t>(stage - 1)];
    node.register_local(name, ExecutionMode::function, false,
                        [this, stage, fmi](ServiceCall& call) -> std::vector<std::string> {
                          if (call.args.size() < 2) {
                            throw ProtocolError(Errc::invalid_argument, "stage needs value and item");
                          }
                          const double in = parse_value(call.args[0]);
                          const std::size_t item = std::stoul(call.args[1]);
                          const auto t0 = now_ns();
                          const auto c0 = detail::thread_cpu_ns();
                          const double out = fmi_burn(fmi, in);
                          const auto c1 = detail::thread_cpu_ns();
                          record_stage(item, stage, t0, now_ns(), c1 - c0);
                          if (call.args.size() > 2) {
                            // Hand the item to the next stage and return at once.
                            std::vector<std::string> next{format_value(out), call.args[1]};
                            next.insert(next.end(), call.args.begin() + 3, call.args.end());
                            call.node.request_async(call.args[2], std::move(next));
                            return {};
                          }
                          return {format_value(out)};
                        });
  }

  std::vector<std::string> sink(ServiceCall& call) {
    if (call.args.size() < 2) throw ProtocolError(Errc::invalid_argument, "sink needs value and item");
    const double v = parse_value(call.args[0]);
    const std::size_t item = std::stoul(call.args[1]);
    {
      std::lock_guard lock(mu_);
      if (item < values_.size()) values_[item] = v;
      ++arrived_;
    }
    cv_.notify_all();
    return {};
  }

  void run_monotone() {
    for (std::size_t item = 0; item < cfg_.items; ++item) {
      double v = 1.0;
      for (int stage = 1; stage <= 3; ++stage) {
        const auto t0 = now_ns();
        const auto c0 = detail::thread_cpu_ns();
        v = fmi_burn(cfg_.fmi[static_cast<std::size_t>(stage - 1)], v);
        const auto c1 = detail::thread_cpu_ns();
        record_stage(item, stage, t0, now_ns(), c1 - c0);
      }
      std::lock_guard lock(mu_);
      values_[item] = v;
      ++arrived_;
    }
  }

  void run_sequence() {
    static const std::array<std::string, 3> names{"Service1", "Service2", "Service3"};
    for (std::size_t item = 0; item < cfg_.items; ++item) {
      double v = 1.0;
      for (const auto& name : names) {
        Reply r = master_->request_sync(name, {format_value(v), std::to_string(item)});
        if (!r.ok() || r.values.empty()) {
          throw ProtocolError(Errc::no_provider, name + " failed: " + std::string(to_string(r.status)) +
                                                     " " + r.detail);
        }
        v = parse_value(r.values[0]);
      }
      std::lock_guard lock(mu_);
      values_[item] = v;
      ++arrived_;
    }
  }

  void run_pipelined() {
    for (std::size_t item = 0; item < cfg_.items; ++item) {
      master_->request_async("Service1",
                             {"1", std::to_string(item), "Service2", "Service3", "Sink"});
    }
    std::unique_lock lock(mu_);
    const auto budget = cfg_.runtime.request_timeout * static_cast<long>(cfg_.items);
    cv_.wait_for(lock, budget, [&] { return arrived_ >= cfg_.items; });
  }

  PipelineModel model_;
  BenchmarkConfig cfg_;
  std::unique_ptr<Runtime> runtime_;
  ServiceNode* master_ = nullptr;
  Timestamp epoch_ = Clock::now();

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<double> values_;
  std::size_t arrived_ = 0;
  std::vector<StageRecord> stages_;
};

/// Median wall time of `cfg.repeats` runs on one network.
inline ModelTiming run_model(PipelineModel model, const BenchmarkConfig& cfg,
                             std::vector<RunObservation>* observations = nullptr) {
  EvaluationNetwork net(model, cfg);
  ModelTiming timing{model, 0, {}};
  for (std::size_t i = 0; i < cfg.repeats; ++i) {
    RunObservation obs = net.run_once();
    timing.times_ms.push_back(obs.wall_ms);
    if (observations != nullptr) observations->push_back(std::move(obs));
  }
  timing.median_ms = median(timing.times_ms);
  return timing;
}

inline BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, std::span<const PipelineModel> models) {
  BenchmarkResult result{cfg, {}};
  for (auto m : models) result.timings.push_back(run_model(m, cfg));
  return result;
}

struct SweepPoint {
  std::uint64_t fmi = 0;  // per-service count; Service2 runs twice as many
  double monotone_ms = 0;
  double super_ms = 0;
  double speedup = 0;
};

inline std::vector<SweepPoint> speedup_sweep(std::span<const std::uint64_t> per_service,
                                             std::size_t items, std::size_t repeats) {
  std::vector<SweepPoint> out;
  for (auto f : per_service) {
    BenchmarkConfig cfg;
    cfg.fmi = FmiTriple{f, 2 * f, f};
    cfg.items = items;
    cfg.repeats = repeats;
    BenchmarkResult r{cfg, {run_model(PipelineModel::monotone, cfg),
                            run_model(PipelineModel::super_pipeline, cfg)}};
    out.push_back(SweepPoint{f, r.timings[0].median_ms, r.timings[1].median_ms, compute_speedup(r)});
  }
  return out;
}

inline constexpr std::string_view kResultColumns =
    "model,fmi1,fmi2,fmi3,items,repeats,median_ms,speedup";

inline std::string to_csv(const BenchmarkResult& r) {
  std::ostringstream os;
  os << kResultColumns << '\n';
  for (const auto& t : r.timings) {
    os << to_string(t.model) << ',' << r.config.fmi.service1 << ',' << r.config.fmi.service2 << ','
       << r.config.fmi.service3 << ',' << r.config.items << ',' << r.config.repeats << ','
       << format_value(t.median_ms) << ',';
    if (auto s = speedup_vs_monotone(r, t.model)) os << format_value(*s);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const BenchmarkResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : r.timings) {
    nlohmann::json row{{"model", std::string(to_string(t.model))},
                       {"fmi1", r.config.fmi.service1},
                       {"fmi2", r.config.fmi.service2},
                       {"fmi3", r.config.fmi.service3},
                       {"items", r.config.items},
                       {"repeats", r.config.repeats},
                       {"median_ms", t.median_ms},
                       {"times_ms", t.times_ms}};
    auto s = speedup_vs_monotone(r, t.model);
    row["speedup"] = s ? nlohmann::json(*s) : nlohmann::json(nullptr);
    rows.push_back(std::move(row));
  }
  nlohmann::json out{{"columns", kResultColumns}, {"rows", rows}};
  if (r.find(PipelineModel::monotone) && r.find(PipelineModel::super_pipeline)) {
    out["speedup"] = compute_speedup(r);
  }
  return out;
}

}  // namespace pprog
