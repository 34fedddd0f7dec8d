#include "signalopt/batch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "signalopt/error.hpp"

namespace signalopt {

namespace {

std::size_t at(int i) { return static_cast<std::size_t>(i); }

int demand_period(const Network& net) {
  int period = 0;
  for (const auto& d : net.spec().demand) period = std::max(period, d.period_steps);
  return period;
}

nlohmann::json obs_to_json(const Observation& o) {
  return {{"intersection", o.intersection},
          {"queues", o.incoming_queues},
          {"phases", o.phase_lengths},
          {"cycle", o.cycle_index}};
}

Observation obs_from_json(const nlohmann::json& j) {
  Observation o;
  o.intersection = j.at("intersection").get<int>();
  o.incoming_queues = j.at("queues").get<std::vector<double>>();
  o.phase_lengths = j.at("phases").get<std::vector<int>>();
  o.cycle_index = j.at("cycle").get<std::int64_t>();
  return o;
}

nlohmann::json trace_to_json(const CycleTrace& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps)
    steps.push_back({{"q", s.queues}, {"p", s.active_phase}, {"w", s.waiting_local}});
  return {{"cycle", t.cycle_index},
          {"sampling_len", t.sampling_len},
          {"plan", t.plan},
          {"steps", steps},
          {"end_queues", t.end_queues}};
}

CycleTrace trace_from_json(const nlohmann::json& j) {
  CycleTrace t;
  t.cycle_index = j.at("cycle").get<std::int64_t>();
  t.sampling_len = j.at("sampling_len").get<int>();
  t.plan = j.at("plan").get<SignalPlan>();
  for (const auto& sj : j.at("steps")) {
    TraceStep s;
    s.queues = sj.at("q").get<std::vector<double>>();
    s.active_phase = sj.at("p").get<std::vector<int>>();
    s.waiting_local = sj.at("w").get<std::vector<double>>();
    for (double w : s.waiting_local) s.waiting_global += w;
    t.steps.push_back(std::move(s));
  }
  t.end_queues = j.at("end_queues").get<std::vector<double>>();
  return t;
}

}  // namespace

PhaseBox bounded_box(const SignalPlan& base, std::span<const IntersectionSpec> specs,
                     int step_len, int bound) {
  PhaseBox box = spec_box(specs, step_len);
  if (base.lengths.size() != specs.size()) throw ShapeError("base plan shape mismatch");
  const int reach = bound / step_len * step_len;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    if (base.lengths[j].size() != specs[j].phases.size())
      throw ShapeError("base plan shape mismatch");
    for (std::size_t i = 0; i < specs[j].phases.size(); ++i) {
      box.lo[j][i] = std::max(box.lo[j][i], base.lengths[j][i] - reach);
      box.hi[j][i] = std::min(box.hi[j][i], base.lengths[j][i] + reach);
    }
  }
  return box;
}

SignalPlan apply_bounded_delta(const SignalPlan& base, const PlanDelta& delta,
                               std::span<const IntersectionSpec> specs, int step_len,
                               int bound) {
  if (delta.deltas.size() != specs.size()) throw ShapeError("delta shape mismatch");
  std::vector<std::vector<int>> raw = base.lengths;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    if (delta.deltas[j].size() != raw[j].size()) throw ShapeError("delta shape mismatch");
    for (std::size_t i = 0; i < raw[j].size(); ++i) raw[j][i] += delta.deltas[j][i];
  }
  const int anchor = anchor_intersection(specs);
  return repair_plan(raw, bounded_box(base, specs, step_len, bound),
                     base.cycle_length(anchor) + delta.sum(anchor), step_len);
}

BatchDataset collect_batch(const SignalPlan& base, const Network& net,
                           const CollectConfig& config) {
  const int dt = net.sampling_len();
  const auto report = validate_plan(base, net.intersections(), dt);
  if (!report.ok()) throw Error("collect_batch: invalid base plan: " + report.summary());
  if (config.episodes < 1 || config.cycles_per_episode < 1)
    throw ConfigError("collect: need episodes >= 1 and cycles_per_episode >= 1");
  if (config.eta < 0) throw ConfigError("collect: eta must be >= 0");

  BatchDataset batch;
  auto& prov = batch.provenance;
  prov.base_plan = base;
  prov.seed = config.seed;
  prov.network_hash = hex_digest(net.hash());
  prov.eta = config.eta;
  prov.episodes = config.episodes;
  prov.cycles_per_episode = config.cycles_per_episode;
  prov.sampling_len = dt;

  const int period = demand_period(net);
  const int reach = config.eta / dt;
  std::mt19937_64 master(config.seed);
  for (int e = 0; e < config.episodes; ++e) {
    const std::uint64_t episode_seed = master();
    const std::int64_t start =
        period > 0 ? static_cast<std::int64_t>(episode_seed % static_cast<std::uint64_t>(period)) : 0;
    std::mt19937_64 explore(episode_seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<int> noise(-reach, reach);
    SimState state = initial_state(net, episode_seed, start, &base);
    for (int c = 0; c < config.cycles_per_episode; ++c) {
      PlanDelta raw;
      for (const auto& row : base.lengths) {
        raw.deltas.emplace_back();
        for (std::size_t i = 0; i < row.size(); ++i)
          raw.deltas.back().push_back(reach > 0 ? noise(explore) * dt : 0);
      }
      TransitionRecord rec;
      rec.episode = e;
      rec.cycle = c;
      rec.plan = apply_bounded_delta(base, raw, net.intersections(), dt, config.eta);
      rec.action = difference(base, rec.plan);
      rec.observations = observe_all(state, net);
      rec.trace = run_cycle(state, rec.plan, net);
      const auto r = cycle_reward(rec.trace);
      rec.reward_global = r.global;
      rec.reward_local = r.local;
      rec.next_observations = observe_all(state, net);
      batch.records.push_back(std::move(rec));
    }
  }
  return batch;
}

std::vector<DerivedPair> augment_two_phase(const TransitionRecord& record, int record_index) {
  const auto& trace = record.trace;
  const auto& plan = record.plan;
  if (plan.lengths.empty()) throw Error("augment_two_phase: record has no plan");
  const int len = plan.cycle_length(0) / trace.sampling_len;
  if (trace.num_steps() < len || len == 0)
    throw Error("augment_two_phase: trace shorter than one cycle");

  std::vector<DerivedPair> out;
  for (int j = 0; j < plan.num_intersections(); ++j) {
    if (plan.lengths[at(j)].size() != 2) continue;
    const int phase0 = plan.lengths[at(j)][0] / trace.sampling_len;
    for (int k = 1; k < phase0; ++k) {
      DerivedPair d;
      d.record = record_index;
      d.intersection = j;
      d.offset_steps = k;
      d.start_queues = trace.steps[at(k)].queues;
      d.action = plan;
      d.action.lengths[at(j)][0] -= k * trace.sampling_len;
      d.end_queues = trace.end_queues;
      const std::size_t nloc = trace.steps[at(k)].waiting_local.size();
      d.reward_local.assign(nloc, 0.0);
      for (int s = k; s < len; ++s) {
        d.reward_global += trace.steps[at(s)].waiting_global;
        for (std::size_t i = 0; i < nloc; ++i) d.reward_local[i] += trace.steps[at(s)].waiting_local[i];
      }
      const double remaining = len - k;
      d.reward_global = -d.reward_global / remaining;
      for (auto& v : d.reward_local) v = -v / remaining;
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<TruncatedSample> build_truncated_samples(std::span<const TransitionRecord> records) {
  std::vector<TruncatedSample> out;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& trace = records[r].trace;
    int code = 0;
    for (int j = 0; j < trace.plan.num_intersections(); ++j) {
      const auto bounds = trace.phase_boundaries(j);
      if (bounds.back() > trace.num_steps())
        throw ShapeError("build_truncated_samples: trace shorter than its plan");
      for (std::size_t i = 0; i + 1 < bounds.size(); ++i, ++code) {
        TruncatedSample s;
        s.record = static_cast<int>(r);
        s.intersection = j;
        s.phase = static_cast<int>(i);
        s.phase_code = code;
        s.steps = bounds[i + 1] - bounds[i];
        s.queues = trace.steps[at(bounds[i])].queues;
        s.action = trace.plan;
        for (int k = bounds[i]; k < bounds[i + 1]; ++k) {
          s.avg_reward_global -= trace.steps[at(k)].waiting_global;
          s.avg_reward_local -= trace.steps[at(k)].waiting_local[at(j)];
        }
        s.avg_reward_global /= s.steps;
        s.avg_reward_local /= s.steps;
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

double src_reward(double r_global, double r_local, double alpha, double clip) {
  return alpha * r_global + (1.0 - alpha) * std::min(r_local, clip);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<double> estimate_clip_levels(std::span<const TransitionRecord> records,
                                         Quartile quartile) {
  if (records.empty()) throw Error("estimate_clip_levels: empty batch");
  if (records.size() < 4) throw Error("estimate_clip_levels: need at least 4 records");
  const std::size_t n = records.front().reward_local.size();
  const double q = quartile == Quartile::Q2 ? 0.5 : 0.75;
  std::vector<double> levels;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto& r : records) v.push_back(r.reward_local.at(i));
    levels.push_back(quantile(std::move(v), q));
  }
  return levels;
}

nlohmann::json record_to_json(const TransitionRecord& r) {
  nlohmann::json obs = nlohmann::json::array();
  nlohmann::json next = nlohmann::json::array();
  for (const auto& o : r.observations) obs.push_back(obs_to_json(o));
  for (const auto& o : r.next_observations) next.push_back(obs_to_json(o));
  return {{"episode", r.episode},
          {"cycle", r.cycle},
          {"observations", obs},
          {"action", r.action.deltas},
          {"plan", r.plan},
          {"reward_global", r.reward_global},
          {"reward_local", r.reward_local},
          {"next_observations", next},
          {"trace", trace_to_json(r.trace)}};
}

TransitionRecord record_from_json(const nlohmann::json& j) {
  TransitionRecord r;
  r.episode = j.at("episode").get<int>();
  r.cycle = j.at("cycle").get<int>();
  for (const auto& o : j.at("observations")) r.observations.push_back(obs_from_json(o));
  r.action.deltas = j.at("action").get<std::vector<std::vector<int>>>();
  r.plan = j.at("plan").get<SignalPlan>();
  r.reward_global = j.at("reward_global").get<double>();
  r.reward_local = j.at("reward_local").get<std::vector<double>>();
  for (const auto& o : j.at("next_observations")) r.next_observations.push_back(obs_from_json(o));
  r.trace = trace_from_json(j.at("trace"));
  return r;
}

void write_batch_jsonl(const BatchDataset& batch, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const auto& p = batch.provenance;
  nlohmann::json header = {{"provenance",
                            {{"base_plan", p.base_plan},
                             {"seed", p.seed},
                             {"network_hash", p.network_hash},
                             {"eta", p.eta},
                             {"episodes", p.episodes},
                             {"cycles_per_episode", p.cycles_per_episode},
                             {"sampling_len", p.sampling_len},
                             {"config_hash", p.config_hash},
                             {"records", batch.records.size()}}}};
  out << header.dump() << '\n';
  for (const auto& r : batch.records) out << record_to_json(r).dump() << '\n';
}

BatchDataset read_batch_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  BatchDataset batch;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset " + path.string() + " is empty");
  try {
    const auto h = nlohmann::json::parse(line).at("provenance");
    auto& p = batch.provenance;
    p.base_plan = h.at("base_plan").get<SignalPlan>();
    p.seed = h.at("seed").get<std::uint64_t>();
    p.network_hash = h.at("network_hash").get<std::string>();
    p.eta = h.at("eta").get<int>();
    p.episodes = h.at("episodes").get<int>();
    p.cycles_per_episode = h.at("cycles_per_episode").get<int>();
    p.sampling_len = h.at("sampling_len").get<int>();
    p.config_hash = h.value("config_hash", std::string{});
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      batch.records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset " + path.string() + ": " + e.what());
  }
  return batch;
}

}  // namespace signalopt
