#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "signalopt/network.hpp"
#include "signalopt/plan.hpp"
#include "signalopt/simulator.hpp"

namespace signalopt {

// One control cycle of joint experience.
struct TransitionRecord {
  int episode = 0;
  int cycle = 0;  // index within the episode
  std::vector<Observation> observations;
  PlanDelta action;  // executed plan minus base plan
  SignalPlan plan;   // executed plan
  double reward_global = 0.0;
  std::vector<double> reward_local;
  std::vector<Observation> next_observations;
  CycleTrace trace;
};

struct BatchProvenance {
  SignalPlan base_plan;
  std::uint64_t seed = 0;
  std::string network_hash;
  int eta = 0;  // exploration half-width, seconds
  int episodes = 0;
  int cycles_per_episode = 0;
  int sampling_len = 1;
  std::string config_hash;
};

struct BatchDataset {
  BatchProvenance provenance;
  std::vector<TransitionRecord> records;
};

struct CollectConfig {
  int episodes = 100;
  int cycles_per_episode = 6;
  int eta = 0;  // seconds
  std::uint64_t seed = 0;
};

// Box of plans within +-bound of `base`, intersected with the spec bounds.
PhaseBox bounded_box(const SignalPlan& base, std::span<const IntersectionSpec> specs,
                     int step_len, int bound);

// base + delta, repaired inside bounded_box(base, bound). The target cycle
// is base's cycle plus the anchor intersection's delta sum.
SignalPlan apply_bounded_delta(const SignalPlan& base, const PlanDelta& delta,
                               std::span<const IntersectionSpec> specs, int step_len,
                               int bound);

// Runs episodes under the base plan with uniform per-phase exploration in
// [-eta, +eta] (multiples of the sampling length). Episodes start from an
// empty network at a seeded offset within the demand period.
BatchDataset collect_batch(const SignalPlan& base, const Network& net,
                           const CollectConfig& config);

// Derived two-phase transition: start mid-way through phase 0 of a
// two-phase intersection and end at the same end-of-cycle state.
struct DerivedPair {
  int record = 0;
  int intersection = 0;
  int offset_steps = 0;
  std::vector<double> start_queues;
  SignalPlan action;  // phase 0 of `intersection` shortened by the offset
  std::vector<double> end_queues;
  double reward_global = 0.0;  // mean per-step reward over the remaining steps
  std::vector<double> reward_local;
};

// One derived pair per offset strictly inside phase 0, for every two-phase
// intersection. `record_index` is copied into the pairs.
std::vector<DerivedPair> augment_two_phase(const TransitionRecord& record,
                                           int record_index = 0);

// Per-phase average reward sample for the truncated value function.
struct TruncatedSample {
  int record = 0;
  int intersection = 0;
  int phase = 0;
  int phase_code = 0;  // flat phase index across the network
  int steps = 0;       // phase length in sampling steps
  std::vector<double> queues;  // joint queues at the phase start
  SignalPlan action;
  double avg_reward_global = 0.0;
  double avg_reward_local = 0.0;  // local reward of `intersection`
};

// One sample per phase per intersection per record.
std::vector<TruncatedSample> build_truncated_samples(std::span<const TransitionRecord> records);

// alpha r_g + (1 - alpha) min(r_i, c_i).
double src_reward(double r_global, double r_local, double alpha, double clip);

enum class Quartile { Q2, Q3 };

// Linear-interpolated quantile (position q (n-1) in sorted order).
double quantile(std::vector<double> values, double q);

// Per-intersection quartile of the local cycle rewards in the batch.
std::vector<double> estimate_clip_levels(std::span<const TransitionRecord> records,
                                         Quartile quartile);

// JSONL: first line {"provenance": ...}, then one record per line.
void write_batch_jsonl(const BatchDataset& batch, const std::filesystem::path& path);
BatchDataset read_batch_jsonl(const std::filesystem::path& path);

nlohmann::json record_to_json(const TransitionRecord& r);
TransitionRecord record_from_json(const nlohmann::json& j);

}  // namespace signalopt
