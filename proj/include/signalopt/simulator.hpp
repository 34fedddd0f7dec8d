#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "signalopt/network.hpp"
#include "signalopt/plan.hpp"

namespace signalopt {

struct TransitBatch {
  std::int64_t ready_step = 0;  // clock value at which the batch reaches the stop line
  std::int64_t count = 0;
};

// Mutable queue state of one simulator instance.
struct SimState {
  std::vector<std::vector<std::int64_t>> queues;  // [link][movement slot]
  std::vector<std::int64_t> backlog;              // [link] arrivals held at the entry
  std::vector<std::deque<TransitBatch>> in_transit;
  std::vector<double> arrival_acc;
  std::vector<std::vector<std::int64_t>> turn_assigned;
  std::int64_t clock = 0;
  std::int64_t cycle_index = 0;
  SignalPlan current_plan;
  std::int64_t entered = 0;
  std::int64_t exited = 0;
  std::mt19937_64 rng;

  std::int64_t stop_line_queue(int link) const;
  // Stop-line queue plus vehicles held at the entry of this link.
  std::int64_t queued(int link) const;
  std::int64_t transit_count(int link) const;
  std::int64_t occupancy(int link) const;  // stop-line queue + travelling
  std::int64_t total_stop_line() const;
  std::int64_t total_in_transit() const;
  bool conserves_vehicles() const;
};

SimState initial_state(const Network& net, std::uint64_t seed,
                       std::int64_t start_clock = 0,
                       const SignalPlan* plan_in_effect = nullptr);

struct StepWaiting {
  double global = 0.0;        // vehicle-seconds
  std::vector<double> local;  // per intersection, sums to global
};

// Advances one sampling step with the given active phase per intersection.
StepWaiting step(SimState& state, std::span<const int> active_phases,
                 const Network& net);

struct Observation {
  int intersection = 0;
  std::vector<double> incoming_queues;  // vehicles, in incoming_links() order
  std::vector<int> phase_lengths;       // plan in effect, seconds
  std::int64_t cycle_index = 0;
};

Observation observe(const SimState& state, const Network& net, int intersection);
std::vector<Observation> observe_all(const SimState& state, const Network& net);

// Queue counts of every intersection's incoming links, concatenated in
// intersection order (see Network::joint_offset).
std::vector<double> joint_queues(const SimState& state, const Network& net);

struct TraceStep {
  std::vector<double> queues;  // joint_queues at the start of the step
  std::vector<int> active_phase;
  std::vector<double> waiting_local;
  double waiting_global = 0.0;
};

struct CycleTrace {
  std::int64_t cycle_index = 0;
  int sampling_len = 1;
  SignalPlan plan;
  std::vector<TraceStep> steps;
  std::vector<double> end_queues;  // joint_queues after the last step

  int num_steps() const { return static_cast<int>(steps.size()); }
  double total_waiting() const;
  // First step of each phase of an intersection, plus one past the end.
  std::vector<int> phase_boundaries(int intersection) const;
};

// Runs one full cycle of `plan` (which must validate). Phase i of every
// intersection is active for lengths[i] / sampling_len consecutive steps.
CycleTrace run_cycle(SimState& state, const SignalPlan& plan, const Network& net);

struct CycleReward {
  double global = 0.0;
  std::vector<double> local;
};

// r = -WaitingTime / l(a), global and per intersection.
CycleReward cycle_reward(const CycleTrace& trace);

// Mean global cycle reward over `measured` cycles after `warmup` cycles from
// an empty network at clock 0, seeded from the network spec.
double evaluate_plan(const SignalPlan& plan, const Network& net, int warmup,
                     int measured);

// cycle,step,intersection,active_phase,queued,waiting
void write_trace_csv_header(std::ostream& os);
void write_trace_csv(std::ostream& os, const CycleTrace& trace, const Network& net);

}  // namespace signalopt
