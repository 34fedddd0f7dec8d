#include "signalopt/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "signalopt/error.hpp"

namespace signalopt {

namespace {

std::size_t at(int i) { return static_cast<std::size_t>(i); }

// Deterministic largest-deficit split: the next vehicle goes to the movement
// whose assigned count lags its share the most.
int next_slot_deterministic(const std::vector<double>& shares,
                            std::vector<std::int64_t>& assigned) {
  const auto total = std::accumulate(assigned.begin(), assigned.end(), std::int64_t{0});
  int best = 0;
  double best_deficit = -1e300;
  for (std::size_t k = 0; k < shares.size(); ++k) {
    const double deficit = shares[k] * static_cast<double>(total + 1) -
                           static_cast<double>(assigned[k]);
    if (deficit > best_deficit + 1e-12) {
      best_deficit = deficit;
      best = static_cast<int>(k);
    }
  }
  ++assigned[at(best)];
  return best;
}

void join_stop_line(SimState& s, const Network& net, int link, std::int64_t count) {
  auto& q = s.queues[at(link)];
  const auto& shares = net.link_turn_shares(link);
  if (q.size() == 1) {
    q[0] += count;
    return;
  }
  if (net.spec().arrivals == ArrivalMode::Poisson) {
    std::discrete_distribution<int> pick(shares.begin(), shares.end());
    for (std::int64_t v = 0; v < count; ++v) ++q[at(pick(s.rng))];
  } else {
    for (std::int64_t v = 0; v < count; ++v)
      ++q[at(next_slot_deterministic(shares, s.turn_assigned[at(link)]))];
  }
}

void push_transit(SimState& s, int link, std::int64_t ready, std::int64_t count) {
  if (count <= 0) return;
  auto& dq = s.in_transit[at(link)];
  if (!dq.empty() && dq.back().ready_step == ready) dq.back().count += count;
  else dq.push_back({ready, count});
}

}  // namespace

std::int64_t SimState::stop_line_queue(int link) const {
  const auto& q = queues[at(link)];
  return std::accumulate(q.begin(), q.end(), std::int64_t{0});
}

std::int64_t SimState::queued(int link) const {
  return stop_line_queue(link) + backlog[at(link)];
}

std::int64_t SimState::transit_count(int link) const {
  std::int64_t n = 0;
  for (const auto& b : in_transit[at(link)]) n += b.count;
  return n;
}

std::int64_t SimState::occupancy(int link) const {
  return stop_line_queue(link) + transit_count(link);
}

std::int64_t SimState::total_stop_line() const {
  std::int64_t n = 0;
  for (std::size_t l = 0; l < queues.size(); ++l) n += stop_line_queue(static_cast<int>(l));
  return n;
}

std::int64_t SimState::total_in_transit() const {
  std::int64_t n = 0;
  for (std::size_t l = 0; l < in_transit.size(); ++l) n += transit_count(static_cast<int>(l));
  return n;
}

bool SimState::conserves_vehicles() const {
  return entered == total_stop_line() + total_in_transit() + exited;
}

SimState initial_state(const Network& net, std::uint64_t seed,
                       std::int64_t start_clock, const SignalPlan* plan_in_effect) {
  SimState s;
  const auto L = at(net.num_links());
  s.queues.resize(L);
  s.turn_assigned.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    s.queues[l].assign(net.link_movements(static_cast<int>(l)).size(), 0);
    s.turn_assigned[l].assign(s.queues[l].size(), 0);
  }
  s.backlog.assign(L, 0);
  s.in_transit.assign(L, {});
  s.arrival_acc.assign(L, 0.0);
  s.clock = start_clock;
  s.rng.seed(seed);
  if (plan_in_effect) {
    s.current_plan = *plan_in_effect;
  } else {
    for (const auto& inter : net.intersections())
      s.current_plan.lengths.emplace_back(inter.phases.size(), 0);
  }
  return s;
}

StepWaiting step(SimState& s, std::span<const int> active_phases, const Network& net) {
  const int N = net.num_intersections();
  if (static_cast<int>(active_phases.size()) != N)
    throw ShapeError("step: expected one active phase per intersection");
  for (int j = 0; j < N; ++j) {
    const int p = active_phases[at(j)];
    if (p < 0 || p >= net.intersections()[at(j)].num_phases())
      throw ShapeError("step: unknown phase index " + std::to_string(p) +
                       " at intersection " + std::to_string(j));
  }

  const double dt = net.sampling_len();
  StepWaiting w;
  w.local.assign(at(N), 0.0);
  for (int j = 0; j < N; ++j) {
    std::int64_t q = 0;
    for (int l : net.incoming_links(j)) q += s.queued(l);
    w.local[at(j)] = static_cast<double>(q) * dt;
    w.global += w.local[at(j)];
  }

  // Discharge green movements, intersections in order, movements by id.
  for (int j = 0; j < N; ++j) {
    auto moves = net.intersections()[at(j)].phases[at(active_phases[at(j)])].movements;
    std::sort(moves.begin(), moves.end());
    moves.erase(std::unique(moves.begin(), moves.end()), moves.end());
    for (int m : moves) {
      const auto& mv = net.movement(m);
      auto& q = s.queues[at(mv.from_link)][at(net.movement_slot(m))];
      std::int64_t flow = std::min<std::int64_t>(q, mv.saturation_flow);
      if (mv.to_link) {
        const int to = *mv.to_link;
        const std::int64_t space = net.link(to).capacity - s.occupancy(to);
        flow = std::min(flow, std::max<std::int64_t>(space, 0));
        push_transit(s, to, s.clock + net.link(to).travel_steps, flow);
      } else {
        s.exited += flow;
      }
      q -= flow;
    }
  }

  // External arrivals enter their link if there is room, else wait outside.
  for (int l : net.entry_links()) {
    const double rate = net.demand_rate(l, s.clock);
    std::int64_t n = 0;
    if (net.spec().arrivals == ArrivalMode::Poisson) {
      if (rate > 0.0) n = std::poisson_distribution<std::int64_t>(rate)(s.rng);
    } else {
      s.arrival_acc[at(l)] += rate;
      n = static_cast<std::int64_t>(std::floor(s.arrival_acc[at(l)] + 1e-9));
      s.arrival_acc[at(l)] -= static_cast<double>(n);
    }
    s.backlog[at(l)] += n;
    const std::int64_t space =
        std::max<std::int64_t>(net.link(l).capacity - s.occupancy(l), 0);
    const std::int64_t admit = std::min(space, s.backlog[at(l)]);
    s.backlog[at(l)] -= admit;
    s.entered += admit;
    push_transit(s, l, s.clock + net.link(l).travel_steps, admit);
  }

  for (int l = 0; l < net.num_links(); ++l) {
    auto& dq = s.in_transit[at(l)];
    while (!dq.empty() && dq.front().ready_step <= s.clock) {
      join_stop_line(s, net, l, dq.front().count);
      dq.pop_front();
    }
  }

  ++s.clock;
  return w;
}

Observation observe(const SimState& state, const Network& net, int intersection) {
  if (intersection < 0 || intersection >= net.num_intersections())
    throw ShapeError("observe: unknown intersection " + std::to_string(intersection));
  Observation o;
  o.intersection = intersection;
  for (int l : net.incoming_links(intersection))
    o.incoming_queues.push_back(static_cast<double>(state.queued(l)));
  o.phase_lengths = state.current_plan.lengths.at(at(intersection));
  o.cycle_index = state.cycle_index;
  return o;
}

std::vector<Observation> observe_all(const SimState& state, const Network& net) {
  std::vector<Observation> out;
  for (int j = 0; j < net.num_intersections(); ++j) out.push_back(observe(state, net, j));
  return out;
}

std::vector<double> joint_queues(const SimState& state, const Network& net) {
  std::vector<double> q;
  q.reserve(at(net.joint_size()));
  for (int j = 0; j < net.num_intersections(); ++j)
    for (int l : net.incoming_links(j)) q.push_back(static_cast<double>(state.queued(l)));
  return q;
}

double CycleTrace::total_waiting() const {
  double w = 0.0;
  for (const auto& s : steps) w += s.waiting_global;
  return w;
}

std::vector<int> CycleTrace::phase_boundaries(int intersection) const {
  std::vector<int> b{0};
  for (int t : plan.lengths.at(at(intersection))) b.push_back(b.back() + t / sampling_len);
  return b;
}

CycleTrace run_cycle(SimState& state, const SignalPlan& plan, const Network& net) {
  const int dt = net.sampling_len();
  const auto report = validate_plan(plan, net.intersections(), dt);
  if (!report.ok()) throw Error("run_cycle: invalid plan: " + report.summary());

  CycleTrace trace;
  trace.cycle_index = state.cycle_index;
  trace.sampling_len = dt;
  trace.plan = plan;
  state.current_plan = plan;

  const int N = net.num_intersections();
  const int steps = plan.cycle_length(0) / dt;
  std::vector<std::vector<int>> bounds;
  for (int j = 0; j < N; ++j) bounds.push_back(trace.phase_boundaries(j));
  std::vector<int> active(at(N), 0);
  trace.steps.reserve(at(steps));
  for (int k = 0; k < steps; ++k) {
    for (int j = 0; j < N; ++j)
      while (k >= bounds[at(j)][at(active[at(j)] + 1)]) ++active[at(j)];
    TraceStep ts;
    ts.queues = joint_queues(state, net);
    ts.active_phase = active;
    auto w = step(state, active, net);
    ts.waiting_local = std::move(w.local);
    ts.waiting_global = w.global;
    trace.steps.push_back(std::move(ts));
  }
  trace.end_queues = joint_queues(state, net);
  ++state.cycle_index;
  return trace;
}

CycleReward cycle_reward(const CycleTrace& trace) {
  if (trace.steps.empty()) throw Error("cycle_reward: empty trace");
  const double len = static_cast<double>(trace.steps.size());
  CycleReward r;
  r.local.assign(trace.steps.front().waiting_local.size(), 0.0);
  for (const auto& s : trace.steps) {
    r.global += s.waiting_global;
    for (std::size_t j = 0; j < r.local.size(); ++j) r.local[j] += s.waiting_local[j];
  }
  r.global = -r.global / len;
  for (auto& v : r.local) v = -v / len;
  return r;
}

double evaluate_plan(const SignalPlan& plan, const Network& net, int warmup,
                     int measured) {
  if (measured < 1) throw Error("evaluate_plan: need at least one measured cycle");
  SimState s = initial_state(net, net.spec().seed, 0, &plan);
  for (int c = 0; c < warmup; ++c) run_cycle(s, plan, net);
  double sum = 0.0;
  for (int c = 0; c < measured; ++c) sum += cycle_reward(run_cycle(s, plan, net)).global;
  return sum / measured;
}

void write_trace_csv_header(std::ostream& os) {
  os << "cycle,step,intersection,active_phase,queued,waiting\n";
}

void write_trace_csv(std::ostream& os, const CycleTrace& trace, const Network& net) {
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& st = trace.steps[k];
    for (int j = 0; j < net.num_intersections(); ++j) {
      double q = 0.0;
      const auto off = at(net.joint_offset(j));
      for (std::size_t i = 0; i < net.incoming_links(j).size(); ++i) q += st.queues[off + i];
      os << trace.cycle_index << ',' << k << ',' << j << ',' << st.active_phase[at(j)]
         << ',' << q << ',' << st.waiting_local[at(j)] << '\n';
    }
  }
}

}  // namespace signalopt
