#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "signalopt/network.hpp"
#include "signalopt/plan.hpp"

namespace testsupport {

using namespace signalopt;

inline PhaseSpec phase(std::vector<int> movements, int min_len = 10, int max_len = 160) {
  PhaseSpec p;
  p.min_len = min_len;
  p.max_len = max_len;
  p.movements = std::move(movements);
  return p;
}

inline IntersectionSpec intersection(int id, int phases, int min_len = 10, int max_len = 160) {
  IntersectionSpec s;
  s.id = id;
  for (int i = 0; i < phases; ++i) s.phases.push_back(phase({i}, min_len, max_len));
  return s;
}

// Specs only (movements are placeholders): for plan-level tests.
inline std::vector<IntersectionSpec> specs_with(std::vector<int> phase_counts, int min_len = 10,
                                                int max_len = 160) {
  std::vector<IntersectionSpec> out;
  for (std::size_t j = 0; j < phase_counts.size(); ++j)
    out.push_back(intersection(static_cast<int>(j), phase_counts[j], min_len, max_len));
  return out;
}

// One intersection, two entry links each feeding a single exit movement.
// Phase i serves link i.
struct SingleSetup {
  double rate0 = 0.5, rate1 = 0.3;
  int sat0 = 2, sat1 = 1;
  int cap = 30;
  int travel = 1;
  int step = 1;
  int min_len = 1, max_len = 60;
};

inline NetworkSpec single_intersection(const SingleSetup& s = {}) {
  NetworkSpec n;
  n.sampling_len = s.step;
  n.horizon = 4;
  n.seed = 3;
  IntersectionSpec inter;
  inter.id = 0;
  inter.phases = {phase({0}, s.min_len, s.max_len), phase({1}, s.min_len, s.max_len)};
  n.intersections = {inter};
  n.links = {{0, "a", s.cap, s.travel}, {1, "b", s.cap, s.travel}};
  n.movements = {{0, 0, std::nullopt, s.sat0}, {1, 1, std::nullopt, s.sat1}};
  n.demand = {{0, 0, {{0, s.rate0}}}, {1, 0, {{0, s.rate1}}}};
  return n;
}

// Random chain of 1..3 intersections. Every intersection has two entry links
// and (except the first) one link from its western neighbour; links split
// over 1..2 movements that exit or continue east.
inline NetworkSpec random_network(std::mt19937_64& rng, int step = 1) {
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  NetworkSpec n;
  n.sampling_len = step;
  n.horizon = 3;
  n.seed = static_cast<std::uint64_t>(uni(0, 1000));
  const int N = uni(1, 3);
  std::vector<std::vector<int>> incoming(static_cast<std::size_t>(N));
  for (int j = 0; j < N; ++j) {
    for (int e = 0; e < (j == 0 ? 2 : 3); ++e) {
      const int id = static_cast<int>(n.links.size());
      n.links.push_back({id, "l" + std::to_string(id), uni(3, 25), uni(0, 3)});
      incoming[static_cast<std::size_t>(j)].push_back(id);
    }
  }
  std::vector<int> east_entry(static_cast<std::size_t>(N), -1);
  for (int j = 1; j < N; ++j) east_entry[static_cast<std::size_t>(j)] = incoming[static_cast<std::size_t>(j)].back();
  std::vector<std::vector<int>> moves_at(static_cast<std::size_t>(N));
  for (int j = 0; j < N; ++j) {
    for (int l : incoming[static_cast<std::size_t>(j)]) {
      const int k = uni(1, 2);
      TurnSplit split{l, {}};
      double left = 1.0;
      for (int m = 0; m < k; ++m) {
        MovementSpec mv;
        mv.id = static_cast<int>(n.movements.size());
        mv.from_link = l;
        if (j + 1 < N && uni(0, 1) == 1) mv.to_link = east_entry[static_cast<std::size_t>(j + 1)];
        mv.saturation_flow = uni(1, 4);
        n.movements.push_back(mv);
        moves_at[static_cast<std::size_t>(j)].push_back(mv.id);
        const double share = m + 1 == k ? left : real(0.1, 0.9);
        split.ratios.push_back({mv.id, share});
        left -= share;
      }
      if (k > 1) n.turn_ratios.push_back(split);
      const bool entry = j == 0 || l != east_entry[static_cast<std::size_t>(j)];
      if (entry) {
        DemandSpec d;
        d.link = l;
        if (uni(0, 1) == 1) {
          d.period_steps = uni(4, 30);
          d.profile = {{0, real(0.0, 2.0)}, {d.period_steps / 2, real(0.0, 2.0)}};
        } else {
          d.profile = {{0, real(0.0, 2.0)}};
        }
        n.demand.push_back(d);
      }
    }
  }
  for (int j = 0; j < N; ++j) {
    auto moves = moves_at[static_cast<std::size_t>(j)];
    std::shuffle(moves.begin(), moves.end(), rng);
    const int np = std::min<int>(uni(2, 4), static_cast<int>(moves.size()));
    IntersectionSpec inter;
    inter.id = j;
    inter.phases.resize(static_cast<std::size_t>(np));
    for (std::size_t m = 0; m < moves.size(); ++m) {
      auto& p = inter.phases[m < static_cast<std::size_t>(np) ? m : static_cast<std::size_t>(uni(0, np - 1))];
      p.movements.push_back(moves[m]);
    }
    for (auto& p : inter.phases) {
      p.min_len = step;
      p.max_len = 12 * step;
    }
    n.intersections.push_back(inter);
  }
  return n;
}

// Random valid plan: every phase a step multiple in its bounds, common cycle.
inline SignalPlan random_plan(std::span<const IntersectionSpec> specs, int step, std::mt19937_64& rng) {
  const PhaseBox box = spec_box(specs, step);
  int lo = 0, hi = 1 << 30;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    int a = 0, b = 0;
    for (std::size_t i = 0; i < box.lo[j].size(); ++i) {
      a += box.lo[j][i];
      b += box.hi[j][i];
    }
    lo = std::max(lo, a);
    hi = std::min(hi, b);
  }
  const int cycle = lo + step * std::uniform_int_distribution<int>(0, (hi - lo) / step)(rng);
  std::vector<std::vector<int>> raw;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    std::vector<int> row;
    for (std::size_t i = 0; i < box.lo[j].size(); ++i)
      row.push_back(box.lo[j][i] + step * std::uniform_int_distribution<int>(
                                              0, (box.hi[j][i] - box.lo[j][i]) / step)(rng));
    raw.push_back(row);
  }
  return repair_plan(raw, box, cycle, step);
}

}  // namespace testsupport
