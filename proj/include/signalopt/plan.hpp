#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace signalopt {

struct PhaseSpec {
  int min_len = 10;  // seconds
  int max_len = 0;   // seconds
  std::vector<int> movements;
};

struct IntersectionSpec {
  int id = 0;
  std::vector<PhaseSpec> phases;

  int num_phases() const { return static_cast<int>(phases.size()); }
};

// Phase lengths in seconds, one ordered list per intersection.
struct SignalPlan {
  std::vector<std::vector<int>> lengths;

  int num_intersections() const { return static_cast<int>(lengths.size()); }
  int cycle_length(int intersection = 0) const;
  int total_phases() const;

  friend bool operator==(const SignalPlan&, const SignalPlan&) = default;
};

// Signed per-phase changes, same shape as a SignalPlan.
struct PlanDelta {
  std::vector<std::vector<int>> deltas;

  int sum(int intersection) const;
  bool is_zero() const;
  // True when every intersection's deltas sum to the same value.
  bool preserves_cycle_equality() const;

  friend bool operator==(const PlanDelta&, const PlanDelta&) = default;
};

struct Violation {
  enum class Kind { BelowMin, AboveMax, NotStepMultiple, CycleMismatch };
  Kind kind;
  int intersection = 0;
  int phase = -1;  // -1 for cycle mismatches
  int other_intersection = -1;
  std::string message;
};

struct ValidityReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

// Inclusive per-phase limits used by the repair projection.
struct PhaseBox {
  std::vector<std::vector<int>> lo;
  std::vector<std::vector<int>> hi;
};

// Checks phase bounds, step-multiple and cycle equality. Throws ShapeError
// if plan and specs disagree on the number of intersections or phases.
ValidityReport validate_plan(const SignalPlan& plan,
                             std::span<const IntersectionSpec> specs,
                             int step_len = 1);

// theta = (t_{1,1}, ..., t_{n_1,1}, ..., t_{n_N,N}).
std::vector<double> flatten(const SignalPlan& plan);
std::vector<double> flatten(const PlanDelta& delta);
// Inverse of flatten; entries are rounded to the nearest integer second.
SignalPlan unflatten(std::span<const double> theta,
                     std::span<const IntersectionSpec> specs);
PlanDelta unflatten_delta(std::span<const double> theta,
                          std::span<const IntersectionSpec> specs);

// Phase bounds from the specs, tightened to multiples of step_len.
PhaseBox spec_box(std::span<const IntersectionSpec> specs, int step_len);

// Index of the intersection with the fewest phases (lowest index on ties).
int anchor_intersection(std::span<const IntersectionSpec> specs);

// Rounds a length to the nearest multiple of step_len (ties away from zero).
int round_to_step(double seconds, int step_len);

// Clip-then-cascade projection. Every phase is rounded to step_len and
// clipped into the box; each intersection's residual against the common
// cycle is then absorbed by its last phase, cascading backward through
// earlier phases when the last one saturates. The target cycle is clamped
// into the range reachable by every intersection. Throws InfeasibleRepair
// when that range is empty.
SignalPlan repair_plan(const std::vector<std::vector<int>>& raw,
                       const PhaseBox& box, int target_cycle, int step_len);

// plan + delta followed by repair_plan against the spec bounds. The target
// cycle is the plan's cycle plus the anchor intersection's delta sum.
SignalPlan apply_delta(const SignalPlan& plan, const PlanDelta& delta,
                       std::span<const IntersectionSpec> specs,
                       int step_len = 1);

// Element-wise b - a.
PlanDelta difference(const SignalPlan& from, const SignalPlan& to);

void to_json(nlohmann::json& j, const SignalPlan& plan);
void from_json(const nlohmann::json& j, SignalPlan& plan);

// Reads a plan JSON file; extra top-level keys are ignored.
SignalPlan load_plan(const std::filesystem::path& path);

// Creates a plan that gives every phase an equal share of `cycle`,
// remainder going to the leading phases.
SignalPlan uniform_plan(std::span<const IntersectionSpec> specs, int cycle,
                        int step_len);

}  // namespace signalopt
