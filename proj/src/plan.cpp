#include "signalopt/plan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "signalopt/error.hpp"

namespace signalopt {

namespace {

void check_shape(const std::vector<std::vector<int>>& rows,
                 std::span<const IntersectionSpec> specs, const char* what) {
  if (rows.size() != specs.size()) {
    std::ostringstream os;
    os << what << " has " << rows.size() << " intersections, specs have "
       << specs.size();
    throw ShapeError(os.str());
  }
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j].size() != specs[j].phases.size()) {
      std::ostringstream os;
      os << what << " intersection " << j << " has " << rows[j].size()
         << " phases, spec has " << specs[j].phases.size();
      throw ShapeError(os.str());
    }
  }
}

int floor_div(int a, int b) {
  int q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

int ceil_div(int a, int b) { return -floor_div(-a, b); }

}  // namespace

int SignalPlan::cycle_length(int intersection) const {
  const auto& row = lengths.at(static_cast<std::size_t>(intersection));
  return std::accumulate(row.begin(), row.end(), 0);
}

int SignalPlan::total_phases() const {
  int n = 0;
  for (const auto& row : lengths) n += static_cast<int>(row.size());
  return n;
}

int PlanDelta::sum(int intersection) const {
  const auto& row = deltas.at(static_cast<std::size_t>(intersection));
  return std::accumulate(row.begin(), row.end(), 0);
}

bool PlanDelta::is_zero() const {
  for (const auto& row : deltas)
    for (int d : row)
      if (d != 0) return false;
  return true;
}

bool PlanDelta::preserves_cycle_equality() const {
  for (std::size_t j = 1; j < deltas.size(); ++j)
    if (sum(static_cast<int>(j)) != sum(0)) return false;
  return true;
}

std::string ValidityReport::summary() const {
  if (ok()) return "OK";
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i].message;
  }
  return os.str();
}

ValidityReport validate_plan(const SignalPlan& plan,
                             std::span<const IntersectionSpec> specs,
                             int step_len) {
  if (step_len <= 0) throw ShapeError("sampling length must be positive");
  check_shape(plan.lengths, specs, "plan");
  ValidityReport report;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    for (std::size_t i = 0; i < specs[j].phases.size(); ++i) {
      const int t = plan.lengths[j][i];
      const auto& ph = specs[j].phases[i];
      auto add = [&](Violation::Kind kind, const std::string& what) {
        std::ostringstream os;
        os << "intersection " << j << " phase " << i << ": " << t << " s "
           << what;
        report.violations.push_back({kind, static_cast<int>(j),
                                     static_cast<int>(i), -1, os.str()});
      };
      if (t < ph.min_len)
        add(Violation::Kind::BelowMin,
            "below minimum " + std::to_string(ph.min_len) + " s");
      if (t > ph.max_len)
        add(Violation::Kind::AboveMax,
            "above maximum " + std::to_string(ph.max_len) + " s");
      if (t % step_len != 0)
        add(Violation::Kind::NotStepMultiple,
            "not a multiple of " + std::to_string(step_len) + " s");
    }
  }
  if (!specs.empty()) {
    const int c0 = plan.cycle_length(0);
    for (std::size_t j = 1; j < specs.size(); ++j) {
      const int cj = plan.cycle_length(static_cast<int>(j));
      if (cj != c0) {
        std::ostringstream os;
        os << "cycle mismatch: intersection 0 has " << c0
           << " s, intersection " << j << " has " << cj << " s";
        report.violations.push_back({Violation::Kind::CycleMismatch,
                                     static_cast<int>(j), -1, 0, os.str()});
      }
    }
  }
  return report;
}

std::vector<double> flatten(const SignalPlan& plan) {
  if (plan.lengths.empty()) throw ShapeError("plan must have at least one intersection");
  std::vector<double> theta;
  theta.reserve(static_cast<std::size_t>(plan.total_phases()));
  for (const auto& row : plan.lengths)
    for (int t : row) theta.push_back(t);
  return theta;
}

std::vector<double> flatten(const PlanDelta& delta) {
  std::vector<double> theta;
  for (const auto& row : delta.deltas)
    for (int d : row) theta.push_back(d);
  return theta;
}

namespace {

std::vector<std::vector<int>> unflatten_rows(
    std::span<const double> theta, std::span<const IntersectionSpec> specs) {
  if (specs.empty()) throw ShapeError("plan must have at least one intersection");
  std::size_t need = 0;
  for (const auto& s : specs) need += s.phases.size();
  if (theta.size() != need) {
    throw ShapeError("parameter vector has " + std::to_string(theta.size()) +
                     " entries, specs need " + std::to_string(need));
  }
  std::vector<std::vector<int>> rows(specs.size());
  std::size_t k = 0;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    rows[j].reserve(specs[j].phases.size());
    for (std::size_t i = 0; i < specs[j].phases.size(); ++i)
      rows[j].push_back(static_cast<int>(std::lround(theta[k++])));
  }
  return rows;
}

}  // namespace

SignalPlan unflatten(std::span<const double> theta,
                     std::span<const IntersectionSpec> specs) {
  return SignalPlan{unflatten_rows(theta, specs)};
}

PlanDelta unflatten_delta(std::span<const double> theta,
                          std::span<const IntersectionSpec> specs) {
  return PlanDelta{unflatten_rows(theta, specs)};
}

PhaseBox spec_box(std::span<const IntersectionSpec> specs, int step_len) {
  PhaseBox box;
  box.lo.resize(specs.size());
  box.hi.resize(specs.size());
  for (std::size_t j = 0; j < specs.size(); ++j) {
    for (const auto& ph : specs[j].phases) {
      box.lo[j].push_back(ceil_div(ph.min_len, step_len) * step_len);
      box.hi[j].push_back(floor_div(ph.max_len, step_len) * step_len);
    }
  }
  return box;
}

int anchor_intersection(std::span<const IntersectionSpec> specs) {
  if (specs.empty()) throw ShapeError("no intersections");
  int best = 0;
  for (std::size_t j = 1; j < specs.size(); ++j)
    if (specs[j].phases.size() < specs[static_cast<std::size_t>(best)].phases.size())
      best = static_cast<int>(j);
  return best;
}

int round_to_step(double seconds, int step_len) {
  return static_cast<int>(std::lround(seconds / step_len)) * step_len;
}

SignalPlan repair_plan(const std::vector<std::vector<int>>& raw,
                       const PhaseBox& box, int target_cycle, int step_len) {
  if (raw.empty()) throw ShapeError("plan must have at least one intersection");
  if (raw.size() != box.lo.size() || raw.size() != box.hi.size())
    throw ShapeError("repair: plan and bounds disagree on intersection count");

  int cycle_lo = 0;
  int cycle_hi = 0;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    if (raw[j].size() != box.lo[j].size() || raw[j].size() != box.hi[j].size())
      throw ShapeError("repair: plan and bounds disagree on phase count");
    int lo = 0;
    int hi = 0;
    for (std::size_t i = 0; i < raw[j].size(); ++i) {
      if (box.lo[j][i] > box.hi[j][i]) {
        throw InfeasibleRepair("intersection " + std::to_string(j) + " phase " +
                               std::to_string(i) + " has an empty range");
      }
      lo += box.lo[j][i];
      hi += box.hi[j][i];
    }
    cycle_lo = j == 0 ? lo : std::max(cycle_lo, lo);
    cycle_hi = j == 0 ? hi : std::min(cycle_hi, hi);
  }
  if (cycle_lo > cycle_hi) {
    throw InfeasibleRepair("no common cycle length: intersections need at least " +
                           std::to_string(cycle_lo) + " s but allow at most " +
                           std::to_string(cycle_hi) + " s");
  }
  const int target =
      std::clamp(round_to_step(target_cycle, step_len), cycle_lo, cycle_hi);

  SignalPlan out;
  out.lengths.resize(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) {
    auto& row = out.lengths[j];
    row.resize(raw[j].size());
    int sum = 0;
    for (std::size_t i = 0; i < raw[j].size(); ++i) {
      row[i] = std::clamp(round_to_step(raw[j][i], step_len), box.lo[j][i],
                          box.hi[j][i]);
      sum += row[i];
    }
    int residual = target - sum;
    for (std::size_t k = row.size(); k-- > 0 && residual != 0;) {
      const int room = residual > 0 ? box.hi[j][k] - row[k] : box.lo[j][k] - row[k];
      const int adj = residual > 0 ? std::min(residual, room) : std::max(residual, room);
      row[k] += adj;
      residual -= adj;
    }
    if (residual != 0) {
      // Unreachable while target lies in [cycle_lo, cycle_hi].
      throw InfeasibleRepair("intersection " + std::to_string(j) +
                             " cannot reach cycle " + std::to_string(target));
    }
  }
  return out;
}

SignalPlan apply_delta(const SignalPlan& plan, const PlanDelta& delta,
                       std::span<const IntersectionSpec> specs, int step_len) {
  check_shape(plan.lengths, specs, "plan");
  check_shape(delta.deltas, specs, "delta");
  std::vector<std::vector<int>> raw = plan.lengths;
  for (std::size_t j = 0; j < raw.size(); ++j)
    for (std::size_t i = 0; i < raw[j].size(); ++i) raw[j][i] += delta.deltas[j][i];
  const int anchor = anchor_intersection(specs);
  const int target = plan.cycle_length(anchor) + delta.sum(anchor);
  return repair_plan(raw, spec_box(specs, step_len), target, step_len);
}

PlanDelta difference(const SignalPlan& from, const SignalPlan& to) {
  if (from.lengths.size() != to.lengths.size())
    throw ShapeError("difference: intersection counts differ");
  PlanDelta d;
  d.deltas.resize(from.lengths.size());
  for (std::size_t j = 0; j < from.lengths.size(); ++j) {
    if (from.lengths[j].size() != to.lengths[j].size())
      throw ShapeError("difference: phase counts differ");
    for (std::size_t i = 0; i < from.lengths[j].size(); ++i)
      d.deltas[j].push_back(to.lengths[j][i] - from.lengths[j][i]);
  }
  return d;
}

void to_json(nlohmann::json& j, const SignalPlan& plan) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < plan.lengths.size(); ++k)
    rows.push_back({{"id", k}, {"phases", plan.lengths[k]}});
  j = {{"intersections", rows}};
}

void from_json(const nlohmann::json& j, SignalPlan& plan) {
  const auto& rows = j.at("intersections");
  plan.lengths.assign(rows.size(), {});
  for (const auto& row : rows) {
    const auto id = row.at("id").get<std::size_t>();
    if (id >= plan.lengths.size())
      throw ConfigError("plan intersection id " + std::to_string(id) + " out of range");
    plan.lengths[id] = row.at("phases").get<std::vector<int>>();
  }
}

SignalPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plan file " + path.string());
  try {
    return nlohmann::json::parse(in).get<SignalPlan>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("plan file " + path.string() + ": " + e.what());
  }
}

SignalPlan uniform_plan(std::span<const IntersectionSpec> specs, int cycle,
                        int step_len) {
  SignalPlan plan;
  for (const auto& s : specs) {
    const int n = s.num_phases();
    const int units = cycle / step_len;
    std::vector<int> row(static_cast<std::size_t>(n), units / n * step_len);
    for (int i = 0; i < units % n; ++i) row[static_cast<std::size_t>(i)] += step_len;
    plan.lengths.push_back(std::move(row));
  }
  return plan;
}

}  // namespace signalopt
