#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "signalopt/plan.hpp"

namespace signalopt {

struct LinkSpec {
  int id = 0;
  std::string name;
  int capacity = 0;      // vehicles (queued + travelling)
  int travel_steps = 0;  // sampling steps from link entry to stop line
};

struct MovementSpec {
  int id = 0;
  int from_link = 0;
  std::optional<int> to_link;  // nullopt: leaves the network
  int saturation_flow = 0;     // vehicles per sampling step
};

// Arrival rate (vehicles per sampling step) on an entry link. With
// period_steps == 0 the first breakpoint's rate holds forever; otherwise the
// piecewise-constant profile repeats every period_steps.
struct DemandSpec {
  int link = 0;
  int period_steps = 0;
  std::vector<std::pair<int, double>> profile;  // (start step, rate), sorted

  double rate_at(std::int64_t clock) const;
};

struct TurnSplit {
  int link = 0;
  std::vector<std::pair<int, double>> ratios;  // (movement id, share)
};

enum class ArrivalMode { Deterministic, Poisson };

struct NetworkSpec {
  std::vector<IntersectionSpec> intersections;
  std::vector<LinkSpec> links;
  std::vector<MovementSpec> movements;
  std::vector<DemandSpec> demand;
  std::vector<TurnSplit> turn_ratios;
  int sampling_len = 1;  // seconds
  int horizon = 1;       // control cycles
  std::uint64_t seed = 0;
  ArrivalMode arrivals = ArrivalMode::Deterministic;
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

NetworkSpec load_network_spec(const std::filesystem::path& path);

// Phases whose max_len was left unset (0) get max_len = cycle.
void apply_default_phase_bounds(NetworkSpec& spec, int cycle);

// Validated NetworkSpec plus the lookup tables the simulator needs.
// Immutable after construction and safe to share between threads.
class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  std::span<const IntersectionSpec> intersections() const {
    return spec_.intersections;
  }
  int num_intersections() const {
    return static_cast<int>(spec_.intersections.size());
  }
  int num_links() const { return static_cast<int>(spec_.links.size()); }
  int sampling_len() const { return spec_.sampling_len; }

  // Intersection whose stop line terminates `link`.
  int link_intersection(int link) const { return link_node_[idx(link)]; }
  const std::vector<int>& incoming_links(int intersection) const {
    return incoming_[idx(intersection)];
  }
  // Outgoing movements of a link, in the order used for per-movement queues.
  const std::vector<int>& link_movements(int link) const {
    return link_moves_[idx(link)];
  }
  const std::vector<double>& link_turn_shares(int link) const {
    return link_shares_[idx(link)];
  }
  int movement_slot(int movement) const { return move_slot_[idx(movement)]; }
  const MovementSpec& movement(int id) const { return spec_.movements[idx(id)]; }
  const LinkSpec& link(int id) const { return spec_.links[idx(id)]; }

  // Links with external demand, paired with their DemandSpec.
  const std::vector<int>& entry_links() const { return entry_links_; }
  double demand_rate(int link, std::int64_t clock) const;

  // Offset of intersection j's incoming links in the joint queue vector.
  int joint_offset(int intersection) const { return joint_offset_[idx(intersection)]; }
  int joint_size() const { return joint_size_; }

  // Stable 64-bit digest of the spec's canonical JSON form.
  std::uint64_t hash() const { return hash_; }

 private:
  static std::size_t idx(int i) { return static_cast<std::size_t>(i); }

  NetworkSpec spec_;
  std::vector<int> link_node_;
  std::vector<std::vector<int>> incoming_;
  std::vector<std::vector<int>> link_moves_;
  std::vector<std::vector<double>> link_shares_;
  std::vector<int> move_slot_;
  std::vector<int> entry_links_;
  std::vector<int> demand_index_;  // per link, -1 if no demand
  std::vector<int> joint_offset_;
  int joint_size_ = 0;
  std::uint64_t hash_ = 0;
};

// FNV-1a over bytes; used for config and spec digests.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex_digest(std::uint64_t h);

}  // namespace signalopt
