#include "signalopt/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "signalopt/error.hpp"

namespace signalopt {

double DemandSpec::rate_at(std::int64_t clock) const {
  if (profile.empty()) return 0.0;
  if (period_steps <= 0) return profile.front().second;
  const std::int64_t t = clock % period_steps;
  double rate = profile.front().second;
  for (const auto& [start, r] : profile) {
    if (start <= t) rate = r;
    else break;
  }
  return rate;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
  nlohmann::json inters = nlohmann::json::array();
  for (const auto& s : spec.intersections) {
    nlohmann::json phases = nlohmann::json::array();
    for (const auto& p : s.phases)
      phases.push_back({{"min_len", p.min_len}, {"max_len", p.max_len},
                        {"movements", p.movements}});
    inters.push_back({{"id", s.id}, {"phases", phases}});
  }
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : spec.links)
    links.push_back({{"id", l.id}, {"name", l.name}, {"capacity", l.capacity},
                     {"travel_steps", l.travel_steps}});
  nlohmann::json moves = nlohmann::json::array();
  for (const auto& m : spec.movements) {
    nlohmann::json mj = {{"id", m.id}, {"from_link", m.from_link},
                         {"saturation_flow", m.saturation_flow}};
    mj["to_link"] = m.to_link ? nlohmann::json(*m.to_link) : nlohmann::json(nullptr);
    moves.push_back(mj);
  }
  nlohmann::json demand = nlohmann::json::array();
  for (const auto& d : spec.demand) {
    nlohmann::json prof = nlohmann::json::array();
    for (const auto& [s, r] : d.profile) prof.push_back({s, r});
    demand.push_back({{"link", d.link}, {"period_steps", d.period_steps},
                      {"profile", prof}});
  }
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : spec.turn_ratios) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& [m, share] : t.ratios) r.push_back({m, share});
    turns.push_back({{"link", t.link}, {"movements", r}});
  }
  j = {{"intersections", inters},
       {"links", links},
       {"movements", moves},
       {"demand", demand},
       {"turn_ratios", turns},
       {"sampling_len", spec.sampling_len},
       {"horizon", spec.horizon},
       {"seed", spec.seed},
       {"arrivals", spec.arrivals == ArrivalMode::Poisson ? "poisson" : "deterministic"}};
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
  spec = NetworkSpec{};
  spec.sampling_len = j.at("sampling_len").get<int>();
  spec.horizon = j.value("horizon", 1);
  spec.seed = j.value("seed", std::uint64_t{0});
  const std::string mode = j.value("arrivals", std::string("deterministic"));
  if (mode == "deterministic") spec.arrivals = ArrivalMode::Deterministic;
  else if (mode == "poisson") spec.arrivals = ArrivalMode::Poisson;
  else throw ConfigError("unknown arrivals mode '" + mode + "'");

  for (const auto& ij : j.at("intersections")) {
    IntersectionSpec s;
    s.id = ij.at("id").get<int>();
    for (const auto& pj : ij.at("phases")) {
      PhaseSpec p;
      p.min_len = pj.value("min_len", 10);
      p.max_len = pj.value("max_len", 0);
      p.movements = pj.at("movements").get<std::vector<int>>();
      s.phases.push_back(std::move(p));
    }
    spec.intersections.push_back(std::move(s));
  }
  for (const auto& lj : j.at("links")) {
    spec.links.push_back({lj.at("id").get<int>(), lj.value("name", std::string{}),
                          lj.at("capacity").get<int>(),
                          lj.value("travel_steps", 0)});
  }
  for (const auto& mj : j.at("movements")) {
    MovementSpec m;
    m.id = mj.at("id").get<int>();
    m.from_link = mj.at("from_link").get<int>();
    if (mj.contains("to_link") && !mj.at("to_link").is_null())
      m.to_link = mj.at("to_link").get<int>();
    m.saturation_flow = mj.at("saturation_flow").get<int>();
    spec.movements.push_back(m);
  }
  for (const auto& dj : j.value("demand", nlohmann::json::array())) {
    DemandSpec d;
    d.link = dj.at("link").get<int>();
    if (dj.contains("rate")) {
      d.profile.emplace_back(0, dj.at("rate").get<double>());
    } else {
      d.period_steps = dj.value("period_steps", 0);
      for (const auto& p : dj.at("profile"))
        d.profile.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
    }
    spec.demand.push_back(std::move(d));
  }
  for (const auto& tj : j.value("turn_ratios", nlohmann::json::array())) {
    TurnSplit t;
    t.link = tj.at("link").get<int>();
    for (const auto& r : tj.at("movements"))
      t.ratios.emplace_back(r.at(0).get<int>(), r.at(1).get<double>());
    spec.turn_ratios.push_back(std::move(t));
  }
}

NetworkSpec load_network_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open network file " + path.string());
  try {
    return nlohmann::json::parse(in).get<NetworkSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("network file " + path.string() + ": " + e.what());
  }
}

void apply_default_phase_bounds(NetworkSpec& spec, int cycle) {
  for (auto& s : spec.intersections)
    for (auto& p : s.phases)
      if (p.max_len == 0) p.max_len = cycle;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  const auto& S = spec_;
  auto fail = [](const std::string& msg) { throw ConfigError("network: " + msg); };

  if (S.sampling_len <= 0) fail("sampling_len must be positive");
  if (S.horizon <= 0) fail("horizon must be positive");
  if (S.intersections.empty()) fail("no intersections");

  const int L = static_cast<int>(S.links.size());
  const int M = static_cast<int>(S.movements.size());
  for (int i = 0; i < L; ++i) {
    const auto& l = S.links[idx(i)];
    if (l.id != i) fail("link ids must be 0..n-1 in order");
    if (l.capacity <= 0) fail("link " + std::to_string(i) + " capacity must be > 0");
    if (l.travel_steps < 0) fail("link " + std::to_string(i) + " travel_steps must be >= 0");
  }
  for (int m = 0; m < M; ++m) {
    const auto& mv = S.movements[idx(m)];
    if (mv.id != m) fail("movement ids must be 0..n-1 in order");
    if (mv.from_link < 0 || mv.from_link >= L)
      fail("movement " + std::to_string(m) + " has unknown from_link");
    if (mv.to_link && (*mv.to_link < 0 || *mv.to_link >= L))
      fail("movement " + std::to_string(m) + " has unknown to_link");
    if (mv.saturation_flow <= 0)
      fail("movement " + std::to_string(m) + " saturation_flow must be > 0");
  }

  // Each movement must be served by phases of exactly one intersection.
  std::vector<int> move_node(idx(M), -1);
  for (std::size_t j = 0; j < S.intersections.size(); ++j) {
    const auto& s = S.intersections[j];
    if (s.id != static_cast<int>(j)) fail("intersection ids must be 0..n-1 in order");
    if (s.phases.size() < 2) fail("intersection " + std::to_string(j) + " needs >= 2 phases");
    for (std::size_t i = 0; i < s.phases.size(); ++i) {
      const auto& p = s.phases[i];
      if (p.min_len <= 0 || p.min_len > p.max_len) {
        fail("intersection " + std::to_string(j) + " phase " + std::to_string(i) +
             " needs 0 < min_len <= max_len");
      }
      if (p.movements.empty())
        fail("intersection " + std::to_string(j) + " phase " + std::to_string(i) +
             " grants no movements");
      for (int m : p.movements) {
        if (m < 0 || m >= M) fail("phase references unknown movement " + std::to_string(m));
        auto& owner = move_node[idx(m)];
        if (owner != -1 && owner != static_cast<int>(j))
          fail("movement " + std::to_string(m) + " is served by two intersections");
        owner = static_cast<int>(j);
      }
    }
  }
  for (int m = 0; m < M; ++m)
    if (move_node[idx(m)] == -1) fail("movement " + std::to_string(m) + " is in no phase");

  link_node_.assign(idx(L), -1);
  link_moves_.assign(idx(L), {});
  link_shares_.assign(idx(L), {});
  move_slot_.assign(idx(M), -1);
  for (int m = 0; m < M; ++m) {
    const int l = S.movements[idx(m)].from_link;
    auto& node = link_node_[idx(l)];
    if (node != -1 && node != move_node[idx(m)])
      fail("link " + std::to_string(l) + " feeds two intersections");
    node = move_node[idx(m)];
    move_slot_[idx(m)] = static_cast<int>(link_moves_[idx(l)].size());
    link_moves_[idx(l)].push_back(m);
  }
  for (int l = 0; l < L; ++l)
    if (link_node_[idx(l)] == -1) fail("link " + std::to_string(l) + " has no movements");

  std::vector<bool> has_split(idx(L), false);
  for (const auto& t : S.turn_ratios) {
    if (t.link < 0 || t.link >= L) fail("turn_ratios reference unknown link");
    if (has_split[idx(t.link)]) fail("duplicate turn_ratios for link " + std::to_string(t.link));
    has_split[idx(t.link)] = true;
    auto& shares = link_shares_[idx(t.link)];
    shares.assign(link_moves_[idx(t.link)].size(), 0.0);
    double total = 0.0;
    for (const auto& [m, share] : t.ratios) {
      if (m < 0 || m >= M || S.movements[idx(m)].from_link != t.link)
        fail("turn ratio for link " + std::to_string(t.link) +
             " names a movement that does not leave it");
      if (share < 0.0) fail("negative turn ratio");
      shares[idx(move_slot_[idx(m)])] += share;
      total += share;
    }
    if (std::abs(total - 1.0) > 1e-9)
      fail("turn ratios for link " + std::to_string(t.link) + " sum to " +
           std::to_string(total));
  }
  for (int l = 0; l < L; ++l) {
    if (has_split[idx(l)]) continue;
    if (link_moves_[idx(l)].size() != 1)
      fail("link " + std::to_string(l) + " has several movements but no turn_ratios");
    link_shares_[idx(l)] = {1.0};
  }

  demand_index_.assign(idx(L), -1);
  for (std::size_t d = 0; d < S.demand.size(); ++d) {
    const auto& dem = S.demand[d];
    if (dem.link < 0 || dem.link >= L) fail("demand references unknown link");
    if (demand_index_[idx(dem.link)] != -1) fail("duplicate demand for a link");
    for (const auto& [start, rate] : dem.profile)
      if (rate < 0.0 || start < 0) fail("demand profile entries must be non-negative");
    demand_index_[idx(dem.link)] = static_cast<int>(d);
    entry_links_.push_back(dem.link);
  }
  std::sort(entry_links_.begin(), entry_links_.end());

  incoming_.assign(S.intersections.size(), {});
  for (int l = 0; l < L; ++l) incoming_[idx(link_node_[idx(l)])].push_back(l);
  joint_offset_.assign(S.intersections.size(), 0);
  for (std::size_t j = 0; j < S.intersections.size(); ++j) {
    joint_offset_[j] = joint_size_;
    joint_size_ += static_cast<int>(incoming_[j].size());
  }

  hash_ = fnv1a(nlohmann::json(S).dump());
}

double Network::demand_rate(int link, std::int64_t clock) const {
  const int d = demand_index_[idx(link)];
  return d < 0 ? 0.0 : spec_.demand[idx(d)].rate_at(clock);
}

}  // namespace signalopt
