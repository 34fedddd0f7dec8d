#include "signalopt/es.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <thread>

#include "signalopt/error.hpp"
#include "signalopt/simulator.hpp"

namespace signalopt {

namespace {

std::size_t at(int i) { return static_cast<std::size_t>(i); }

int gaussian_step(double stddev, int step_len, std::mt19937_64& rng) {
  if (stddev <= 0.0) return 0;
  std::normal_distribution<double> dist(0.0, stddev);
  return round_to_step(dist(rng), step_len);
}

// Shared tail of both sampling procedures: the anchor's phases get clipped
// draws, every other intersection draws all but its last phase and balances
// the last one to the anchor's sum, then the whole plan is repaired.
PlanDelta constrained_sample(const SignalPlan& plan,
                             std::span<const IntersectionSpec> specs, int anchor,
                             double anchor_std, const std::vector<double>& other_std,
                             int step_len, std::mt19937_64& rng) {
  const auto report = validate_plan(plan, specs, step_len);
  if (!report.ok()) throw Error("perturbation of invalid plan: " + report.summary());
  const PhaseBox box = spec_box(specs, step_len);

  std::vector<std::vector<int>> raw = plan.lengths;
  int anchor_sum = 0;
  auto& arow = raw[at(anchor)];
  for (std::size_t i = 0; i < arow.size(); ++i) {
    const int t = arow[i];
    const int moved = std::clamp(t + gaussian_step(anchor_std, step_len, rng),
                                 box.lo[at(anchor)][i], box.hi[at(anchor)][i]);
    anchor_sum += moved - t;
    arow[i] = moved;
  }
  for (std::size_t k = 0; k < raw.size(); ++k) {
    if (static_cast<int>(k) == anchor) continue;
    auto& row = raw[k];
    int partial = 0;
    for (std::size_t i = 0; i + 1 < row.size(); ++i) {
      const int d = gaussian_step(other_std[k], step_len, rng);
      row[i] += d;
      partial += d;
    }
    row.back() += anchor_sum - partial;
  }
  const SignalPlan repaired =
      repair_plan(raw, box, plan.cycle_length(anchor) + anchor_sum, step_len);
  return difference(plan, repaired);
}

}  // namespace

void EsConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("es: sigma must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("es: learning_rate must be > 0");
  if (pairs_per_generation < 1) throw ConfigError("es: pairs_per_generation must be >= 1");
  if (generations < 1) throw ConfigError("es: generations must be >= 1");
  if (warmup_cycles < 0 || measured_cycles < 1)
    throw ConfigError("es: need warmup_cycles >= 0 and measured_cycles >= 1");
  if (threads < 1) throw ConfigError("es: threads must be >= 1");
}

void to_json(nlohmann::json& j, const EsConfig& c) {
  j = {{"sigma", c.sigma},
       {"learning_rate", c.learning_rate},
       {"pairs_per_generation", c.pairs_per_generation},
       {"generations", c.generations},
       {"scheme", c.scheme == PerturbationScheme::LeastPhases ? "least_phases"
                                                               : "conditioned_variance"},
       {"seed", c.seed},
       {"rank_shaping", c.rank_shaping},
       {"warmup_cycles", c.warmup_cycles},
       {"measured_cycles", c.measured_cycles},
       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, EsConfig& c) {
  c = EsConfig{};
  c.sigma = j.value("sigma", c.sigma);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.pairs_per_generation = j.value("pairs_per_generation", c.pairs_per_generation);
  c.generations = j.value("generations", c.generations);
  const std::string scheme = j.value("scheme", std::string("least_phases"));
  if (scheme == "least_phases") c.scheme = PerturbationScheme::LeastPhases;
  else if (scheme == "conditioned_variance") c.scheme = PerturbationScheme::ConditionedVariance;
  else throw ConfigError("es: unknown scheme '" + scheme + "'");
  c.seed = j.value("seed", c.seed);
  c.rank_shaping = j.value("rank_shaping", c.rank_shaping);
  c.warmup_cycles = j.value("warmup_cycles", c.warmup_cycles);
  c.measured_cycles = j.value("measured_cycles", c.measured_cycles);
  c.threads = j.value("threads", c.threads);
}

PlanDelta sample_delta_least_phases(const SignalPlan& plan,
                                    std::span<const IntersectionSpec> specs,
                                    double sigma, int step_len,
                                    std::mt19937_64& rng) {
  const int anchor = anchor_intersection(specs);
  const std::vector<double> other(specs.size(), sigma);
  return constrained_sample(plan, specs, anchor, sigma, other, step_len, rng);
}

PlanDelta sample_delta_conditioned_variance(const SignalPlan& plan,
                                            std::span<const IntersectionSpec> specs,
                                            double sigma, int step_len,
                                            std::mt19937_64& rng) {
  if (specs.empty()) throw ShapeError("no intersections");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(specs.size()) - 1);
  const int anchor = pick(rng);
  std::vector<double> other;
  for (const auto& s : specs) other.push_back(sigma / s.num_phases());
  const double anchor_std =
      sigma / std::sqrt(static_cast<double>(specs[at(anchor)].num_phases()));
  return constrained_sample(plan, specs, anchor, anchor_std, other, step_len, rng);
}

PlanDelta sample_delta(PerturbationScheme scheme, const SignalPlan& plan,
                       std::span<const IntersectionSpec> specs, double sigma,
                       int step_len, std::mt19937_64& rng) {
  return scheme == PerturbationScheme::LeastPhases
             ? sample_delta_least_phases(plan, specs, sigma, step_len, rng)
             : sample_delta_conditioned_variance(plan, specs, sigma, step_len, rng);
}

std::pair<SignalPlan, SignalPlan> antithetic_pair(const PlanDelta& delta,
                                                  const SignalPlan& plan,
                                                  std::span<const IntersectionSpec> specs,
                                                  int step_len) {
  PlanDelta mirrored = delta;
  for (auto& row : mirrored.deltas)
    for (int& d : row) d = -d;
  return {apply_delta(plan, delta, specs, step_len),
          apply_delta(plan, mirrored, specs, step_len)};
}

std::vector<double> rank_shape(std::span<const double> fitness) {
  const std::size_t m = fitness.size();
  if (m < 2) throw Error("rank_shape needs at least two fitness values");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
  std::vector<double> u(m);
  for (std::size_t lo = 0; lo < m;) {
    std::size_t hi = lo;
    while (hi + 1 < m && fitness[order[hi + 1]] == fitness[order[lo]]) ++hi;
    const double mean_rank = 0.5 * static_cast<double>(lo + hi);
    for (std::size_t k = lo; k <= hi; ++k)
      u[order[k]] = mean_rank / static_cast<double>(m - 1) - 0.5;
    lo = hi + 1;
  }
  return u;
}

std::vector<double> es_step(std::span<const double> theta,
                            std::span<const std::vector<double>> eps,
                            std::span<const double> utilities, double alpha,
                            double sigma) {
  if (eps.size() != utilities.size() || eps.empty())
    throw ShapeError("es_update: need one utility per perturbation");
  std::vector<double> out(theta.begin(), theta.end());
  const double scale = alpha / (static_cast<double>(eps.size()) * sigma);
  for (std::size_t k = 0; k < eps.size(); ++k) {
    if (eps[k].size() != theta.size()) throw ShapeError("es_update: perturbation size mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] += scale * utilities[k] * eps[k][i];
  }
  return out;
}

SignalPlan es_update(const SignalPlan& theta, std::span<const PlanDelta> deltas,
                     std::span<const double> utilities, double alpha, double sigma,
                     std::span<const IntersectionSpec> specs, int step_len) {
  std::vector<std::vector<double>> eps;
  eps.reserve(deltas.size());
  for (const auto& d : deltas) eps.push_back(flatten(d));
  const auto flat = flatten(theta);
  const auto moved = es_step(flat, eps, utilities, alpha, sigma);

  std::vector<std::vector<int>> raw(specs.size());
  std::size_t k = 0;
  const int anchor = anchor_intersection(specs);
  double anchor_cycle = 0.0;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    for (std::size_t i = 0; i < specs[j].phases.size(); ++i, ++k) {
      raw[j].push_back(round_to_step(moved[k], step_len));
      if (static_cast<int>(j) == anchor) anchor_cycle += moved[k];
    }
  }
  return repair_plan(raw, spec_box(specs, step_len), round_to_step(anchor_cycle, step_len),
                     step_len);
}

EsResult run_es(const SignalPlan& init, std::span<const IntersectionSpec> specs,
                int step_len, const EsConfig& config, const FitnessFn& fitness) {
  config.validate();
  const auto report = validate_plan(init, specs, step_len);
  if (!report.ok()) throw Error("run_es: initial plan invalid: " + report.summary());

  std::mt19937_64 rng(config.seed);
  EsResult result;
  result.best_fitness = -std::numeric_limits<double>::infinity();
  SignalPlan theta = init;
  const int n = 2 * config.pairs_per_generation;

  for (int g = 0; g < config.generations; ++g) {
    std::vector<SignalPlan> members;
    std::vector<PlanDelta> eps;
    members.reserve(at(n));
    for (int p = 0; p < config.pairs_per_generation; ++p) {
      const PlanDelta d = sample_delta(config.scheme, theta, specs, config.sigma, step_len, rng);
      auto [plus, minus] = antithetic_pair(d, theta, specs, step_len);
      eps.push_back(difference(theta, plus));
      eps.push_back(difference(theta, minus));
      members.push_back(std::move(plus));
      members.push_back(std::move(minus));
    }

    std::vector<double> fit(at(n), 0.0);
    if (config.threads == 1) {
      for (int k = 0; k < n; ++k) fit[at(k)] = fitness(members[at(k)]);
    } else {
      std::vector<std::thread> pool;
      const int workers = std::min(config.threads, n);
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (int k = w; k < n; k += workers) fit[at(k)] = fitness(members[at(k)]);
        });
      }
      for (auto& t : pool) t.join();
    }
    result.queries += n;

    GenerationRecord rec;
    rec.generation = g;
    rec.best_fitness = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      rec.best_fitness = std::max(rec.best_fitness, fit[at(k)]);
      if (fit[at(k)] > result.best_fitness) {
        result.best_fitness = fit[at(k)];
        result.best_plan = members[at(k)];
      }
    }
    rec.mean_fitness = std::accumulate(fit.begin(), fit.end(), 0.0) / n;

    const std::vector<double> u = config.rank_shaping ? rank_shape(fit) : fit;
    theta = es_update(theta, eps, u, config.learning_rate, config.sigma, specs, step_len);
    rec.plan = theta;
    rec.queries = result.queries;
    result.history.push_back(std::move(rec));
  }
  return result;
}

EsResult run_es(const SignalPlan& init, const Network& net, const EsConfig& config) {
  const FitnessFn fitness = [&](const SignalPlan& p) {
    return evaluate_plan(p, net, config.warmup_cycles, config.measured_cycles);
  };
  return run_es(init, net.intersections(), net.sampling_len(), config, fitness);
}

}  // namespace signalopt
