#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "signalopt/network.hpp"
#include "signalopt/plan.hpp"

namespace signalopt {

enum class PerturbationScheme {
  LeastPhases,          // anchor = intersection with the fewest phases
  ConditionedVariance,  // random anchor, per-intersection scaled variance
};

struct EsConfig {
  double sigma = 2.0;          // seconds
  double learning_rate = 1.0;  // alpha
  int pairs_per_generation = 10;
  int generations = 30;
  PerturbationScheme scheme = PerturbationScheme::LeastPhases;
  std::uint64_t seed = 0;
  bool rank_shaping = true;  // false: raw fitness in the update
  int warmup_cycles = 2;
  int measured_cycles = 10;
  int threads = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const EsConfig& c);
void from_json(const nlohmann::json& j, EsConfig& c);

struct GenerationRecord {
  int generation = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  SignalPlan plan;  // search mean after this generation's update
  long queries = 0;
};

struct EsResult {
  SignalPlan best_plan;
  double best_fitness = 0.0;
  std::vector<GenerationRecord> history;
  long queries = 0;
};

PlanDelta sample_delta_least_phases(const SignalPlan& plan,
                                    std::span<const IntersectionSpec> specs,
                                    double sigma, int step_len,
                                    std::mt19937_64& rng);

PlanDelta sample_delta_conditioned_variance(const SignalPlan& plan,
                                            std::span<const IntersectionSpec> specs,
                                            double sigma, int step_len,
                                            std::mt19937_64& rng);

PlanDelta sample_delta(PerturbationScheme scheme, const SignalPlan& plan,
                       std::span<const IntersectionSpec> specs, double sigma,
                       int step_len, std::mt19937_64& rng);

// (plan + delta, plan - delta), each clipped and repaired.
std::pair<SignalPlan, SignalPlan> antithetic_pair(const PlanDelta& delta,
                                                  const SignalPlan& plan,
                                                  std::span<const IntersectionSpec> specs,
                                                  int step_len);

// Centered ranks: the k-th smallest of m values maps to k/(m-1) - 1/2, ties
// share the mean of their ranks.
std::vector<double> rank_shape(std::span<const double> fitness);

// theta + alpha / (n sigma) * sum_k u_k eps_k, before any rounding.
std::vector<double> es_step(std::span<const double> theta,
                            std::span<const std::vector<double>> eps,
                            std::span<const double> utilities, double alpha,
                            double sigma);

// es_step followed by rounding to step_len multiples and repair.
SignalPlan es_update(const SignalPlan& theta, std::span<const PlanDelta> deltas,
                     std::span<const double> utilities, double alpha, double sigma,
                     std::span<const IntersectionSpec> specs, int step_len);

using FitnessFn = std::function<double(const SignalPlan&)>;

// Core loop against an arbitrary fitness function. `fitness` must be safe to
// call concurrently when config.threads > 1.
EsResult run_es(const SignalPlan& init, std::span<const IntersectionSpec> specs,
                int step_len, const EsConfig& config, const FitnessFn& fitness);

// Fitness = evaluate_plan(plan, net, warmup_cycles, measured_cycles).
EsResult run_es(const SignalPlan& init, const Network& net, const EsConfig& config);

}  // namespace signalopt
