#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "signalopt/batch.hpp"
#include "signalopt/mlp.hpp"
#include "signalopt/network.hpp"
#include "signalopt/plan.hpp"
#include "signalopt/simulator.hpp"

namespace signalopt {

struct MaddpgConfig {
  double gamma = 0.95;
  double tau = 0.01;
  int delta_bound = 4;  // seconds
  double alpha_src = 0.5;
  Quartile c_quartile = Quartile::Q3;
  int batch_size = 64;
  double critic_lr = 1e-3;
  double actor_lr = 1e-4;
  double truncated_lr = 1e-3;
  int iterations = 2000;
  int critic_warmup = 200;        // iterations before the actors start moving
  double derived_fraction = 0.25; // share of derived two-phase pairs per critic minibatch
  std::vector<int> hidden = {64, 64};
  double queue_scale = 20.0;      // vehicles per unit of observation feature
  std::uint64_t seed = 0;
  bool bounded_action = true;
  bool batch_augmentation = true;
  bool src = true;
  int log_every = 50;
  int eval_every = 0;  // 0: no evaluation during training

  void validate(int sampling_len) const;
};

void to_json(nlohmann::json& j, const MaddpgConfig& c);
void from_json(const nlohmann::json& j, MaddpgConfig& c);

// Shape information the trainer is allowed to see: no simulator access.
struct ProblemShape {
  std::vector<IntersectionSpec> specs;
  int sampling_len = 1;
  std::vector<int> incoming_counts;  // incoming links per intersection

  static ProblemShape of(const Network& net);
  int num_intersections() const { return static_cast<int>(specs.size()); }
  int total_phases() const;
};

// Feature layout shared by actors, critics and the truncated value net.
// Local observation of j: incoming queues / queue_scale, then
// (phase length - base) / delta_bound. Joint observation: locals
// concatenated. Joint action: (plan - base) / delta_bound.
class JointEncoder {
 public:
  JointEncoder(ProblemShape shape, SignalPlan base, bool bounded, int delta_bound,
               double queue_scale);

  const ProblemShape& shape() const { return shape_; }
  const SignalPlan& base() const { return base_; }
  int obs_size(int j) const;
  int obs_offset(int j) const { return obs_offset_[static_cast<std::size_t>(j)]; }
  int joint_obs_size() const { return joint_obs_; }
  int action_size(int j) const { return shape_.specs[static_cast<std::size_t>(j)].num_phases(); }
  int action_offset(int j) const { return act_offset_[static_cast<std::size_t>(j)]; }
  int joint_action_size() const { return joint_act_; }

  Eigen::VectorXd local(const Observation& o) const;
  Eigen::VectorXd joint(std::span<const Observation> obs) const;
  Eigen::VectorXd joint(std::span<const double> queues, const SignalPlan& plan_in_effect) const;
  Eigen::VectorXd action(const SignalPlan& plan) const;

  // Continuous map from actor output o in (-1, 1) to the action encoding of
  // phase (j, i): offset + scale * o. Bounded mode: offset 0, scale 1.
  double action_offset_value(int j, int i) const;
  double action_scale(int j, int i) const;

 private:
  ProblemShape shape_;
  SignalPlan base_;
  bool bounded_;
  int delta_bound_;
  double queue_scale_;
  std::vector<int> obs_offset_;
  std::vector<int> act_offset_;
  int joint_obs_ = 0;
  int joint_act_ = 0;
  PhaseBox box_;
};

// Bounded-action decoding. Delta = round(output * delta_bound) to sampling
// multiples (|delta| <= delta_bound), then repair inside base +- delta_bound.
// Returns the pre-repair delta and the executed plan.
std::pair<PlanDelta, SignalPlan> decode_bounded_action(
    const std::vector<std::vector<double>>& outputs, const SignalPlan& base,
    int delta_bound, std::span<const IntersectionSpec> specs, int step_len);

// Unbounded decoding: output in (-1, 1) maps linearly onto [min_len, max_len].
SignalPlan decode_full_action(const std::vector<std::vector<double>>& outputs,
                              std::span<const IntersectionSpec> specs, int step_len);

// Decentralized actors. propose() only ever sees the intersection's own
// Observation; assemble() is the joint repair step.
struct DecentralizedPolicy {
  std::vector<Mlp> actors;
  SignalPlan base;
  bool bounded = true;
  int delta_bound = 4;
  double queue_scale = 20.0;
  ProblemShape shape;

  std::vector<double> act(const Observation& own) const;
  SignalPlan assemble(const std::vector<std::vector<double>>& outputs) const;
};

struct PolicyEvaluation {
  double waiting = 0.0;  // mean waiting time per step over measured cycles
  std::vector<SignalPlan> plans;  // executed plan of every cycle
};

// Runs warmup + measured cycles from an empty network at clock 0.
PolicyEvaluation evaluate_policies(const DecentralizedPolicy& policy, const Network& net,
                                   int warmup, int measured, std::uint64_t seed);

// Exact-reward check helper: sum_i (b_i / l(a)) * qbar(i) over the phases of
// `intersection`, with b the base plan and l(a) the executed cycle in steps.
double truncated_reward_estimate(const TransitionRecord& record, int intersection,
                                 const SignalPlan& base,
                                 const std::function<double(int phase)>& qbar);

struct HistoryRow {
  int iteration = 0;
  double critic_loss = 0.0;
  double actor_objective = 0.0;
  double truncated_loss = 0.0;
  std::optional<double> eval_waiting;  // reporting only, never used for training
};

// Centralized-critic, decentralized-actor trainer over a fixed batch.
class MaddpgTrainer {
 public:
  MaddpgTrainer(const BatchDataset& batch, SignalPlan base, ProblemShape shape,
                MaddpgConfig config);

  const JointEncoder& encoder() const { return enc_; }
  const MaddpgConfig& config() const { return cfg_; }
  int num_records() const { return static_cast<int>(records_.size()); }
  int num_derived() const { return static_cast<int>(derived_.size()); }
  double reward_scale() const { return reward_scale_; }
  const std::vector<double>& clip_levels() const { return clip_; }

  Mlp& critic(int k) { return critics_[static_cast<std::size_t>(k)]; }
  Mlp& critic_target(int k) { return critic_targets_[static_cast<std::size_t>(k)]; }
  Mlp& actor(int j) { return actors_[static_cast<std::size_t>(j)]; }
  Mlp& truncated_net() { return qbar_; }

  // Pool entries [0, num_records) are records, the rest derived pairs.
  std::vector<int> sample_critic_batch(std::mt19937_64& rng) const;
  std::vector<int> sample_record_batch(std::mt19937_64& rng) const;

  // Immediate reward term for agent k (normalized units).
  Eigen::VectorXd immediate_rewards(int agent, std::span<const int> pool) const;
  // y = r + gamma * Q'_k(x', mu'(x')).
  Eigen::VectorXd critic_targets(int agent, std::span<const int> pool) const;

  double critic_update(int agent, std::span<const int> pool);
  double actor_update(int agent, std::span<const int> records);
  double truncated_update(std::span<const int> samples);
  void soft_update_targets();

  // Mean Q_k(x, a) with agent k's action replaced by its current actor.
  double actor_objective(int agent, std::span<const int> records) const;
  MlpGradients actor_gradient(int agent, std::span<const int> records) const;

  int num_truncated_samples() const { return static_cast<int>(trunc_targets_.cols()); }

  DecentralizedPolicy policy() const;

 private:
  struct Columns {
    Eigen::MatrixXd x, a, xn;
    std::vector<Eigen::MatrixXd> next_local;
    Eigen::VectorXd rg;
    Eigen::MatrixXd rl;
  };
  Columns gather(std::span<const int> pool) const;
  // Linearized repair on encoded joint actions: every non-anchor
  // intersection's last phase absorbs the difference between the anchor's
  // delta sum and its own. The gradient map is the transpose.
  void linear_repair(Eigen::MatrixXd& a) const;
  Eigen::MatrixXd linear_repair_grad(const Eigen::MatrixXd& g) const;
  Eigen::MatrixXd with_actor(int agent, const Eigen::MatrixXd& a, const Eigen::MatrixXd& out) const;
  Eigen::MatrixXd target_actions(const std::vector<Eigen::MatrixXd>& next_local) const;

  MaddpgConfig cfg_;
  ProblemShape shape_;
  JointEncoder enc_;
  std::vector<TransitionRecord> records_;
  std::vector<DerivedPair> derived_;
  double reward_scale_ = 1.0;
  std::vector<double> clip_;

  Eigen::MatrixXd rec_x_, rec_a_, rec_xn_;
  std::vector<Eigen::MatrixXd> rec_local_, rec_next_local_;
  Eigen::VectorXd rec_rg_;
  Eigen::MatrixXd rec_rl_;
  // Truncated-value inputs: column r * P + code is record r, phase code.
  Eigen::MatrixXd trunc_in_;
  Eigen::MatrixXd trunc_targets_;  // 2 x (R * P): global, local
  Eigen::MatrixXd trunc_weight_;   // P x R: b_i / l(a)
  std::vector<int> code_owner_;    // phase code -> intersection
  int anchor_ = 0;

  std::vector<Mlp> critics_, critic_targets_, actors_, actor_targets_;
  std::vector<OptimizerState> critic_opt_, actor_opt_;
  Mlp qbar_;
  OptimizerState qbar_opt_;
};

struct TrainResult {
  DecentralizedPolicy policy;
  std::vector<HistoryRow> history;
  long eval_calls = 0;
  double reward_scale = 1.0;
  std::vector<double> clip_levels;
};

using PolicyEvaluator = std::function<double(const DecentralizedPolicy&)>;

// Trains only from `batch`. `evaluator`, when set and config.eval_every > 0,
// is called for reporting; its results never feed back into training.
TrainResult train_offline(const BatchDataset& batch, const SignalPlan& base,
                          const ProblemShape& shape, const MaddpgConfig& config,
                          const PolicyEvaluator& evaluator = {});

}  // namespace signalopt
