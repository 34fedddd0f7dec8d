#include "signalopt/maddpg.hpp"

#include <algorithm>
#include <cmath>

#include "signalopt/error.hpp"

namespace signalopt {

namespace {

std::size_t at(int i) { return static_cast<std::size_t>(i); }

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

SignalPlan plan_in_effect(const std::vector<Observation>& obs) {
  SignalPlan p;
  for (const auto& o : obs) p.lengths.push_back(o.phase_lengths);
  return p;
}

void scale_gradients(MlpGradients& g, double s) {
  for (auto& l : g.layers) {
    l.weights *= s;
    l.bias *= s;
  }
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(std::string("training diverged: non-finite ") + what);
}

}  // namespace

void MaddpgConfig::validate(int sampling_len) const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("marl: gamma must be in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("marl: tau must be in (0, 1]");
  if (delta_bound <= 0 || sampling_len <= 0 || delta_bound % sampling_len != 0)
    throw ConfigError("marl: delta_bound must be a positive multiple of the sampling length");
  if (!(alpha_src >= 0.0 && alpha_src <= 1.0)) throw ConfigError("marl: alpha_src must be in [0, 1]");
  if (batch_size < 1) throw ConfigError("marl: batch_size must be >= 1");
  if (!(critic_lr > 0.0 && actor_lr > 0.0 && truncated_lr > 0.0))
    throw ConfigError("marl: learning rates must be > 0");
  if (iterations < 0 || critic_warmup < 0) throw ConfigError("marl: iterations and warmup must be >= 0");
  if (!(derived_fraction >= 0.0 && derived_fraction < 1.0))
    throw ConfigError("marl: derived_fraction must be in [0, 1)");
  for (int h : hidden)
    if (h < 1) throw ConfigError("marl: hidden layer sizes must be >= 1");
  if (!(queue_scale > 0.0)) throw ConfigError("marl: queue_scale must be > 0");
  if (log_every < 1 || eval_every < 0) throw ConfigError("marl: need log_every >= 1, eval_every >= 0");
}

void to_json(nlohmann::json& j, const MaddpgConfig& c) {
  j = {{"gamma", c.gamma},
       {"tau", c.tau},
       {"delta_bound", c.delta_bound},
       {"alpha_src", c.alpha_src},
       {"clip_quartile", c.c_quartile == Quartile::Q2 ? "q2" : "q3"},
       {"batch_size", c.batch_size},
       {"critic_lr", c.critic_lr},
       {"actor_lr", c.actor_lr},
       {"truncated_lr", c.truncated_lr},
       {"iterations", c.iterations},
       {"critic_warmup", c.critic_warmup},
       {"derived_fraction", c.derived_fraction},
       {"hidden", c.hidden},
       {"queue_scale", c.queue_scale},
       {"seed", c.seed},
       {"bounded_action", c.bounded_action},
       {"batch_augmentation", c.batch_augmentation},
       {"src", c.src},
       {"log_every", c.log_every},
       {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, MaddpgConfig& c) {
  c = MaddpgConfig{};
  c.gamma = j.value("gamma", c.gamma);
  c.tau = j.value("tau", c.tau);
  c.delta_bound = j.value("delta_bound", c.delta_bound);
  c.alpha_src = j.value("alpha_src", c.alpha_src);
  const std::string q = j.value("clip_quartile", std::string("q3"));
  if (q == "q2") c.c_quartile = Quartile::Q2;
  else if (q == "q3") c.c_quartile = Quartile::Q3;
  else throw ConfigError("marl: clip_quartile must be q2 or q3");
  c.batch_size = j.value("batch_size", c.batch_size);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  c.actor_lr = j.value("actor_lr", c.actor_lr);
  c.truncated_lr = j.value("truncated_lr", c.truncated_lr);
  c.iterations = j.value("iterations", c.iterations);
  c.critic_warmup = j.value("critic_warmup", c.critic_warmup);
  c.derived_fraction = j.value("derived_fraction", c.derived_fraction);
  c.hidden = j.value("hidden", c.hidden);
  c.queue_scale = j.value("queue_scale", c.queue_scale);
  c.seed = j.value("seed", c.seed);
  c.bounded_action = j.value("bounded_action", c.bounded_action);
  c.batch_augmentation = j.value("batch_augmentation", c.batch_augmentation);
  c.src = j.value("src", c.src);
  c.log_every = j.value("log_every", c.log_every);
  c.eval_every = j.value("eval_every", c.eval_every);
}

ProblemShape ProblemShape::of(const Network& net) {
  ProblemShape s;
  s.specs.assign(net.intersections().begin(), net.intersections().end());
  s.sampling_len = net.sampling_len();
  for (int j = 0; j < net.num_intersections(); ++j)
    s.incoming_counts.push_back(static_cast<int>(net.incoming_links(j).size()));
  return s;
}

int ProblemShape::total_phases() const {
  int n = 0;
  for (const auto& s : specs) n += s.num_phases();
  return n;
}

JointEncoder::JointEncoder(ProblemShape shape, SignalPlan base, bool bounded,
                           int delta_bound, double queue_scale)
    : shape_(std::move(shape)),
      base_(std::move(base)),
      bounded_(bounded),
      delta_bound_(delta_bound),
      queue_scale_(queue_scale) {
  if (shape_.incoming_counts.size() != shape_.specs.size())
    throw ShapeError("encoder: incoming_counts size mismatch");
  if (base_.num_intersections() != shape_.num_intersections())
    throw ShapeError("encoder: base plan does not match the network");
  for (int j = 0; j < shape_.num_intersections(); ++j) {
    obs_offset_.push_back(joint_obs_);
    joint_obs_ += obs_size(j);
    act_offset_.push_back(joint_act_);
    joint_act_ += action_size(j);
  }
  box_ = spec_box(shape_.specs, shape_.sampling_len);
}

int JointEncoder::obs_size(int j) const {
  return shape_.incoming_counts[at(j)] + shape_.specs[at(j)].num_phases();
}

Eigen::VectorXd JointEncoder::local(const Observation& o) const {
  const int j = o.intersection;
  if (j < 0 || j >= shape_.num_intersections()) throw ShapeError("observation of unknown intersection");
  const int nq = shape_.incoming_counts[at(j)];
  const int np = action_size(j);
  if (static_cast<int>(o.incoming_queues.size()) != nq ||
      static_cast<int>(o.phase_lengths.size()) != np)
    throw ShapeError("observation shape mismatch");
  Eigen::VectorXd v(nq + np);
  for (int i = 0; i < nq; ++i) v(i) = o.incoming_queues[at(i)] / queue_scale_;
  for (int i = 0; i < np; ++i)
    v(nq + i) = (o.phase_lengths[at(i)] - base_.lengths[at(j)][at(i)]) /
                static_cast<double>(delta_bound_);
  return v;
}

Eigen::VectorXd JointEncoder::joint(std::span<const Observation> obs) const {
  if (static_cast<int>(obs.size()) != shape_.num_intersections())
    throw ShapeError("joint observation needs one entry per intersection");
  Eigen::VectorXd v(joint_obs_);
  for (int j = 0; j < shape_.num_intersections(); ++j) {
    if (obs[at(j)].intersection != j) throw ShapeError("joint observation out of order");
    v.segment(obs_offset(j), obs_size(j)) = local(obs[at(j)]);
  }
  return v;
}

Eigen::VectorXd JointEncoder::joint(std::span<const double> queues,
                                    const SignalPlan& plan) const {
  std::vector<Observation> obs;
  std::size_t q = 0;
  for (int j = 0; j < shape_.num_intersections(); ++j) {
    Observation o;
    o.intersection = j;
    for (int i = 0; i < shape_.incoming_counts[at(j)]; ++i) {
      if (q >= queues.size()) throw ShapeError("joint queue vector too short");
      o.incoming_queues.push_back(queues[q++]);
    }
    o.phase_lengths = plan.lengths.at(at(j));
    obs.push_back(std::move(o));
  }
  if (q != queues.size()) throw ShapeError("joint queue vector too long");
  return joint(obs);
}

Eigen::VectorXd JointEncoder::action(const SignalPlan& plan) const {
  if (plan.num_intersections() != shape_.num_intersections())
    throw ShapeError("action plan shape mismatch");
  Eigen::VectorXd v(joint_act_);
  for (int j = 0; j < shape_.num_intersections(); ++j) {
    if (static_cast<int>(plan.lengths[at(j)].size()) != action_size(j))
      throw ShapeError("action plan shape mismatch");
    for (int i = 0; i < action_size(j); ++i)
      v(action_offset(j) + i) = (plan.lengths[at(j)][at(i)] - base_.lengths[at(j)][at(i)]) /
                                static_cast<double>(delta_bound_);
  }
  return v;
}

double JointEncoder::action_offset_value(int j, int i) const {
  if (bounded_) return 0.0;
  const double mid = 0.5 * (box_.lo[at(j)][at(i)] + box_.hi[at(j)][at(i)]);
  return (mid - base_.lengths[at(j)][at(i)]) / delta_bound_;
}

double JointEncoder::action_scale(int j, int i) const {
  if (bounded_) return 1.0;
  return 0.5 * (box_.hi[at(j)][at(i)] - box_.lo[at(j)][at(i)]) / delta_bound_;
}

std::pair<PlanDelta, SignalPlan> decode_bounded_action(
    const std::vector<std::vector<double>>& outputs, const SignalPlan& base, int delta_bound,
    std::span<const IntersectionSpec> specs, int step_len) {
  if (outputs.size() != base.lengths.size()) throw ShapeError("decode: one output row per intersection");
  const int reach = (delta_bound / step_len) * step_len;
  PlanDelta d;
  for (std::size_t j = 0; j < outputs.size(); ++j) {
    if (outputs[j].size() != base.lengths[j].size()) throw ShapeError("decode: output size mismatch");
    d.deltas.emplace_back();
    for (double o : outputs[j]) {
      if (!std::isfinite(o)) throw DivergenceError("decode: non-finite actor output");
      d.deltas.back().push_back(std::clamp(round_to_step(o * delta_bound, step_len), -reach, reach));
    }
  }
  SignalPlan plan = apply_bounded_delta(base, d, specs, step_len, delta_bound);
  return {std::move(d), std::move(plan)};
}

SignalPlan decode_full_action(const std::vector<std::vector<double>>& outputs,
                              std::span<const IntersectionSpec> specs, int step_len) {
  if (outputs.size() != specs.size()) throw ShapeError("decode: one output row per intersection");
  const PhaseBox box = spec_box(specs, step_len);
  std::vector<std::vector<int>> raw(specs.size());
  for (std::size_t j = 0; j < specs.size(); ++j) {
    if (outputs[j].size() != specs[j].phases.size()) throw ShapeError("decode: output size mismatch");
    for (std::size_t i = 0; i < outputs[j].size(); ++i) {
      const double o = std::clamp(outputs[j][i], -1.0, 1.0);
      if (!std::isfinite(outputs[j][i])) throw DivergenceError("decode: non-finite actor output");
      const double lo = box.lo[j][i], hi = box.hi[j][i];
      raw[j].push_back(round_to_step(lo + 0.5 * (o + 1.0) * (hi - lo), step_len));
    }
  }
  const int anchor = anchor_intersection(specs);
  int target = 0;
  for (int t : raw[at(anchor)]) target += t;
  return repair_plan(raw, box, target, step_len);
}

std::vector<double> DecentralizedPolicy::act(const Observation& own) const {
  const int j = own.intersection;
  if (j < 0 || j >= static_cast<int>(actors.size())) throw ShapeError("policy: unknown intersection");
  const JointEncoder enc(shape, base, bounded, delta_bound, queue_scale);
  const Eigen::VectorXd out = actors[at(j)].forward(enc.local(own));
  return {out.data(), out.data() + out.size()};
}

SignalPlan DecentralizedPolicy::assemble(const std::vector<std::vector<double>>& outputs) const {
  if (bounded)
    return decode_bounded_action(outputs, base, delta_bound, shape.specs, shape.sampling_len).second;
  return decode_full_action(outputs, shape.specs, shape.sampling_len);
}

PolicyEvaluation evaluate_policies(const DecentralizedPolicy& policy, const Network& net,
                                   int warmup, int measured, std::uint64_t seed) {
  if (measured < 1) throw Error("evaluate_policies: need at least one measured cycle");
  if (static_cast<int>(policy.actors.size()) != net.num_intersections())
    throw ShapeError("evaluate_policies: one actor per intersection required");
  PolicyEvaluation result;
  SimState s = initial_state(net, seed, 0, &policy.base);
  double sum = 0.0;
  for (int c = 0; c < warmup + measured; ++c) {
    const auto obs = observe_all(s, net);
    std::vector<std::vector<double>> outputs;
    for (const auto& o : obs) outputs.push_back(policy.act(o));
    SignalPlan plan = policy.assemble(outputs);
    const CycleTrace trace = run_cycle(s, plan, net);
    if (c >= warmup) sum += cycle_reward(trace).global;
    result.plans.push_back(std::move(plan));
  }
  result.waiting = -sum / measured;
  return result;
}

double truncated_reward_estimate(const TransitionRecord& record, int intersection,
                                 const SignalPlan& base,
                                 const std::function<double(int)>& qbar) {
  const int steps = record.trace.num_steps();
  if (steps == 0) throw Error("truncated_reward_estimate: empty trace");
  const int dt = record.trace.sampling_len;
  const auto& row = base.lengths.at(at(intersection));
  double est = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i)
    est += (row[i] / dt) / static_cast<double>(steps) * qbar(static_cast<int>(i));
  return est;
}

MaddpgTrainer::MaddpgTrainer(const BatchDataset& batch, SignalPlan base, ProblemShape shape,
                             MaddpgConfig config)
    : cfg_(std::move(config)),
      shape_(shape),
      enc_(std::move(shape), base, cfg_.bounded_action, cfg_.delta_bound, cfg_.queue_scale),
      records_(batch.records) {
  cfg_.validate(shape_.sampling_len);
  const int R = num_records();
  const int N = shape_.num_intersections();
  const int P = shape_.total_phases();
  if (R < 4) throw Error("train: batch needs at least 4 records");
  const auto report = validate_plan(enc_.base(), shape_.specs, shape_.sampling_len);
  if (!report.ok()) throw Error("train: invalid base plan: " + report.summary());

  double mag = 0.0;
  for (const auto& r : records_) mag += std::abs(r.reward_global);
  mag /= R;
  reward_scale_ = mag > 0.0 ? mag : 1.0;
  clip_ = estimate_clip_levels(records_, cfg_.c_quartile);
  for (auto& c : clip_) c /= reward_scale_;

  const int dx = enc_.joint_obs_size(), da = enc_.joint_action_size();
  rec_x_.resize(dx, R);
  rec_a_.resize(da, R);
  rec_xn_.resize(dx, R);
  rec_rg_.resize(R);
  rec_rl_.resize(N, R);
  for (int j = 0; j < N; ++j) {
    rec_local_.emplace_back(enc_.obs_size(j), R);
    rec_next_local_.emplace_back(enc_.obs_size(j), R);
  }
  for (int r = 0; r < R; ++r) {
    const auto& rec = records_[at(r)];
    if (static_cast<int>(rec.reward_local.size()) != N) throw ShapeError("train: record reward shape mismatch");
    rec_x_.col(r) = enc_.joint(rec.observations);
    rec_xn_.col(r) = enc_.joint(rec.next_observations);
    rec_a_.col(r) = enc_.action(rec.plan);
    rec_rg_(r) = rec.reward_global / reward_scale_;
    for (int j = 0; j < N; ++j) {
      rec_rl_(j, r) = rec.reward_local[at(j)] / reward_scale_;
      rec_local_[at(j)].col(r) = rec_x_.col(r).segment(enc_.obs_offset(j), enc_.obs_size(j));
      rec_next_local_[at(j)].col(r) = rec_xn_.col(r).segment(enc_.obs_offset(j), enc_.obs_size(j));
    }
  }

  for (int j = 0; j < N; ++j)
    for (int i = 0; i < enc_.action_size(j); ++i) code_owner_.push_back(j);
  anchor_ = anchor_intersection(shape_.specs);

  if (cfg_.batch_augmentation) {
    for (int r = 0; r < R; ++r) {
      auto pairs = augment_two_phase(records_[at(r)], r);
      derived_.insert(derived_.end(), std::make_move_iterator(pairs.begin()),
                      std::make_move_iterator(pairs.end()));
    }
    const auto samples = build_truncated_samples(records_);
    if (static_cast<int>(samples.size()) != R * P) throw ShapeError("train: truncated sample count mismatch");
    trunc_in_.resize(dx + da + P, R * P);
    trunc_targets_.resize(2, R * P);
    trunc_weight_.resize(P, R);
    for (const auto& s : samples) {
      const int col = s.record * P + s.phase_code;
      const auto& rec = records_[at(s.record)];
      trunc_in_.col(col).head(dx) = enc_.joint(s.queues, plan_in_effect(rec.observations));
      trunc_in_.col(col).segment(dx, da) = rec_a_.col(s.record);
      trunc_in_.col(col).tail(P).setZero();
      trunc_in_(dx + da + s.phase_code, col) = 1.0;
      trunc_targets_(0, col) = s.avg_reward_global / reward_scale_;
      trunc_targets_(1, col) = s.avg_reward_local / reward_scale_;
      const int b = enc_.base().lengths[at(s.intersection)][at(s.phase)] / shape_.sampling_len;
      trunc_weight_(s.phase_code, s.record) = b / static_cast<double>(rec.trace.num_steps());
    }
  }

  std::mt19937_64 seeds(cfg_.seed);
  for (int k = 0; k < N; ++k) {
    critics_.emplace_back(layer_sizes(dx + da, cfg_.hidden, 1), OutputActivation::Identity, seeds());
    critic_targets_.push_back(critics_.back());
    critic_opt_.push_back(OptimizerState::for_net(critics_.back(), {cfg_.critic_lr}));
    actors_.emplace_back(layer_sizes(enc_.obs_size(k), cfg_.hidden, enc_.action_size(k)),
                         OutputActivation::Bounded, seeds());
    actor_targets_.push_back(actors_.back());
    actor_opt_.push_back(OptimizerState::for_net(actors_.back(), {cfg_.actor_lr}));
  }
  qbar_ = Mlp(layer_sizes(dx + da + P, cfg_.hidden, 2), OutputActivation::Identity, seeds());
  qbar_opt_ = OptimizerState::for_net(qbar_, {cfg_.truncated_lr});
}

std::vector<int> MaddpgTrainer::sample_critic_batch(std::mt19937_64& rng) const {
  const int B = cfg_.batch_size;
  const int n_der = derived_.empty() ? 0
                                     : static_cast<int>(std::lround(cfg_.derived_fraction * B));
  std::uniform_int_distribution<int> rec(0, num_records() - 1);
  std::vector<int> out;
  out.reserve(at(B));
  for (int b = 0; b < B - n_der; ++b) out.push_back(rec(rng));
  if (n_der > 0) {
    std::uniform_int_distribution<int> der(0, num_derived() - 1);
    for (int b = 0; b < n_der; ++b) out.push_back(num_records() + der(rng));
  }
  return out;
}

std::vector<int> MaddpgTrainer::sample_record_batch(std::mt19937_64& rng) const {
  std::uniform_int_distribution<int> rec(0, num_records() - 1);
  std::vector<int> out(at(cfg_.batch_size));
  for (auto& v : out) v = rec(rng);
  return out;
}

MaddpgTrainer::Columns MaddpgTrainer::gather(std::span<const int> pool) const {
  const int B = static_cast<int>(pool.size());
  const int N = shape_.num_intersections();
  const int R = num_records();
  Columns c;
  c.x.resize(rec_x_.rows(), B);
  c.a.resize(rec_a_.rows(), B);
  c.xn.resize(rec_xn_.rows(), B);
  c.rg.resize(B);
  c.rl.resize(N, B);
  for (int j = 0; j < N; ++j) c.next_local.emplace_back(enc_.obs_size(j), B);
  for (int b = 0; b < B; ++b) {
    const int p = pool[at(b)];
    if (p < 0 || p >= R + num_derived()) throw ShapeError("minibatch index out of range");
    int r = p;
    if (p < R) {
      c.x.col(b) = rec_x_.col(p);
      c.a.col(b) = rec_a_.col(p);
      c.rg(b) = rec_rg_(p);
      c.rl.col(b) = rec_rl_.col(p);
    } else {
      const auto& d = derived_[at(p - R)];
      r = d.record;
      c.x.col(b) = enc_.joint(d.start_queues, plan_in_effect(records_[at(r)].observations));
      c.a.col(b) = enc_.action(d.action);
      c.rg(b) = d.reward_global / reward_scale_;
      for (int j = 0; j < N; ++j) c.rl(j, b) = d.reward_local[at(j)] / reward_scale_;
    }
    c.xn.col(b) = rec_xn_.col(r);
    for (int j = 0; j < N; ++j) c.next_local[at(j)].col(b) = rec_next_local_[at(j)].col(r);
  }
  return c;
}

Eigen::MatrixXd MaddpgTrainer::target_actions(const std::vector<Eigen::MatrixXd>& next_local) const {
  const int B = static_cast<int>(next_local.front().cols());
  Eigen::MatrixXd a(enc_.joint_action_size(), B);
  for (int j = 0; j < shape_.num_intersections(); ++j) {
    const Eigen::MatrixXd out = actor_targets_[at(j)].forward_batch(next_local[at(j)]);
    for (int i = 0; i < enc_.action_size(j); ++i)
      a.row(enc_.action_offset(j) + i) =
          (enc_.action_offset_value(j, i) + enc_.action_scale(j, i) * out.row(i).array()).matrix();
  }
  linear_repair(a);
  return a;
}

void MaddpgTrainer::linear_repair(Eigen::MatrixXd& a) const {
  const Eigen::RowVectorXd target =
      a.middleRows(enc_.action_offset(anchor_), enc_.action_size(anchor_)).colwise().sum();
  for (int k = 0; k < shape_.num_intersections(); ++k) {
    if (k == anchor_) continue;
    const Eigen::RowVectorXd own = a.middleRows(enc_.action_offset(k), enc_.action_size(k)).colwise().sum();
    a.row(enc_.action_offset(k) + enc_.action_size(k) - 1) += target - own;
  }
}

Eigen::MatrixXd MaddpgTrainer::linear_repair_grad(const Eigen::MatrixXd& g) const {
  Eigen::MatrixXd pre = g;
  for (int k = 0; k < shape_.num_intersections(); ++k) {
    if (k == anchor_) continue;
    const Eigen::RowVectorXd last = g.row(enc_.action_offset(k) + enc_.action_size(k) - 1);
    for (int i = 0; i < enc_.action_size(k); ++i) pre.row(enc_.action_offset(k) + i) -= last;
    for (int i = 0; i < enc_.action_size(anchor_); ++i) pre.row(enc_.action_offset(anchor_) + i) += last;
  }
  return pre;
}

Eigen::MatrixXd MaddpgTrainer::with_actor(int agent, const Eigen::MatrixXd& a,
                                          const Eigen::MatrixXd& out) const {
  Eigen::MatrixXd r = a;
  for (int i = 0; i < enc_.action_size(agent); ++i)
    r.row(enc_.action_offset(agent) + i) =
        (enc_.action_offset_value(agent, i) + enc_.action_scale(agent, i) * out.row(i).array()).matrix();
  linear_repair(r);
  return r;
}

Eigen::VectorXd MaddpgTrainer::immediate_rewards(int agent, std::span<const int> pool) const {
  const int B = static_cast<int>(pool.size());
  const int R = num_records();
  const int P = shape_.total_phases();
  Columns c = gather(pool);
  Eigen::VectorXd rg = c.rg;
  Eigen::VectorXd rl = c.rl.row(agent).transpose();

  if (cfg_.batch_augmentation) {
    std::vector<int> codes;
    for (int code = 0; code < P; ++code)
      if (code_owner_[at(code)] == agent) codes.push_back(code);
    std::vector<int> rec_rows;
    for (int b = 0; b < B; ++b)
      if (pool[at(b)] < R) rec_rows.push_back(b);
    if (!rec_rows.empty()) {
      const int nc = static_cast<int>(codes.size());
      Eigen::MatrixXd in(trunc_in_.rows(), static_cast<Eigen::Index>(rec_rows.size()) * nc);
      for (std::size_t q = 0; q < rec_rows.size(); ++q)
        for (int c2 = 0; c2 < nc; ++c2)
          in.col(static_cast<Eigen::Index>(q) * nc + c2) =
              trunc_in_.col(pool[at(rec_rows[q])] * P + codes[at(c2)]);
      const Eigen::MatrixXd out = qbar_.forward_batch(in);
      for (std::size_t q = 0; q < rec_rows.size(); ++q) {
        const int r = pool[at(rec_rows[q])];
        double g = 0.0, l = 0.0;
        for (int c2 = 0; c2 < nc; ++c2) {
          const double w = trunc_weight_(codes[at(c2)], r);
          g += w * out(0, static_cast<Eigen::Index>(q) * nc + c2);
          l += w * out(1, static_cast<Eigen::Index>(q) * nc + c2);
        }
        rg(rec_rows[q]) = g;
        rl(rec_rows[q]) = l;
      }
    }
  }

  if (!cfg_.src) return rg;
  Eigen::VectorXd r(B);
  for (int b = 0; b < B; ++b) r(b) = src_reward(rg(b), rl(b), cfg_.alpha_src, clip_[at(agent)]);
  return r;
}

Eigen::VectorXd MaddpgTrainer::critic_targets(int agent, std::span<const int> pool) const {
  const Columns c = gather(pool);
  Eigen::MatrixXd in(c.xn.rows() + enc_.joint_action_size(), c.xn.cols());
  in << c.xn, target_actions(c.next_local);
  const Eigen::MatrixXd q = critic_targets_[at(agent)].forward_batch(in);
  return immediate_rewards(agent, pool) + cfg_.gamma * q.row(0).transpose();
}

double MaddpgTrainer::critic_update(int agent, std::span<const int> pool) {
  const Eigen::VectorXd y = critic_targets(agent, pool);
  const Columns c = gather(pool);
  Eigen::MatrixXd in(c.x.rows() + c.a.rows(), c.x.cols());
  in << c.x, c.a;
  MlpTape tape;
  const Eigen::MatrixXd pred = critics_[at(agent)].forward_batch(in, &tape);
  const Eigen::RowVectorXd err = pred.row(0) - y.transpose();
  const double B = static_cast<double>(pool.size());
  const double loss = err.squaredNorm() / B;
  check_finite(loss, "critic loss");
  const Eigen::MatrixXd up = (2.0 / B) * err;
  optimize_step(critics_[at(agent)], critics_[at(agent)].backward(tape, up), critic_opt_[at(agent)]);
  return loss;
}

double MaddpgTrainer::actor_objective(int agent, std::span<const int> records) const {
  const Columns c = gather(records);
  const Eigen::MatrixXd out = actors_[at(agent)].forward_batch(c.x.middleRows(
      enc_.obs_offset(agent), enc_.obs_size(agent)));
  const Eigen::MatrixXd a = with_actor(agent, c.a, out);
  Eigen::MatrixXd in(c.x.rows() + a.rows(), c.x.cols());
  in << c.x, a;
  return critics_[at(agent)].forward_batch(in).mean();
}

MlpGradients MaddpgTrainer::actor_gradient(int agent, std::span<const int> records) const {
  for (int r : records)
    if (r < 0 || r >= num_records()) throw ShapeError("actor minibatch must contain records only");
  const Columns c = gather(records);
  const Eigen::MatrixXd local = c.x.middleRows(enc_.obs_offset(agent), enc_.obs_size(agent));
  MlpTape atape;
  const Eigen::MatrixXd out = actors_[at(agent)].forward_batch(local, &atape);
  const Eigen::MatrixXd a = with_actor(agent, c.a, out);
  Eigen::MatrixXd in(c.x.rows() + a.rows(), c.x.cols());
  in << c.x, a;
  MlpTape ctape;
  const Mlp& critic = critics_[at(agent)];
  critic.forward_batch(in, &ctape);
  const double B = static_cast<double>(records.size());
  Eigen::MatrixXd dq = Eigen::MatrixXd::Constant(1, in.cols(), 1.0 / B);
  Eigen::MatrixXd din;
  critic.backward(ctape, dq, &din);
  const Eigen::MatrixXd dpre = linear_repair_grad(din.bottomRows(a.rows()));
  Eigen::MatrixXd dout(enc_.action_size(agent), in.cols());
  for (int i = 0; i < enc_.action_size(agent); ++i)
    dout.row(i) = enc_.action_scale(agent, i) * dpre.row(enc_.action_offset(agent) + i);
  return actors_[at(agent)].backward(atape, dout);
}

double MaddpgTrainer::actor_update(int agent, std::span<const int> records) {
  MlpGradients g = actor_gradient(agent, records);
  scale_gradients(g, -1.0);  // ascend on Q
  optimize_step(actors_[at(agent)], g, actor_opt_[at(agent)]);
  const double j = actor_objective(agent, records);
  check_finite(j, "actor objective");
  return j;
}

double MaddpgTrainer::truncated_update(std::span<const int> samples) {
  if (trunc_in_.cols() == 0) return 0.0;
  Eigen::MatrixXd in(trunc_in_.rows(), static_cast<Eigen::Index>(samples.size()));
  Eigen::MatrixXd t(2, in.cols());
  for (std::size_t b = 0; b < samples.size(); ++b) {
    in.col(static_cast<Eigen::Index>(b)) = trunc_in_.col(samples[b]);
    t.col(static_cast<Eigen::Index>(b)) = trunc_targets_.col(samples[b]);
  }
  MlpTape tape;
  const Eigen::MatrixXd err = qbar_.forward_batch(in, &tape) - t;
  const double B = static_cast<double>(samples.size());
  const double loss = err.squaredNorm() / B;
  check_finite(loss, "truncated value loss");
  optimize_step(qbar_, qbar_.backward(tape, (2.0 / B) * err), qbar_opt_);
  return loss;
}

void MaddpgTrainer::soft_update_targets() {
  for (std::size_t k = 0; k < critics_.size(); ++k) {
    soft_update(critic_targets_[k], critics_[k], cfg_.tau);
    soft_update(actor_targets_[k], actors_[k], cfg_.tau);
  }
}

DecentralizedPolicy MaddpgTrainer::policy() const {
  DecentralizedPolicy p;
  p.actors = actors_;
  p.base = enc_.base();
  p.bounded = cfg_.bounded_action;
  p.delta_bound = cfg_.delta_bound;
  p.queue_scale = cfg_.queue_scale;
  p.shape = shape_;
  return p;
}

TrainResult train_offline(const BatchDataset& batch, const SignalPlan& base,
                          const ProblemShape& shape, const MaddpgConfig& config,
                          const PolicyEvaluator& evaluator) {
  MaddpgTrainer trainer(batch, base, shape, config);
  const int N = shape.num_intersections();
  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  TrainResult result;
  result.reward_scale = trainer.reward_scale();
  result.clip_levels = trainer.clip_levels();

  double sum_c = 0.0, sum_a = 0.0, sum_t = 0.0;
  int window = 0, actor_window = 0;
  const int ntrunc = trainer.num_truncated_samples();
  for (int it = 1; it <= config.iterations; ++it) {
    if (ntrunc > 0) {
      std::uniform_int_distribution<int> pick(0, ntrunc - 1);
      std::vector<int> s(at(config.batch_size));
      for (auto& v : s) v = pick(rng);
      sum_t += trainer.truncated_update(s);
    }
    double c = 0.0;
    for (int k = 0; k < N; ++k) c += trainer.critic_update(k, trainer.sample_critic_batch(rng));
    sum_c += c / N;
    if (it > config.critic_warmup) {
      double a = 0.0;
      for (int k = 0; k < N; ++k) a += trainer.actor_update(k, trainer.sample_record_batch(rng));
      sum_a += a / N;
      ++actor_window;
    }
    trainer.soft_update_targets();
    ++window;

    const bool log = it % config.log_every == 0 || it == config.iterations;
    const bool eval = evaluator && config.eval_every > 0 &&
                      (it % config.eval_every == 0 || it == config.iterations);
    if (log || eval) {
      HistoryRow row;
      row.iteration = it;
      row.critic_loss = sum_c / window;
      row.truncated_loss = sum_t / window;
      row.actor_objective = actor_window > 0 ? sum_a / actor_window : 0.0;
      if (eval) {
        row.eval_waiting = evaluator(trainer.policy());
        ++result.eval_calls;
      }
      result.history.push_back(row);
      sum_c = sum_a = sum_t = 0.0;
      window = actor_window = 0;
    }
  }
  result.policy = trainer.policy();
  return result;
}

}  // namespace signalopt
