#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace signalopt {

enum class OutputActivation {
  Identity,
  Bounded,  // tanh, codomain (-1, 1)
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

// Intermediate values of a batched forward pass, consumed by backward().
struct MlpTape {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer (columns = samples)
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  Eigen::MatrixXd output;
};

struct MlpGradients {
  std::vector<DenseLayer> layers;
  bool all_finite() const;
};

// Feed-forward net: ReLU hidden layers, identity or tanh output.
class Mlp {
 public:
  Mlp() = default;
  // Weights uniform in +-1/sqrt(fan_in), biases zero.
  Mlp(std::vector<int> sizes, OutputActivation output, std::uint64_t seed);
  static Mlp zeros(std::vector<int> sizes, OutputActivation output);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  OutputActivation output_activation() const { return output_; }
  std::size_t num_parameters() const;
  bool all_finite() const;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  // Columns of X are samples.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X, MlpTape* tape = nullptr) const;

  // Gradients of sum_{samples} <upstream, output>. If input_grad is non-null
  // it receives d/dX of the same quantity.
  MlpGradients backward(const MlpTape& tape, const Eigen::MatrixXd& upstream,
                        Eigen::MatrixXd* input_grad = nullptr) const;

  std::vector<DenseLayer> layers;

 private:
  std::vector<int> sizes_;
  OutputActivation output_ = OutputActivation::Identity;
};

struct BackwardResult {
  MlpGradients params;
  Eigen::VectorXd input;
};

BackwardResult backward(const Mlp& net, const Eigen::VectorXd& input,
                        const Eigen::VectorXd& upstream);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  long step = 0;
  std::vector<DenseLayer> m;
  std::vector<DenseLayer> v;

  static OptimizerState for_net(const Mlp& net, AdamConfig config = {});
};

// One Adam descent step. Throws DivergenceError on non-finite gradients.
void optimize_step(Mlp& net, const MlpGradients& grads, OptimizerState& opt);

// target = (1 - tau) target + tau online.
void soft_update(Mlp& target, const Mlp& online, double tau);

// {"sizes":[...], "output":"identity"|"bounded",
//  "layers":[{"weights":[row-major], "bias":[...]}, ...]}
nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
void save_mlp(const Mlp& net, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace signalopt
