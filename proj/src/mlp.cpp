#include "signalopt/mlp.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "signalopt/error.hpp"

namespace signalopt {

namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ShapeError("mlp needs at least input and output sizes");
  for (int s : sizes)
    if (s <= 0) throw ShapeError("mlp layer sizes must be positive");
}

bool finite(const DenseLayer& l) { return l.weights.allFinite() && l.bias.allFinite(); }

}  // namespace

bool MlpGradients::all_finite() const {
  for (const auto& l : layers)
    if (!finite(l)) return false;
  return true;
}

Mlp::Mlp(std::vector<int> sizes, OutputActivation output, std::uint64_t seed)
    : sizes_(std::move(sizes)), output_(output) {
  check_sizes(sizes_);
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[k]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer l;
    l.weights.resize(sizes_[k + 1], sizes_[k]);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = dist(rng);
    l.bias = Eigen::VectorXd::Zero(sizes_[k + 1]);
    layers.push_back(std::move(l));
  }
}

Mlp Mlp::zeros(std::vector<int> sizes, OutputActivation output) {
  check_sizes(sizes);
  Mlp net;
  net.sizes_ = std::move(sizes);
  net.output_ = output;
  for (std::size_t k = 0; k + 1 < net.sizes_.size(); ++k)
    net.layers.push_back({Eigen::MatrixXd::Zero(net.sizes_[k + 1], net.sizes_[k]),
                          Eigen::VectorXd::Zero(net.sizes_[k + 1])});
  return net;
}

std::size_t Mlp::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers)
    if (!finite(l)) return false;
  return true;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  return forward_batch(x, nullptr).col(0);
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& X, MlpTape* tape) const {
  if (X.rows() != input_size())
    throw ShapeError("mlp input has " + std::to_string(X.rows()) + " rows, expected " +
                     std::to_string(input_size()));
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Eigen::MatrixXd a = X;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Eigen::MatrixXd z = layers[k].weights * a;
    z.colwise() += layers[k].bias;
    if (tape) {
      tape->inputs.push_back(a);
      tape->pre.push_back(z);
    }
    const bool last = k + 1 == layers.size();
    if (!last) a = z.cwiseMax(0.0);
    else if (output_ == OutputActivation::Bounded) {
      // tanh rounds to exactly +-1 past |z| ~ 19; keep the open interval.
      const double edge = std::nextafter(1.0, 0.0);
      a = z.array().tanh().min(edge).max(-edge).matrix();
    }
    else a = std::move(z);
  }
  if (tape) tape->output = a;
  return a;
}

MlpGradients Mlp::backward(const MlpTape& tape, const Eigen::MatrixXd& upstream,
                           Eigen::MatrixXd* input_grad) const {
  if (tape.pre.size() != layers.size() || upstream.rows() != output_size() ||
      upstream.cols() != tape.output.cols())
    throw ShapeError("mlp backward: upstream gradient does not match the forward pass");
  MlpGradients g;
  g.layers.resize(layers.size());
  Eigen::MatrixXd delta = upstream;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const bool last = k + 1 == layers.size();
    if (last) {
      if (output_ == OutputActivation::Bounded)
        delta = delta.cwiseProduct((1.0 - tape.output.array().square()).matrix());
    } else {
      delta = delta.cwiseProduct((tape.pre[k].array() > 0.0).cast<double>().matrix());
    }
    g.layers[k].weights = delta * tape.inputs[k].transpose();
    g.layers[k].bias = delta.rowwise().sum();
    if (k > 0 || input_grad) delta = layers[k].weights.transpose() * delta;
  }
  if (input_grad) *input_grad = std::move(delta);
  return g;
}

BackwardResult backward(const Mlp& net, const Eigen::VectorXd& input,
                        const Eigen::VectorXd& upstream) {
  MlpTape tape;
  net.forward_batch(input, &tape);
  Eigen::MatrixXd dx;
  BackwardResult r;
  r.params = net.backward(tape, upstream, &dx);
  r.input = dx.col(0);
  return r;
}

OptimizerState OptimizerState::for_net(const Mlp& net, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  for (const auto& l : net.layers) {
    DenseLayer z{Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                 Eigen::VectorXd::Zero(l.bias.size())};
    s.m.push_back(z);
    s.v.push_back(z);
  }
  return s;
}

void optimize_step(Mlp& net, const MlpGradients& grads, OptimizerState& opt) {
  if (grads.layers.size() != net.layers.size() || opt.m.size() != net.layers.size())
    throw ShapeError("optimize_step: layer count mismatch");
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient");
  ++opt.step;
  const auto& c = opt.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  const double lr = c.learning_rate * std::sqrt(bc2) / bc1;
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
      throw ShapeError("optimize_step: gradient shape mismatch");
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * m.array() / (v.array().sqrt() + c.epsilon);
  };
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    update(net.layers[k].weights, grads.layers[k].weights, opt.m[k].weights, opt.v[k].weights);
    update(net.layers[k].bias, grads.layers[k].bias, opt.m[k].bias, opt.v[k].bias);
  }
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (target.sizes() != online.sizes()) throw ShapeError("soft_update: shapes differ");
  if (!(tau > 0.0 && tau <= 1.0)) throw Error("soft_update: tau must be in (0, 1]");
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    target.layers[k].weights = (1.0 - tau) * target.layers[k].weights + tau * online.layers[k].weights;
    target.layers[k].bias = (1.0 - tau) * target.layers[k].bias + tau * online.layers[k].bias;
  }
}

nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weights.size()));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"weights", w}, {"bias", b}});
  }
  return {{"sizes", net.sizes()},
          {"output", net.output_activation() == OutputActivation::Bounded ? "bounded" : "identity"},
          {"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  const auto sizes = j.at("sizes").get<std::vector<int>>();
  const std::string out = j.at("output").get<std::string>();
  if (out != "bounded" && out != "identity") throw ConfigError("unknown output activation " + out);
  Mlp net = Mlp::zeros(sizes, out == "bounded" ? OutputActivation::Bounded
                                               : OutputActivation::Identity);
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers.size()) throw ConfigError("checkpoint layer count mismatch");
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto w = layers[k].at("weights").get<std::vector<double>>();
    const auto b = layers[k].at("bias").get<std::vector<double>>();
    auto& l = net.layers[k];
    if (static_cast<Eigen::Index>(w.size()) != l.weights.size() ||
        static_cast<Eigen::Index>(b.size()) != l.bias.size())
      throw ConfigError("checkpoint layer " + std::to_string(k) + " has the wrong size");
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = w[i++];
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = b[static_cast<std::size_t>(r)];
  }
  return net;
}

void save_mlp(const Mlp& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << mlp_to_json(net).dump() << '\n';
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return mlp_from_json(nlohmann::json::parse(in));
}

}  // namespace signalopt
