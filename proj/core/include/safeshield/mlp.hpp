#pragma once

#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace safeshield::rl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

enum class Activation { relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Parameter-shaped container for gradients and optimizer moments.
struct MlpGrad {
    std::vector<Matrix> dW;
    std::vector<Vector> db;

    double squared_norm() const;
    void scale(double factor);
};

/// Fully connected network: hidden layers use the configured activation, the
/// output layer is linear. Batches are column-major (one sample per column).
class Mlp {
public:
    Mlp() = default;
    /// PyTorch-style init: weights and biases uniform in +-1/sqrt(fan_in).
    Mlp(std::vector<int> layer_sizes, Activation hidden, Rng& rng);

    const std::vector<int>& layer_sizes() const { return sizes_; }
    Activation activation() const { return activation_; }
    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    std::size_t layers() const { return W.size(); }

    struct Tape {
        std::vector<Matrix> inputs;  // input of every layer (post-activation of the previous one)
        std::vector<Matrix> pre;     // pre-activation of every layer
    };

    Vector forward(const Vector& x) const;
    Matrix forward(const Matrix& X) const;
    Matrix forward(const Matrix& X, Tape& tape) const;

    /// Gradients of sum(upstream .* output) with respect to all parameters,
    /// and optionally with respect to the input batch.
    MlpGrad backward(const Tape& tape, const Matrix& upstream, Matrix* input_grad = nullptr) const;

    MlpGrad zeros_like() const;
    bool finite() const;

    /// this <- tau * source + (1 - tau) * this.
    void polyak_update(const Mlp& source, double tau);

    std::vector<Matrix> W;
    std::vector<Vector> b;

private:
    void check_shapes() const;

    std::vector<int> sizes_;
    Activation activation_ = Activation::relu;
};

/// Rescales the gradient so its global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(MlpGrad& grad, double max_norm);

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Plain SGD or Adam over one network's parameters.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(const Mlp& net, OptimizerConfig config);

    void step(Mlp& net, const MlpGrad& grad);
    const OptimizerConfig& config() const { return config_; }

private:
    OptimizerConfig config_;
    MlpGrad m_;
    MlpGrad v_;
    long t_ = 0;
};

}  // namespace safeshield::rl
