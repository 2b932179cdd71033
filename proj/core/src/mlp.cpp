#include "safeshield/mlp.hpp"

#include <cmath>

#include "safeshield/errors.hpp"

namespace safeshield::rl {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + s + "' (expected relu or tanh)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

double MlpGrad::squared_norm() const {
    double total = 0.0;
    for (const auto& w : dW) total += w.squaredNorm();
    for (const auto& v : db) total += v.squaredNorm();
    return total;
}

void MlpGrad::scale(double factor) {
    for (auto& w : dW) w *= factor;
    for (auto& v : db) v *= factor;
}

Mlp::Mlp(std::vector<int> layer_sizes, Activation hidden, Rng& rng)
    : sizes_(std::move(layer_sizes)), activation_(hidden) {
    if (sizes_.size() < 2) throw ConfigError("an MLP needs at least an input and an output layer");
    for (int n : sizes_)
        if (n <= 0) throw ConfigError("MLP layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
        std::uniform_real_distribution<double> u(-bound, bound);
        Matrix w(sizes_[l + 1], sizes_[l]);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
        Vector bias(sizes_[l + 1]);
        for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = u(rng);
        W.push_back(std::move(w));
        b.push_back(std::move(bias));
    }
}

void Mlp::check_shapes() const {
    if (W.size() != b.size() || W.size() + 1 != sizes_.size()) throw InputError("Mlp: corrupted layer list");
}

Vector Mlp::forward(const Vector& x) const {
    return forward(Matrix(x)).col(0);
}

Matrix Mlp::forward(const Matrix& X) const {
    if (X.rows() != input_dim()) throw InputError("Mlp::forward: input has the wrong dimension");
    Matrix h = X;
    for (std::size_t l = 0; l < W.size(); ++l) {
        Matrix z = W[l] * h;
        z.colwise() += b[l];
        if (l + 1 < W.size()) {
            if (activation_ == Activation::relu) z = z.cwiseMax(0.0);
            else z = z.array().tanh().matrix();
        }
        h = std::move(z);
    }
    return h;
}

Matrix Mlp::forward(const Matrix& X, Tape& tape) const {
    if (X.rows() != input_dim()) throw InputError("Mlp::forward: input has the wrong dimension");
    check_shapes();
    tape.inputs.assign(W.size(), Matrix());
    tape.pre.assign(W.size(), Matrix());
    Matrix h = X;
    for (std::size_t l = 0; l < W.size(); ++l) {
        tape.inputs[l] = h;
        Matrix z = W[l] * h;
        z.colwise() += b[l];
        tape.pre[l] = z;
        if (l + 1 < W.size()) {
            if (activation_ == Activation::relu) h = z.cwiseMax(0.0);
            else h = z.array().tanh().matrix();
        } else {
            h = std::move(z);
        }
    }
    return h;
}

MlpGrad Mlp::backward(const Tape& tape, const Matrix& upstream, Matrix* input_grad) const {
    if (tape.pre.size() != W.size()) throw InputError("Mlp::backward: tape does not match the network");
    if (upstream.rows() != output_dim() || upstream.cols() != tape.pre.back().cols())
        throw InputError("Mlp::backward: upstream gradient has the wrong shape");
    MlpGrad g;
    g.dW.resize(W.size());
    g.db.resize(W.size());
    Matrix delta = upstream;
    for (std::size_t k = W.size(); k-- > 0;) {
        if (k + 1 < W.size()) {
            const Matrix& z = tape.pre[k];
            if (activation_ == Activation::relu) {
                delta = delta.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
            } else {
                const Matrix t = z.array().tanh().matrix();
                delta = delta.cwiseProduct((1.0 - t.array().square()).matrix());
            }
        }
        g.dW[k].noalias() = delta * tape.inputs[k].transpose();
        g.db[k] = delta.rowwise().sum();
        if (k > 0 || input_grad) {
            Matrix prev = W[k].transpose() * delta;
            delta = std::move(prev);
        }
    }
    if (input_grad) *input_grad = std::move(delta);
    return g;
}

MlpGrad Mlp::zeros_like() const {
    MlpGrad g;
    for (std::size_t l = 0; l < W.size(); ++l) {
        g.dW.push_back(Matrix::Zero(W[l].rows(), W[l].cols()));
        g.db.push_back(Vector::Zero(b[l].size()));
    }
    return g;
}

bool Mlp::finite() const {
    for (std::size_t l = 0; l < W.size(); ++l)
        if (!W[l].allFinite() || !b[l].allFinite()) return false;
    return true;
}

void Mlp::polyak_update(const Mlp& source, double tau) {
    if (source.layer_sizes() != sizes_) throw InputError("polyak_update: network shapes differ");
    for (std::size_t l = 0; l < W.size(); ++l) {
        if (tau == 1.0) {
            W[l] = source.W[l];
            b[l] = source.b[l];
        } else {
            W[l] = tau * source.W[l] + (1.0 - tau) * W[l];
            b[l] = tau * source.b[l] + (1.0 - tau) * b[l];
        }
    }
}

double clip_grad_norm(MlpGrad& grad, double max_norm) {
    const double norm = std::sqrt(grad.squared_norm());
    if (max_norm > 0.0 && norm > max_norm) grad.scale(max_norm / (norm + 1e-6));
    return norm;
}

Optimizer::Optimizer(const Mlp& net, OptimizerConfig config) : config_(config) {
    if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (config_.kind == OptimizerKind::adam) {
        m_ = net.zeros_like();
        v_ = net.zeros_like();
    }
}

void Optimizer::step(Mlp& net, const MlpGrad& grad) {
    if (grad.dW.size() != net.W.size()) throw InputError("Optimizer::step: gradient does not match the network");
    if (config_.kind == OptimizerKind::sgd) {
        for (std::size_t l = 0; l < net.W.size(); ++l) {
            net.W[l] -= config_.lr * grad.dW[l];
            net.b[l] -= config_.lr * grad.db[l];
        }
        return;
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double step = config_.lr * std::sqrt(c2) / c1;
    const double eps_hat = config_.eps * std::sqrt(c2);
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        m_.dW[l] = b1 * m_.dW[l] + (1.0 - b1) * grad.dW[l];
        v_.dW[l] = b2 * v_.dW[l] + (1.0 - b2) * grad.dW[l].cwiseAbs2();
        net.W[l].array() -= step * m_.dW[l].array() / (v_.dW[l].array().sqrt() + eps_hat);
        m_.db[l] = b1 * m_.db[l] + (1.0 - b1) * grad.db[l];
        v_.db[l] = b2 * v_.db[l] + (1.0 - b2) * grad.db[l].cwiseAbs2();
        net.b[l].array() -= step * m_.db[l].array() / (v_.db[l].array().sqrt() + eps_hat);
    }
}

}  // namespace safeshield::rl
