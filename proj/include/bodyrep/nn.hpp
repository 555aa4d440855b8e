#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bodyrep::nn {

using Mat = Eigen::MatrixXd;

/// Seedable splitmix64 generator with fully specified output: uniforms come
/// from the top 53 bits, normals from Box-Muller. Keeps runs reproducible
/// independent of the standard library's distributions.
class RandomEngine {
public:
    explicit RandomEngine(uint64_t seed) : state_(seed) {}

    double uniform();                  // [0, 1)
    double uniform(double lo, double hi);
    double normal();                   // N(0, 1)
    Mat normal_matrix(int rows, int cols);
    uint64_t raw() { return next(); }

private:
    uint64_t next();
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;

    Parameter() = default;
    Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
        grad = Mat::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad.setZero(); }
};

/// Glorot-uniform initialization, U(+-sqrt(6/(fan_in+fan_out))).
Mat glorot_uniform(RandomEngine& rng, int rows, int cols);

/// Reverse-mode tape over rank-2 tensors. Rows index batch samples for data
/// tensors; parameter-shaped tensors (the skinning matrix) pass through
/// untouched. The tape is rebuilt every step; parameters live outside it and
/// accumulate gradients across backward() calls until zero_grad().
class Tape {
public:
    int constant(Mat v);
    int param(Parameter& p);

    /// y = x * W^T + 1 b^T with W (out x in), b (out x 1), x (B x in).
    int dense(int x, Parameter& W, Parameter& b);
    int tanh_op(int x);
    int sigmoid(int x);
    int scale(int x, double c);
    int add(int a, int b);
    int sub(int a, int b);
    int concat_cols(int a, int b);
    int matmul(int a, int b);

    /// Mean absolute deviation over all entries; subgradient 0 at zeros.
    int l1_loss(int pred, const Mat& target);
    /// Mean over batch rows of sum_d 0.5*(mu^2 + sigma^2 - 1 - ln sigma^2).
    int gaussian_kl(int mu, int sigma);
    /// mu + sigma .* eps with eps a fixed draw.
    int reparameterize(int mu, int sigma, const Mat& eps);
    /// Row-wise softmax over unmasked entries; exact zeros elsewhere.
    int masked_row_softmax(int logits, const Eigen::MatrixXi& mask);
    /// Per batch row: reshape g (9P) to (P x 9), left-multiply by W (V x P),
    /// flatten to 9V. The feature-space skinning blend.
    int blend_parts(int weights, int g, int parts, int per_part);

    /// sum_k coeff_k * scalar_k for loss assembly.
    int weighted_sum(const std::vector<std::pair<int, double>>& terms);

    const Mat& value(int id) const { return nodes_[id].value; }

    /// Seed the root with ones (scalar roots) and run the chain rule.
    void backward(int root);
    void backward(int root, const Mat& seed);
    /// Seed several output nodes at once, then run one reverse sweep.
    void backward_multi(const std::vector<std::pair<int, Mat>>& seeds);

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&, int)> backprop;  // may be empty (leaves)
    };
    int push(Mat value, std::function<void(Tape&, int)> fn);
    Mat& grad(int id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamState {
public:
    AdamState(std::vector<Parameter*> params, AdamConfig config);

    /// One update from the gradients currently stored in the parameters.
    /// Throws on non-finite gradients.
    void step();
    void set_lr(double lr) { config_.lr = lr; }
    double lr() const { return config_.lr; }
    long step_count() const { return step_count_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Mat> m_, v_;
    AdamConfig config_;
    long step_count_ = 0;
};

}  // namespace bodyrep::nn
