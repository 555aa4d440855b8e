#include "bodyrep/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace bodyrep::nn {

uint64_t RandomEngine::next() {
    // splitmix64; state advances by the Weyl constant.
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double RandomEngine::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double RandomEngine::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RandomEngine::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
}

Mat RandomEngine::normal_matrix(int rows, int cols) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = normal();
    }
    return m;
}

Mat glorot_uniform(RandomEngine& rng, int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
    }
    return m;
}

int Tape::push(Mat value, std::function<void(Tape&, int)> fn) {
    Node node;
    node.grad = Mat::Zero(value.rows(), value.cols());
    node.value = std::move(value);
    node.backprop = std::move(fn);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Mat v) { return push(std::move(v), nullptr); }

int Tape::param(Parameter& p) {
    Parameter* ptr = &p;
    return push(p.value, [ptr](Tape& t, int self) { ptr->grad += t.grad(self); });
}

int Tape::dense(int x, Parameter& W, Parameter& b) {
    const Mat& X = nodes_[x].value;
    if (X.cols() != W.value.cols()) throw std::runtime_error("dense: shape mismatch");
    Mat y = X * W.value.transpose();
    y.rowwise() += b.value.col(0).transpose();
    Parameter* Wp = &W;
    Parameter* bp = &b;
    return push(std::move(y), [x, Wp, bp](Tape& t, int self) {
        const Mat& dy = t.grad(self);
        t.grad(x).noalias() += dy * Wp->value;
        Wp->grad.noalias() += dy.transpose() * t.nodes_[x].value;
        bp->grad.col(0) += dy.colwise().sum().transpose();
    });
}

int Tape::tanh_op(int x) {
    Mat y = nodes_[x].value.array().tanh().matrix();
    return push(std::move(y), [x](Tape& t, int self) {
        t.grad(x).array() += t.grad(self).array() * (1.0 - t.nodes_[self].value.array().square());
    });
}

int Tape::sigmoid(int x) {
    Mat y = (1.0 / (1.0 + (-nodes_[x].value.array()).exp())).matrix();
    return push(std::move(y), [x](Tape& t, int self) {
        const auto& v = t.nodes_[self].value.array();
        t.grad(x).array() += t.grad(self).array() * v * (1.0 - v);
    });
}

int Tape::scale(int x, double c) {
    return push(c * nodes_[x].value,
                [x, c](Tape& t, int self) { t.grad(x) += c * t.grad(self); });
}

int Tape::add(int a, int b) {
    if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
        nodes_[a].value.cols() != nodes_[b].value.cols()) {
        throw std::runtime_error("add: shape mismatch");
    }
    return push(nodes_[a].value + nodes_[b].value, [a, b](Tape& t, int self) {
        t.grad(a) += t.grad(self);
        t.grad(b) += t.grad(self);
    });
}

int Tape::sub(int a, int b) {
    if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
        nodes_[a].value.cols() != nodes_[b].value.cols()) {
        throw std::runtime_error("sub: shape mismatch");
    }
    return push(nodes_[a].value - nodes_[b].value, [a, b](Tape& t, int self) {
        t.grad(a) += t.grad(self);
        t.grad(b) -= t.grad(self);
    });
}

int Tape::concat_cols(int a, int b) {
    const Mat& A = nodes_[a].value;
    const Mat& B = nodes_[b].value;
    if (A.rows() != B.rows()) throw std::runtime_error("concat: row mismatch");
    Mat y(A.rows(), A.cols() + B.cols());
    y << A, B;
    const int ac = static_cast<int>(A.cols());
    return push(std::move(y), [a, b, ac](Tape& t, int self) {
        const Mat& dy = t.grad(self);
        t.grad(a) += dy.leftCols(ac);
        t.grad(b) += dy.rightCols(dy.cols() - ac);
    });
}

int Tape::matmul(int a, int b) {
    const Mat& A = nodes_[a].value;
    const Mat& B = nodes_[b].value;
    if (A.cols() != B.rows()) throw std::runtime_error("matmul: shape mismatch");
    return push(A * B, [a, b](Tape& t, int self) {
        const Mat& dy = t.grad(self);
        t.grad(a).noalias() += dy * t.nodes_[b].value.transpose();
        t.grad(b).noalias() += t.nodes_[a].value.transpose() * dy;
    });
}

int Tape::l1_loss(int pred, const Mat& target) {
    const Mat& P = nodes_[pred].value;
    if (P.rows() != target.rows() || P.cols() != target.cols()) {
        throw std::runtime_error("l1_loss: shape mismatch");
    }
    const double n = static_cast<double>(P.size());
    Mat y(1, 1);
    y(0, 0) = (P - target).array().abs().sum() / n;
    Mat diff_sign = (P - target).array().sign().matrix();
    return push(std::move(y), [pred, n, diff_sign](Tape& t, int self) {
        t.grad(pred) += (t.grad(self)(0, 0) / n) * diff_sign;
    });
}

int Tape::gaussian_kl(int mu, int sigma) {
    const Mat& M = nodes_[mu].value;
    const Mat& S = nodes_[sigma].value;
    if (M.rows() != S.rows() || M.cols() != S.cols()) {
        throw std::runtime_error("gaussian_kl: shape mismatch");
    }
    if ((S.array() <= 0.0).any()) throw std::runtime_error("gaussian_kl: sigma must be positive");
    const double batch = static_cast<double>(M.rows());
    Mat y(1, 1);
    y(0, 0) = 0.5 * (M.array().square() + S.array().square() - 1.0 - 2.0 * S.array().log()).sum() /
              batch;
    return push(std::move(y), [mu, sigma, batch](Tape& t, int self) {
        const double g = t.grad(self)(0, 0) / batch;
        t.grad(mu) += g * t.nodes_[mu].value;
        t.grad(sigma).array() +=
            g * (t.nodes_[sigma].value.array() - t.nodes_[sigma].value.array().inverse());
    });
}

int Tape::reparameterize(int mu, int sigma, const Mat& eps) {
    const Mat& M = nodes_[mu].value;
    const Mat& S = nodes_[sigma].value;
    if (M.rows() != eps.rows() || M.cols() != eps.cols()) {
        throw std::runtime_error("reparameterize: shape mismatch");
    }
    Mat y = M + (S.array() * eps.array()).matrix();
    Mat eps_copy = eps;
    return push(std::move(y), [mu, sigma, eps_copy](Tape& t, int self) {
        t.grad(mu) += t.grad(self);
        t.grad(sigma).array() += t.grad(self).array() * eps_copy.array();
    });
}

int Tape::masked_row_softmax(int logits, const Eigen::MatrixXi& mask) {
    const Mat& Z = nodes_[logits].value;
    if (Z.rows() != mask.rows() || Z.cols() != mask.cols()) {
        throw std::runtime_error("masked_row_softmax: shape mismatch");
    }
    Mat y = Mat::Zero(Z.rows(), Z.cols());
    for (int i = 0; i < Z.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < Z.cols(); ++j) {
            if (mask(i, j)) mx = std::max(mx, Z(i, j));
        }
        if (!std::isfinite(mx)) throw std::runtime_error("masked_row_softmax: fully masked row");
        double sum = 0.0;
        for (int j = 0; j < Z.cols(); ++j) {
            if (mask(i, j)) {
                y(i, j) = std::exp(Z(i, j) - mx);
                sum += y(i, j);
            }
        }
        for (int j = 0; j < Z.cols(); ++j) y(i, j) /= sum;
    }
    Eigen::MatrixXi mask_copy = mask;
    return push(std::move(y), [logits, mask_copy](Tape& t, int self) {
        const Mat& W = t.nodes_[self].value;
        const Mat& dW = t.grad(self);
        Mat& dZ = t.grad(logits);
        for (int i = 0; i < W.rows(); ++i) {
            double dot = 0.0;
            for (int j = 0; j < W.cols(); ++j) dot += dW(i, j) * W(i, j);
            for (int j = 0; j < W.cols(); ++j) {
                if (mask_copy(i, j)) dZ(i, j) += W(i, j) * (dW(i, j) - dot);
            }
        }
    });
}

int Tape::blend_parts(int weights, int g, int parts, int per_part) {
    const Mat& W = nodes_[weights].value;  // V x P
    const Mat& G = nodes_[g].value;        // B x P*per_part
    if (W.cols() != parts || G.cols() != static_cast<long>(parts) * per_part) {
        throw std::runtime_error("blend_parts: shape mismatch");
    }
    const int V = static_cast<int>(W.rows());
    const int B = static_cast<int>(G.rows());
    Mat y(B, static_cast<long>(V) * per_part);
    Mat gm(parts, per_part), bm(V, per_part);
    for (int n = 0; n < B; ++n) {
        for (int p = 0; p < parts; ++p) {
            for (int c = 0; c < per_part; ++c) gm(p, c) = G(n, p * per_part + c);
        }
        bm.noalias() = W * gm;
        for (int v = 0; v < V; ++v) {
            for (int c = 0; c < per_part; ++c) y(n, v * per_part + c) = bm(v, c);
        }
    }
    return push(std::move(y), [weights, g, parts, per_part, V, B](Tape& t, int self) {
        const Mat& W = t.nodes_[weights].value;
        const Mat& G = t.nodes_[g].value;
        const Mat& dY = t.grad(self);
        Mat dbm(V, per_part), gm(parts, per_part);
        for (int n = 0; n < B; ++n) {
            for (int v = 0; v < V; ++v) {
                for (int c = 0; c < per_part; ++c) dbm(v, c) = dY(n, v * per_part + c);
            }
            for (int p = 0; p < parts; ++p) {
                for (int c = 0; c < per_part; ++c) gm(p, c) = G(n, p * per_part + c);
            }
            t.grad(weights).noalias() += dbm * gm.transpose();
            Mat dgm = W.transpose() * dbm;  // P x per_part
            for (int p = 0; p < parts; ++p) {
                for (int c = 0; c < per_part; ++c) t.grad(g)(n, p * per_part + c) += dgm(p, c);
            }
        }
    });
}

int Tape::weighted_sum(const std::vector<std::pair<int, double>>& terms) {
    Mat y(1, 1);
    y(0, 0) = 0.0;
    for (const auto& [id, coeff] : terms) {
        if (nodes_[id].value.size() != 1) throw std::runtime_error("weighted_sum: non-scalar term");
        y(0, 0) += coeff * nodes_[id].value(0, 0);
    }
    auto terms_copy = terms;
    return push(std::move(y), [terms_copy](Tape& t, int self) {
        for (const auto& [id, coeff] : terms_copy) {
            t.grad(id)(0, 0) += coeff * t.grad(self)(0, 0);
        }
    });
}

void Tape::backward(int root) { backward(root, Mat::Ones(nodes_[root].value.rows(), nodes_[root].value.cols())); }

void Tape::backward(int root, const Mat& seed) { backward_multi({{root, seed}}); }

void Tape::backward_multi(const std::vector<std::pair<int, Mat>>& seeds) {
    int top = -1;
    for (const auto& [root, seed] : seeds) {
        if (seed.rows() != nodes_[root].value.rows() ||
            seed.cols() != nodes_[root].value.cols()) {
            throw std::runtime_error("backward: seed shape mismatch");
        }
        nodes_[root].grad += seed;
        top = std::max(top, root);
    }
    for (int i = top; i >= 0; --i) {
        if (nodes_[i].backprop) nodes_[i].backprop(*this, i);
    }
}

AdamState::AdamState(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Parameter* p : params_) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void AdamState::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (!p.grad.allFinite()) {
            throw std::runtime_error("adam_step: non-finite gradient in " + p.name);
        }
        m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * p.grad;
        v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * p.grad.cwiseProduct(p.grad);
        const Mat mhat = m_[k] / bc1;
        const Mat vhat = v_[k] / bc2;
        p.value.array() -= config_.lr * mhat.array() / (vhat.array().sqrt() + config_.epsilon);
    }
}

}  // namespace bodyrep::nn
