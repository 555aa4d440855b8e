#include "bodyrep/recon.hpp"

#include <stdexcept>

namespace bodyrep {

ReconSolver::ReconSolver(const Mesh& ref, const CotanWeights& weights, int anchor)
    : ref_(ref), weights_(weights), anchor_(anchor) {
    const int n = ref_.num_vertices();
    if (anchor_ < 0 || anchor_ >= n) throw std::runtime_error("ReconSolver: anchor out of range");
    if (!is_connected(ref_)) throw std::runtime_error("ReconSolver: mesh not connected");

    free_index_.assign(n, -1);
    free_vertex_.reserve(n - 1);
    for (int i = 0; i < n; ++i) {
        if (i == anchor_) continue;
        free_index_[i] = static_cast<int>(free_vertex_.size());
        free_vertex_.push_back(i);
    }

    // A has diagonal 2*sum_j c_ij and off-diagonal -2*c_ij; the anchor row and
    // column are eliminated, with the column kept to move the pinned value to
    // the right-hand side.
    std::vector<Eigen::Triplet<double>> trips, anchor_trips;
    for (int i = 0; i < n; ++i) {
        const auto& nbr = weights_.neighbors[i];
        const auto& wts = weights_.weights[i];
        double diag = 0.0;
        for (size_t k = 0; k < nbr.size(); ++k) {
            diag += 2.0 * wts[k];
            if (i == anchor_) continue;
            if (nbr[k] == anchor_) {
                anchor_trips.emplace_back(free_index_[i], 0, -2.0 * wts[k]);
            } else {
                trips.emplace_back(free_index_[i], free_index_[nbr[k]], -2.0 * wts[k]);
            }
        }
        if (i != anchor_) trips.emplace_back(free_index_[i], free_index_[i], diag);
    }
    reduced_.resize(n - 1, n - 1);
    reduced_.setFromTriplets(trips.begin(), trips.end());
    anchor_column_.resize(n - 1, 1);
    anchor_column_.setFromTriplets(anchor_trips.begin(), anchor_trips.end());

    llt_ = std::make_shared<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>>();
    llt_->compute(reduced_);
    ++factorization_count_;
    if (llt_->info() != Eigen::Success) {
        throw std::runtime_error("ReconSolver: factorization failed (matrix not SPD)");
    }
}

Eigen::VectorXd ReconSolver::assemble_rhs(const std::vector<Mat3>& transforms, int coord) const {
    const int n = ref_.num_vertices();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n - 1);
    for (int i = 0; i < n; ++i) {
        if (i == anchor_) continue;
        const auto& nbr = weights_.neighbors[i];
        const auto& wts = weights_.weights[i];
        double bi = 0.0;
        for (size_t k = 0; k < nbr.size(); ++k) {
            const int j = nbr[k];
            const Vec3 q = ref_.vertices[i] - ref_.vertices[j];
            bi += wts[k] * ((transforms[i] + transforms[j]) * q)[coord];
        }
        b[free_index_[i]] = bi;
    }
    return b;
}

std::vector<Vec3> ReconSolver::solve(const std::vector<Mat3>& transforms) const {
    const int n = ref_.num_vertices();
    if (static_cast<int>(transforms.size()) != n) {
        throw std::runtime_error("ReconSolver: transform count mismatch");
    }
    std::vector<Vec3> out(n);
    out[anchor_] = ref_.vertices[anchor_];
    const Eigen::VectorXd anchor_col = Eigen::VectorXd(anchor_column_);
    double max_residual = 0.0;
    for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd b = assemble_rhs(transforms, c);
        b -= anchor_col * ref_.vertices[anchor_][c];
        const Eigen::VectorXd x = llt_->solve(b);
        const double bn = b.lpNorm<Eigen::Infinity>();
        const double rn = (reduced_ * x - b).lpNorm<Eigen::Infinity>();
        max_residual = std::max(max_residual, bn > 0 ? rn / bn : rn);
        for (int k = 0; k < n - 1; ++k) out[free_vertex_[k]][c] = x[k];
    }
    last_residual_ = max_residual;
    return out;
}

std::vector<Mat3> ReconSolver::adjoint(const std::vector<Vec3>& grad_positions) const {
    const int n = ref_.num_vertices();
    if (static_cast<int>(grad_positions.size()) != n) {
        throw std::runtime_error("ReconSolver: gradient count mismatch");
    }
    // lambda solves A^T lambda = dL/dp on the free vertices; A is symmetric.
    std::vector<Vec3> lambda(n, Vec3::Zero());
    for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd g(n - 1);
        for (int k = 0; k < n - 1; ++k) g[k] = grad_positions[free_vertex_[k]][c];
        const Eigen::VectorXd l = llt_->solve(g);
        for (int k = 0; k < n - 1; ++k) lambda[free_vertex_[k]][c] = l[k];
    }
    // b_i = sum_j c_ij (T_i + T_j)(q_i - q_j) gives
    // dL/dT_i = sum_j c_ij (lambda_i - lambda_j)(q_i - q_j)^T with lambda = 0
    // at the anchor.
    std::vector<Mat3> grad(n, Mat3::Zero());
    for (int i = 0; i < n; ++i) {
        const auto& nbr = weights_.neighbors[i];
        const auto& wts = weights_.weights[i];
        for (size_t k = 0; k < nbr.size(); ++k) {
            const int j = nbr[k];
            const Vec3 q = ref_.vertices[i] - ref_.vertices[j];
            grad[i] += wts[k] * (lambda[i] - lambda[j]) * q.transpose();
        }
    }
    return grad;
}

std::vector<Mat3> feature_transforms(const AcapFeature& f) {
    if (f.size() % 9 != 0) throw std::runtime_error("feature_transforms: bad feature length");
    const int n = static_cast<int>(f.size() / 9);
    std::vector<Mat3> T(n);
    for (int i = 0; i < n; ++i) T[i] = feature_vertex(f, i).transform();
    return T;
}

Mesh decode_acap(const ReconSolver& solver, const AcapFeature& f) {
    if (f.size() != 9 * solver.reference().num_vertices()) {
        throw std::runtime_error("decode_acap: feature length does not match solver connectivity");
    }
    Mesh out = solver.reference();
    out.vertices = solver.solve(feature_transforms(f));
    return out;
}

void feature_transform_backward(const AcapFeature& f, const std::vector<Mat3>& grad_transforms,
                                Eigen::VectorXd& grad_feature) {
    const int n = static_cast<int>(f.size() / 9);
    if (grad_feature.size() != f.size()) grad_feature = Eigen::VectorXd::Zero(f.size());
    for (int i = 0; i < n; ++i) {
        const VertexDeform d = feature_vertex(f, i);
        const Mat3 R = axis_angle_to_rot(d.r);
        const Mat3 S = vec_to_sym(d.s);
        const Mat3& G = grad_transforms[i];
        // T = R(r) * S(s): dL/dr_k = <G, dR/dr_k * S>, dL/dS = R^T G.
        for (int k = 0; k < 3; ++k) {
            grad_feature[9 * i + k] += (rotation_derivative(d.r, k) * S).cwiseProduct(G).sum();
        }
        const Mat3 GS = R.transpose() * G;
        grad_feature[9 * i + 3] += GS(0, 0);
        grad_feature[9 * i + 4] += GS(0, 1) + GS(1, 0);
        grad_feature[9 * i + 5] += GS(0, 2) + GS(2, 0);
        grad_feature[9 * i + 6] += GS(1, 1);
        grad_feature[9 * i + 7] += GS(1, 2) + GS(2, 1);
        grad_feature[9 * i + 8] += GS(2, 2);
    }
}

}  // namespace bodyrep
