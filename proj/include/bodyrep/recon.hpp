#pragma once

#include <memory>
#include <vector>

#include <Eigen/Sparse>

#include "bodyrep/deform.hpp"
#include "bodyrep/mesh.hpp"

namespace bodyrep {

/// Pre-factored sparse system that maps per-vertex transforms back to vertex
/// positions. The matrix depends only on connectivity and cotangent weights,
/// so one factorization serves any number of decodes. The anchor vertex is
/// eliminated (pinned to its reference position), which keeps the reduced
/// system symmetric positive definite.
class ReconSolver {
public:
    ReconSolver(const Mesh& ref, const CotanWeights& weights, int anchor = 0);

    /// Solve for vertex positions given per-vertex transforms T_i.
    std::vector<Vec3> solve(const std::vector<Mat3>& transforms) const;

    /// Adjoint solve: given dL/dp (per vertex), returns dL/dT_i. Shares the
    /// factorization with solve(); the matrix is symmetric.
    std::vector<Mat3> adjoint(const std::vector<Vec3>& grad_positions) const;

    int anchor() const { return anchor_; }
    const Mesh& reference() const { return ref_; }
    const CotanWeights& weights() const { return weights_; }
    long factorization_count() const { return factorization_count_; }

    /// Max-norm residual of the reduced system from the most recent solve,
    /// relative to the right-hand side.
    double last_relative_residual() const { return last_residual_; }

private:
    Eigen::VectorXd assemble_rhs(const std::vector<Mat3>& transforms, int coord) const;

    Mesh ref_;
    CotanWeights weights_;
    int anchor_ = 0;
    std::vector<int> free_index_;  // vertex -> row in reduced system, -1 for anchor
    std::vector<int> free_vertex_; // row -> vertex
    Eigen::SparseMatrix<double> reduced_;
    Eigen::SparseMatrix<double> anchor_column_;  // reduced x 1 coupling to the anchor
    std::shared_ptr<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>> llt_;
    long factorization_count_ = 0;
    mutable double last_residual_ = 0.0;
};

/// Rebuild per-vertex transforms from an (unscaled) feature vector.
std::vector<Mat3> feature_transforms(const AcapFeature& f);

/// Full decode: feature -> transforms -> positions on the reference
/// connectivity.
Mesh decode_acap(const ReconSolver& solver, const AcapFeature& f);

/// Chain rule through feature_transforms: given dL/dT_i, accumulate dL/df.
void feature_transform_backward(const AcapFeature& f, const std::vector<Mat3>& grad_transforms,
                                Eigen::VectorXd& grad_feature);

}  // namespace bodyrep
