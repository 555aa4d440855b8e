#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bodyrep/mesh.hpp"

namespace bodyrep {

/// Per-vertex deformation split into an axis-angle rotation part and the
/// packed upper triangle of the symmetric stretch factor.
struct VertexDeform {
    Vec3 r = Vec3::Zero();
    Eigen::Matrix<double, 6, 1> s = (Eigen::Matrix<double, 6, 1>() << 1, 0, 0, 1, 0, 1).finished();

    Mat3 transform() const { return axis_angle_to_rot(r) * vec_to_sym(s); }
};

/// Flat feature vector, 9 values per vertex laid out [r; s].
using AcapFeature = Eigen::VectorXd;

inline VertexDeform feature_vertex(const AcapFeature& f, int i) {
    VertexDeform d;
    d.r = f.segment<3>(9 * i);
    d.s = f.segment<6>(9 * i + 3);
    return d;
}

inline void set_feature_vertex(AcapFeature& f, int i, const VertexDeform& d) {
    f.segment<3>(9 * i) = d.r;
    f.segment<6>(9 * i + 3) = d.s;
}

/// Per-dimension affine map onto [-0.95, 0.95] fitted on a training corpus.
/// Degenerate dimensions (max == min) map to 0 and unscale back to the
/// constant.
class FeatureScaler {
public:
    FeatureScaler() = default;
    FeatureScaler(Eigen::VectorXd min, Eigen::VectorXd max);

    static FeatureScaler fit(const std::vector<Eigen::VectorXd>& corpus);

    Eigen::VectorXd scale(const Eigen::VectorXd& x) const;
    Eigen::VectorXd unscale(const Eigen::VectorXd& y) const;

    /// d(scaled)/d(raw) per dimension; 0 on degenerate dimensions.
    Eigen::VectorXd slope() const;
    /// d(raw)/d(scaled) per dimension; 0 on degenerate dimensions.
    Eigen::VectorXd inverse_slope() const;

    int dim() const { return static_cast<int>(min_.size()); }
    const Eigen::VectorXd& minimum() const { return min_; }
    const Eigen::VectorXd& maximum() const { return max_; }

    static constexpr double kRange = 0.95;

private:
    Eigen::VectorXd min_, max_;
};

struct DeformOptions {
    // Vertices whose one-ring spans fewer than 3 directions get a Tikhonov
    // term mu = rank_mu_scale * trace(A) added to the normal matrix.
    double rank_mu_scale = 1e-8;
};

/// Weighted least-squares deformation gradient of vertex i (Eq. of the
/// one-ring fit). `flagged`, when given, receives true if the normal matrix
/// needed regularization.
Mat3 local_deform_gradient(const Mesh& ref, const Mesh& target, const CotanWeights& weights,
                           int vertex, const DeformOptions& opts = {}, bool* flagged = nullptr);

/// Raw (principal branch) axis-angle field of the target relative to ref.
struct RawRotations {
    std::vector<Vec3> axis;      // unit axes (zero vector for identity)
    std::vector<double> angle;   // in [0, pi]
};

/// Deterministic greedy branch assignment: BFS from vertex 0, each vertex
/// picks the axis sign and 2*pi shift (k in [-2,2]) minimizing the squared
/// distance to its already-fixed one-ring neighbors.
std::vector<Vec3> make_consistent(const Mesh& ref, const RawRotations& raw);

/// Candidate axis-angle vectors for one vertex; shared with the tests'
/// brute-force oracle so the search space matches by construction.
std::vector<Vec3> rotation_branch_candidates(const Vec3& axis, double angle,
                                             const Vec3& reference_direction);

AcapFeature encode_acap(const Mesh& ref, const Mesh& target, const CotanWeights& weights,
                        const DeformOptions& opts = {});

void save_acap(const AcapFeature& f, const std::string& path);
AcapFeature load_acap(const std::string& path);

void save_scaler(const FeatureScaler& s, const std::string& path);
FeatureScaler load_scaler(const std::string& path);

}  // namespace bodyrep
