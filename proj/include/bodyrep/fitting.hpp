#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bodyrep/model.hpp"
#include "bodyrep/recon.hpp"

namespace bodyrep {

struct FitConfig {
    double lambda = 1e6;
    double lambda_beta = 1.0;
    double lambda_theta = 1.0;
    int max_iterations = 200;
    double lr_latent = 5e-2;
    double lr_rigid = 1e-2;  // only used by fit_to_2d_joints
    bool fit_rigid = false;  // when false, R = I and t = 0 stay fixed
};

struct FitResult {
    LatentCode code;
    RigidTransform transform;
    Mesh mesh;  // decoded at the fitted latents (before the rigid transform)
    std::vector<double> objective_log;  // accepted evaluations, one per iteration
};

/// Decoder-only latent fitting: Adam over (e_s, e_p) differentiated end to
/// end through the decoder MLPs, the feature unscaling and the sparse
/// reconstruction solve (adjoint with the cached factorization). With
/// fit_rigid set, (R, t) are updated each iteration by Procrustes, their
/// closed-form optimum at the current vertices. A backtracking guard keeps
/// the objective log monotone: a step that raises the objective by more than
/// 1e-6 relative is rolled back and the learning rate halved once.
FitResult fit_to_mesh(ModelParams& params, const ReconSolver& solver, const Mesh& target,
                      const FitConfig& config);

std::vector<Vec3> estimate_joints(const Mesh& mesh,
                                  const std::vector<std::vector<int>>& joint_sets);

struct CameraModel {
    Mat3 K = Mat3::Identity();
    int width = 0, height = 0;

    Eigen::Vector2d project(const Vec3& x) const {
        const Vec3 p = K * x;
        return {p.x() / p.z(), p.y() / p.z()};
    }
};

CameraModel load_camera(const std::string& path);

struct JointPairPenalty {
    int part_a = 0, part_b = 0;
    Vec3 hinge = Vec3::UnitX();  // reference axis fixing the bend sign
};

struct JointSets {
    std::vector<std::vector<int>> sets;
    std::vector<JointPairPenalty> pairs;
};

JointSets load_joint_sets(const std::string& path);

struct JointFitProblem {
    CameraModel camera;
    std::vector<Eigen::Vector2d> target_joints;   // pixels
    std::vector<std::vector<int>> joint_sets;     // one vertex set per target joint
    std::vector<JointPairPenalty> monitored_pairs;
    double lambda = 55.0;
    double lambda_g = 400.0;
    double lambda_beta = 5.0;
    double lambda_theta = 10.0;
    double gm_scale = 100.0;  // Geman-McClure sigma, pixels
    int max_iterations = 400;
    double lr_latent = 1e-2;
    double lr_rigid = 1e-2;
    bool fit_rigid = true;
    // Zero means: estimate the starting translation from the joint spread
    // (focal * 3D extent / 2D extent) and the target centroid.
    Vec3 translation_init = Vec3::Zero();
};

struct Joint2dFitResult {
    LatentCode code;
    RigidTransform transform;
    std::vector<double> objective_log;
    double reprojection_rms = 0.0;  // pixels, at the solution
};

/// 2D-joint fitting with the robust Geman-McClure data term and the
/// bend-angle prior on monitored part pairs, optimized like fit_to_mesh.
Joint2dFitResult fit_to_2d_joints(ModelParams& params, const ReconSolver& solver,
                                  const JointFitProblem& problem);

double geman_mcclure(const Eigen::Vector2d& residual, double sigma);

/// Bend-angle prior on the (unscaled) coarse feature: for each monitored part
/// pair, phi = hinge . log(R_a^T R_b) and the penalty is exp(max(0, -phi))^2.
/// grad, when non-null, receives d/d(coarse rotation entries).
double bend_penalty(const CoarseFeature& g_unscaled,
                    const std::vector<JointPairPenalty>& pairs,
                    Eigen::VectorXd* grad = nullptr);

Mesh interpolate(ModelParams& params, const ReconSolver& solver, const LatentCode& a,
                 const LatentCode& b, double alpha);

std::vector<std::vector<Mesh>> bilinear_grid(ModelParams& params, const ReconSolver& solver,
                                             const LatentCode& a, const LatentCode& b,
                                             int shape_steps, int pose_steps);

enum class SampleKind { Shape, Pose, Both };

std::vector<Mesh> sample_bodies(ModelParams& params, const ReconSolver& solver, int count,
                                SampleKind kind, uint64_t seed);

Mesh pose_transfer(ModelParams& params, const ReconSolver& solver, const LatentCode& shape_donor,
                   const LatentCode& pose_donor);

double med(const Mesh& a, const Mesh& b);
/// MED after optimally aligning b onto a.
double med_after_procrustes(const Mesh& a, const Mesh& b);

/// Static bounding-volume hierarchy over mesh triangles for exact
/// point-to-mesh distance queries.
class AabbTree {
public:
    explicit AabbTree(const Mesh& mesh);

    struct Hit {
        double distance = 0.0;
        int triangle = -1;
        Vec3 point = Vec3::Zero();
    };
    Hit nearest(const Vec3& query) const;

private:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1;    // internal children
        int begin = 0, end = 0;       // leaf triangle range
    };
    int build(int begin, int end);
    void query(int node, const Vec3& q, Hit& best) const;

    const Mesh* mesh_;
    std::vector<int> order_;           // triangle ids, leaf ranges index this
    std::vector<Vec3> centroids_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct PmdResult {
    std::vector<double> distances;  // kept points, input order
    double mean = 0.0;
    double stddev = 0.0;
    size_t count = 0;
};

/// Exact point-to-mesh distances via the AABB tree. Points whose nearest
/// triangle lies entirely in the excluded vertex set are dropped.
PmdResult pmd(const std::vector<Vec3>& cloud, const Mesh& mesh,
              const std::set<int>* exclude_vertices = nullptr);

std::vector<Vec3> load_xyz(const std::string& path);
void save_xyz(const std::vector<Vec3>& cloud, const std::string& path);

}  // namespace bodyrep
