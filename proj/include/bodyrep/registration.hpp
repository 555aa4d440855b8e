#pragma once

#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "bodyrep/fitting.hpp"
#include "bodyrep/model.hpp"
#include "bodyrep/recon.hpp"

namespace bodyrep {

/// Part-local linear deformation basis: per-part PCA of corpus features
/// restricted to the part's rows (plus a one-ring halo), columns zero
/// elsewhere. f(w) = mean + C w.
struct DeformBasis {
    Eigen::VectorXd mean;           // 9V
    Eigen::SparseMatrix<double> C;  // 9V x K
    std::vector<int> column_part;   // owning part per column

    AcapFeature evaluate(const Eigen::VectorXd& w) const;
};

DeformBasis build_part_basis(const std::vector<AcapFeature>& corpus, const Mesh& ref,
                             const PartSegmentation& parts, int modes_per_part);

struct Landmark {
    int ref_index = -1;
    int target_index = -1;  // -1 when a raw position is given instead
    Vec3 position = Vec3::Zero();
};

std::vector<Landmark> load_landmarks(const std::string& path);

struct RegistrationProblem {
    Mesh reference;
    DeformBasis basis;
    Mesh target;
    std::vector<Landmark> landmarks;
    double lambda1 = 5.0;  // ICP
    double lambda2 = 1.0;  // landmarks
    double lambda3 = 0.3;  // sparsity
    int max_outer = 30;
    double rel_tol = 1e-6;
    double normal_angle_limit_deg = 60.0;
    double dist_limit_frac = 0.05;  // of target bbox diagonal
};

struct RegistrationResult {
    Mesh deformed;             // reference connectivity, reference frame
    Eigen::VectorXd w;
    RigidTransform transform;  // maps the deformed mesh into the target frame
    std::vector<double> energy_log;
    int rejected_correspondences = 0;  // at the last iteration
};

/// Alternating minimization of E_prior + l1*E_icp + l2*E_lan + l3*|w|_1 with
/// closest-point correspondences refreshed per outer iteration. Substeps are
/// guarded so the logged energy never increases; an increase after a
/// correspondence refresh terminates the loop instead.
RegistrationResult register_mesh(const RegistrationProblem& problem, const CotanWeights& weights);

void save_registration_report(const RegistrationResult& result, const std::string& path);

/// Local-global as-rigid-as-possible deformation with soft positional
/// landmark terms (weight 1e3). Returns the deformed mesh; energy is
/// non-increasing per iteration.
Mesh arap_deform(const Mesh& mesh, const std::vector<std::pair<int, Vec3>>& landmark_targets,
                 int stiffness_iters, std::vector<double>* energy_log = nullptr);

struct HybridFitConfig {
    double lambda_icp = 5.0;
    double lambda_lan = 1.0;
    double lambda_prior = 1.0;
    double lambda_beta = 1.0;
    double lambda_theta = 1.0;
    int outer_iterations = 25;
    int latent_steps_per_outer = 20;
    double lr_latent = 3e-2;
    double dist_limit_frac = 0.25;  // correspondence cap, of scan bbox diagonal
};

struct HybridFitResult {
    LatentCode code;
    Mesh model_mesh;  // pure decode at the fitted latents
    Mesh free_mesh;   // free-vertex result
    std::vector<double> energy_log;
};

/// FAUST-style fit: the decoded transforms act as an edge prior while the
/// vertices themselves stay free. Landmarks are (reference index, scan
/// position) pairs; the scan is brought into the reference frame by landmark
/// Procrustes before optimization.
HybridFitResult hybrid_fit(ModelParams& params, const ReconSolver& solver,
                           const std::vector<Vec3>& scan,
                           const std::vector<std::pair<int, Vec3>>& landmarks,
                           const HybridFitConfig& config);

}  // namespace bodyrep
