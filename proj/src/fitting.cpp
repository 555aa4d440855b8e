#include "bodyrep/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace bodyrep {

using nn::Mat;
using nn::Parameter;
using nn::Tape;

std::vector<Vec3> estimate_joints(const Mesh& mesh,
                                  const std::vector<std::vector<int>>& joint_sets) {
    std::vector<Vec3> joints;
    joints.reserve(joint_sets.size());
    for (const auto& set : joint_sets) {
        if (set.empty()) throw std::runtime_error("estimate_joints: empty joint vertex set");
        Vec3 mean = Vec3::Zero();
        for (int v : set) {
            if (v < 0 || v >= mesh.num_vertices()) {
                throw std::runtime_error("estimate_joints: vertex index out of range");
            }
            mean += mesh.vertices[v];
        }
        joints.push_back(mean / static_cast<double>(set.size()));
    }
    return joints;
}

CameraModel load_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_camera: cannot open " + path);
    nlohmann::json j;
    in >> j;
    CameraModel cam;
    const auto K = j.at("K");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.K(r, c) = K.at(r).at(c).get<double>();
    }
    cam.width = j.value("width", 0);
    cam.height = j.value("height", 0);
    if (std::abs(cam.K(0, 0)) < 1e-12 || std::abs(cam.K(1, 1)) < 1e-12) {
        throw std::runtime_error("load_camera: degenerate intrinsics");
    }
    return cam;
}

JointSets load_joint_sets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_joint_sets: cannot open " + path);
    nlohmann::json j;
    in >> j;
    JointSets out;
    for (const auto& s : j.at("joints")) out.sets.push_back(s.get<std::vector<int>>());
    if (j.contains("pairs")) {
        for (const auto& p : j.at("pairs")) {
            JointPairPenalty pen;
            pen.part_a = p.at("a").get<int>();
            pen.part_b = p.at("b").get<int>();
            const auto h = p.at("hinge").get<std::vector<double>>();
            pen.hinge = Vec3(h.at(0), h.at(1), h.at(2)).normalized();
            out.pairs.push_back(pen);
        }
    }
    return out;
}

double med(const Mesh& a, const Mesh& b) {
    if (a.num_vertices() != b.num_vertices()) throw std::runtime_error("med: vertex count mismatch");
    double sum = 0.0;
    for (int i = 0; i < a.num_vertices(); ++i) sum += (a.vertices[i] - b.vertices[i]).norm();
    return sum / a.num_vertices();
}

double med_after_procrustes(const Mesh& a, const Mesh& b) {
    const RigidTransform rt = procrustes_align(b.vertices, a.vertices, false);
    Mesh aligned = b;
    for (auto& v : aligned.vertices) v = rt.apply(v);
    return med(a, aligned);
}

double geman_mcclure(const Eigen::Vector2d& residual, double sigma) {
    const double u = residual.squaredNorm();
    return u * sigma * sigma / (u + sigma * sigma);
}

double bend_penalty(const CoarseFeature& g_unscaled, const std::vector<JointPairPenalty>& pairs,
                    Eigen::VectorXd* grad) {
    if (grad) *grad = Eigen::VectorXd::Zero(g_unscaled.size());
    double total = 0.0;
    for (const auto& pair : pairs) {
        const Vec3 ra = g_unscaled.segment<3>(9 * pair.part_a);
        const Vec3 rb = g_unscaled.segment<3>(9 * pair.part_b);
        const Mat3 Ra = axis_angle_to_rot(ra);
        const Mat3 Rb = axis_angle_to_rot(rb);
        const Mat3 Rrel = Ra.transpose() * Rb;
        const Vec3 rho = rot_to_axis_angle(Rrel);
        const double phi = pair.hinge.dot(rho);
        const double active = std::max(0.0, -phi);
        const double term = std::exp(2.0 * active);  // exp(max(0,-phi))^2
        total += term;
        if (grad && phi < 0.0) {
            const double dterm_dphi = -2.0 * term;
            // phi = h . log(Ra^T Rb); perturbations enter through the right
            // Jacobians of the exponential map.
            const Vec3 w = so3_right_jacobian_inv(rho).transpose() * pair.hinge;
            const Vec3 d_rb = so3_right_jacobian(rb).transpose() * w;
            const Vec3 d_ra = -so3_right_jacobian(ra).transpose() * (Rrel * w);
            grad->segment<3>(9 * pair.part_a) += dterm_dphi * d_ra;
            grad->segment<3>(9 * pair.part_b) += dterm_dphi * d_rb;
        }
    }
    return total;
}

namespace {

struct LatentOptimizer {
    Parameter e_s, e_p, omega, t;
    std::unique_ptr<nn::AdamState> adam_latent, adam_rigid;
    bool fit_rigid = false;

    LatentOptimizer(const ModelConfig& config, double lr_latent, double lr_rigid, bool rigid)
        : e_s("fit_e_s", Mat::Zero(1, config.shape_dim)),
          e_p("fit_e_p", Mat::Zero(1, config.pose_dim)),
          omega("fit_omega", Mat::Zero(3, 1)),
          t("fit_t", Mat::Zero(3, 1)),
          fit_rigid(rigid) {
        nn::AdamConfig lat;
        lat.lr = lr_latent;
        adam_latent = std::make_unique<nn::AdamState>(std::vector<Parameter*>{&e_s, &e_p}, lat);
        if (fit_rigid) {
            nn::AdamConfig rig;
            rig.lr = lr_rigid;
            adam_rigid =
                std::make_unique<nn::AdamState>(std::vector<Parameter*>{&omega, &t}, rig);
        }
    }

    void zero_grad() {
        e_s.zero_grad();
        e_p.zero_grad();
        omega.zero_grad();
        t.zero_grad();
    }

    void step() {
        adam_latent->step();
        if (fit_rigid) adam_rigid->step();
    }

    void halve_lr() {
        adam_latent->set_lr(adam_latent->lr() * 0.5);
        if (fit_rigid) adam_rigid->set_lr(adam_rigid->lr() * 0.5);
    }

    struct Snapshot {
        Mat e_s, e_p, omega, t;
    };
    Snapshot snapshot() const { return {e_s.value, e_p.value, omega.value, t.value}; }
    void restore(const Snapshot& s) {
        e_s.value = s.e_s;
        e_p.value = s.e_p;
        omega.value = s.omega;
        t.value = s.t;
    }

    Mat3 rotation() const { return axis_angle_to_rot(Vec3(omega.value.col(0))); }
    Vec3 translation() const { return Vec3(t.value.col(0)); }
};

}  // namespace

FitResult fit_to_mesh(ModelParams& params, const ReconSolver& solver, const Mesh& target,
                      const FitConfig& config) {
    const int n = solver.reference().num_vertices();
    if (target.num_vertices() != n || target.triangles != solver.reference().triangles) {
        throw std::runtime_error("fit_to_mesh: target does not share the model connectivity");
    }
    // Latents move by Adam; the rigid block is closed-form, so it never joins
    // the gradient step.
    LatentOptimizer opt(params.config, config.lr_latent, config.lr_rigid, false);
    const Eigen::VectorXd inv_slope = params.scaler_f.inverse_slope();

    if (config.fit_rigid) {
        // Vertex correspondence is given, so the rigid part has a closed-form
        // warm start against the neutral decode.
        LatentCode zero{Eigen::VectorXd::Zero(params.config.shape_dim),
                        Eigen::VectorXd::Zero(params.config.pose_dim)};
        const DecodeResult dec0 = decode(params, zero);
        const std::vector<Vec3> p0 =
            solver.solve(feature_transforms(params.scaler_f.unscale(dec0.f_hat.row(0).transpose())));
        try {
            const RigidTransform rt = procrustes_align(p0, target.vertices, false);
            opt.omega.value.col(0) = rot_to_axis_angle(rt.rotation);
            opt.t.value.col(0) = rt.translation;
        } catch (const std::runtime_error&) {
            // Degenerate span: keep the identity start.
        }
    }

    FitResult result;
    double prev_obj = std::numeric_limits<double>::infinity();
    LatentOptimizer::Snapshot last = opt.snapshot();

    for (int iter = 0; iter < config.max_iterations; ++iter) {
        Tape tape;
        const DecoderNodes dec =
            decode_on_tape(tape, params, tape.param(opt.e_s), tape.param(opt.e_p));
        const Eigen::VectorXd f_scaled = tape.value(dec.f_hat).row(0).transpose();
        const AcapFeature f = params.scaler_f.unscale(f_scaled);
        const std::vector<Mat3> transforms = feature_transforms(f);
        const std::vector<Vec3> p = solver.solve(transforms);

        if (config.fit_rigid) {
            // The rigid block has a closed-form optimum at fixed vertices.
            try {
                const RigidTransform rt = procrustes_align(p, target.vertices, false);
                opt.omega.value.col(0) = rot_to_axis_angle(rt.rotation);
                opt.t.value.col(0) = rt.translation;
            } catch (const std::runtime_error&) {
            }
        }
        const Mat3 R = opt.rotation();
        const Vec3 tr = opt.translation();
        double data = 0.0;
        std::vector<Vec3> grad_p(n);
        for (int i = 0; i < n; ++i) {
            const Vec3 r = R * p[i] + tr - target.vertices[i];
            data += r.squaredNorm();
            grad_p[i] = 2.0 * config.lambda * (R.transpose() * r);
        }
        const double reg_s = opt.e_s.value.squaredNorm();
        const double reg_p = opt.e_p.value.squaredNorm();
        const double objective =
            config.lambda * data + config.lambda_beta * reg_s + config.lambda_theta * reg_p;
        if (!std::isfinite(objective)) throw std::runtime_error("fit_to_mesh: non-finite objective");

        if (objective > prev_obj * (1.0 + 1e-6)) {
            // Reject the last step and retry at half the learning rate.
            opt.restore(last);
            opt.halve_lr();
            continue;
        }
        prev_obj = objective;
        result.objective_log.push_back(objective);
        last = opt.snapshot();

        // Chain: dL/dp -> adjoint solve -> dL/dT -> dL/df -> scaled seed.
        const std::vector<Mat3> grad_T = solver.adjoint(grad_p);
        Eigen::VectorXd grad_f = Eigen::VectorXd::Zero(f.size());
        feature_transform_backward(f, grad_T, grad_f);
        Mat seed(1, f.size());
        seed.row(0) = (grad_f.array() * inv_slope.array()).matrix().transpose();

        opt.zero_grad();
        tape.backward(dec.f_hat, seed);
        opt.e_s.grad += 2.0 * config.lambda_beta * opt.e_s.value;
        opt.e_p.grad += 2.0 * config.lambda_theta * opt.e_p.value;
        opt.step();
    }

    // Final state at the last accepted snapshot.
    opt.restore(last);
    result.code.shape = opt.e_s.value.row(0).transpose();
    result.code.pose = opt.e_p.value.row(0).transpose();
    result.transform.rotation = opt.rotation();
    result.transform.translation = opt.translation();
    const DecodeResult dec = decode(params, result.code);
    result.mesh = decode_acap(solver, params.scaler_f.unscale(dec.f_hat.row(0).transpose()));
    return result;
}

Joint2dFitResult fit_to_2d_joints(ModelParams& params, const ReconSolver& solver,
                                  const JointFitProblem& problem) {
    if (problem.target_joints.size() < 6) {
        throw std::runtime_error("fit_to_2d_joints: need at least 6 joints");
    }
    if (problem.target_joints.size() != problem.joint_sets.size()) {
        throw std::runtime_error("fit_to_2d_joints: joint/vertex-set count mismatch");
    }
    if (std::abs(problem.camera.K.determinant()) < 1e-12) {
        throw std::runtime_error("fit_to_2d_joints: degenerate camera");
    }
    const int n = solver.reference().num_vertices();
    LatentOptimizer opt(params.config, problem.lr_latent, problem.lr_rigid, problem.fit_rigid);
    const Eigen::VectorXd inv_slope_f = params.scaler_f.inverse_slope();
    const Eigen::VectorXd inv_slope_g = params.scaler_g.inverse_slope();
    const double sigma = problem.gm_scale;

    if (problem.translation_init.norm() > 0) {
        opt.t.value.col(0) = problem.translation_init;
    } else if (problem.fit_rigid) {
        // Depth from the ratio of 3D to 2D joint spread at the neutral
        // decode, then center on the target joints.
        LatentCode zero{Eigen::VectorXd::Zero(params.config.shape_dim),
                        Eigen::VectorXd::Zero(params.config.pose_dim)};
        const DecodeResult dec0 = decode(params, zero);
        const std::vector<Vec3> p0 =
            solver.solve(feature_transforms(params.scaler_f.unscale(dec0.f_hat.row(0).transpose())));
        Vec3 lo3 = Vec3::Constant(1e300), hi3 = -lo3;
        Vec3 mean3 = Vec3::Zero();
        Eigen::Vector2d lo2(1e300, 1e300), hi2 = -lo2, mean2 = Eigen::Vector2d::Zero();
        for (size_t ji = 0; ji < problem.joint_sets.size(); ++ji) {
            Vec3 J = Vec3::Zero();
            for (int v : problem.joint_sets[ji]) J += p0[v];
            J /= static_cast<double>(problem.joint_sets[ji].size());
            lo3 = lo3.cwiseMin(J);
            hi3 = hi3.cwiseMax(J);
            mean3 += J;
            lo2 = lo2.cwiseMin(problem.target_joints[ji]);
            hi2 = hi2.cwiseMax(problem.target_joints[ji]);
            mean2 += problem.target_joints[ji];
        }
        mean3 /= static_cast<double>(problem.joint_sets.size());
        mean2 /= static_cast<double>(problem.target_joints.size());
        const double spread2 = (hi2 - lo2).norm();
        if (spread2 < 1e-9) throw std::runtime_error("fit_to_2d_joints: degenerate 2D joints");
        const double focal = 0.5 * (problem.camera.K(0, 0) + problem.camera.K(1, 1));
        const double tz = std::max(0.1, focal * (hi3 - lo3).norm() / spread2);
        Vec3 t0;
        t0.z() = tz - mean3.z();
        t0.x() = (mean2.x() - problem.camera.K(0, 2)) * tz / problem.camera.K(0, 0) - mean3.x();
        t0.y() = (mean2.y() - problem.camera.K(1, 2)) * tz / problem.camera.K(1, 1) - mean3.y();
        opt.t.value.col(0) = t0;
    }

    Joint2dFitResult result;
    double prev_obj = std::numeric_limits<double>::infinity();
    LatentOptimizer::Snapshot last = opt.snapshot();

    for (int iter = 0; iter < problem.max_iterations; ++iter) {
        Tape tape;
        const DecoderNodes dec =
            decode_on_tape(tape, params, tape.param(opt.e_s), tape.param(opt.e_p));
        const Eigen::VectorXd f_scaled = tape.value(dec.f_hat).row(0).transpose();
        const AcapFeature f = params.scaler_f.unscale(f_scaled);
        const std::vector<Vec3> p = solver.solve(feature_transforms(f));

        const Mat3 R = opt.rotation();
        const Vec3 tr = opt.translation();

        double data = 0.0, reproj_sq = 0.0;
        std::vector<Vec3> grad_p(n, Vec3::Zero());
        Vec3 dt = Vec3::Zero(), domega = Vec3::Zero();
        const Vec3 omega = Vec3(opt.omega.value.col(0));
        const Mat3 dR[3] = {rotation_derivative(omega, 0), rotation_derivative(omega, 1),
                            rotation_derivative(omega, 2)};
        bool behind_camera = false;
        for (size_t ji = 0; ji < problem.target_joints.size() && !behind_camera; ++ji) {
            const auto& set = problem.joint_sets[ji];
            if (set.empty()) throw std::runtime_error("fit_to_2d_joints: empty joint set");
            Vec3 J = Vec3::Zero();
            for (int v : set) J += p[v];
            J /= static_cast<double>(set.size());
            const Vec3 xc = R * J + tr;
            const Vec3 kx = problem.camera.K * xc;
            if (kx.z() <= 1e-6) {
                behind_camera = true;
                break;
            }
            const Eigen::Vector2d proj(kx.x() / kx.z(), kx.y() / kx.z());
            const Eigen::Vector2d res = proj - problem.target_joints[ji];
            data += geman_mcclure(res, sigma);
            reproj_sq += res.squaredNorm();

            const double u = res.squaredNorm();
            const double drho_du = sigma * sigma * sigma * sigma /
                                   ((u + sigma * sigma) * (u + sigma * sigma));
            const Eigen::Vector2d dres = 2.0 * drho_du * res;
            // d proj / d xc through the pinhole division.
            Eigen::Matrix<double, 2, 3> dproj;
            dproj.row(0) = (problem.camera.K.row(0) - proj.x() * problem.camera.K.row(2)) / kx.z();
            dproj.row(1) = (problem.camera.K.row(1) - proj.y() * problem.camera.K.row(2)) / kx.z();
            const Vec3 dxc = dproj.transpose() * dres;  // dL/dxc (per joint, lambda applied later)
            const Vec3 dJ = R.transpose() * dxc;
            for (int v : set) {
                grad_p[v] += (problem.lambda / static_cast<double>(set.size())) * dJ;
            }
            dt += problem.lambda * dxc;
            for (int k = 0; k < 3; ++k) {
                domega[k] += problem.lambda * dxc.dot(dR[k] * J);
            }
        }

        if (behind_camera) {
            // A step pushed some joint past the image plane; reject it.
            if (result.objective_log.empty()) {
                throw std::runtime_error("fit_to_2d_joints: joints behind the camera at start");
            }
            opt.restore(last);
            opt.halve_lr();
            continue;
        }

        double prior = 0.0;
        Eigen::VectorXd grad_g_unscaled;
        CoarseFeature g_unscaled;
        if (dec.g_hat >= 0 && !problem.monitored_pairs.empty()) {
            g_unscaled = params.scaler_g.unscale(tape.value(dec.g_hat).row(0).transpose());
            prior = bend_penalty(g_unscaled, problem.monitored_pairs, &grad_g_unscaled);
        }

        const double objective = problem.lambda * data + problem.lambda_g * prior +
                                 problem.lambda_beta * opt.e_s.value.squaredNorm() +
                                 problem.lambda_theta * opt.e_p.value.squaredNorm();
        if (!std::isfinite(objective)) {
            throw std::runtime_error("fit_to_2d_joints: non-finite objective");
        }

        if (objective > prev_obj * (1.0 + 1e-6)) {
            opt.restore(last);
            opt.halve_lr();
            continue;
        }
        prev_obj = objective;
        result.objective_log.push_back(objective);
        result.reprojection_rms =
            std::sqrt(reproj_sq / static_cast<double>(problem.target_joints.size()));
        last = opt.snapshot();

        const std::vector<Mat3> grad_T = solver.adjoint(grad_p);
        Eigen::VectorXd grad_f = Eigen::VectorXd::Zero(f.size());
        feature_transform_backward(f, grad_T, grad_f);
        Mat seed_f(1, f.size());
        seed_f.row(0) = (grad_f.array() * inv_slope_f.array()).matrix().transpose();

        opt.zero_grad();
        std::vector<std::pair<int, Mat>> seeds = {{dec.f_hat, seed_f}};
        if (dec.g_hat >= 0 && !problem.monitored_pairs.empty()) {
            Mat seed_g(1, g_unscaled.size());
            seed_g.row(0) = (problem.lambda_g * grad_g_unscaled.array() * inv_slope_g.array())
                                .matrix()
                                .transpose();
            seeds.push_back({dec.g_hat, seed_g});
        }
        tape.backward_multi(seeds);
        opt.e_s.grad += 2.0 * problem.lambda_beta * opt.e_s.value;
        opt.e_p.grad += 2.0 * problem.lambda_theta * opt.e_p.value;
        if (problem.fit_rigid) {
            opt.t.grad.col(0) += dt;
            opt.omega.grad.col(0) += domega;
        }
        opt.step();
    }

    opt.restore(last);
    result.code.shape = opt.e_s.value.row(0).transpose();
    result.code.pose = opt.e_p.value.row(0).transpose();
    result.transform.rotation = opt.rotation();
    result.transform.translation = opt.translation();
    return result;
}

namespace {

Mesh decode_to_mesh(ModelParams& params, const ReconSolver& solver, const Eigen::VectorXd& e_s,
                    const Eigen::VectorXd& e_p) {
    LatentCode code{e_s, e_p};
    const DecodeResult dec = decode(params, code);
    return decode_acap(solver, params.scaler_f.unscale(dec.f_hat.row(0).transpose()));
}

}  // namespace

Mesh interpolate(ModelParams& params, const ReconSolver& solver, const LatentCode& a,
                 const LatentCode& b, double alpha) {
    const Eigen::VectorXd e_s = (1.0 - alpha) * a.shape + alpha * b.shape;
    const Eigen::VectorXd e_p = (1.0 - alpha) * a.pose + alpha * b.pose;
    return decode_to_mesh(params, solver, e_s, e_p);
}

std::vector<std::vector<Mesh>> bilinear_grid(ModelParams& params, const ReconSolver& solver,
                                             const LatentCode& a, const LatentCode& b,
                                             int shape_steps, int pose_steps) {
    if (shape_steps < 2 || pose_steps < 2) throw std::runtime_error("bilinear_grid: need >= 2 steps");
    std::vector<std::vector<Mesh>> grid(shape_steps);
    for (int i = 0; i < shape_steps; ++i) {
        const double u = static_cast<double>(i) / (shape_steps - 1);
        const Eigen::VectorXd e_s = (1.0 - u) * a.shape + u * b.shape;
        for (int j = 0; j < pose_steps; ++j) {
            const double v = static_cast<double>(j) / (pose_steps - 1);
            const Eigen::VectorXd e_p = (1.0 - v) * a.pose + v * b.pose;
            grid[i].push_back(decode_to_mesh(params, solver, e_s, e_p));
        }
    }
    return grid;
}

std::vector<Mesh> sample_bodies(ModelParams& params, const ReconSolver& solver, int count,
                                SampleKind kind, uint64_t seed) {
    nn::RandomEngine rng(seed ^ 0x73616d706cULL);
    std::vector<Mesh> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        Eigen::VectorXd e_s = Eigen::VectorXd::Zero(params.config.shape_dim);
        Eigen::VectorXd e_p = Eigen::VectorXd::Zero(params.config.pose_dim);
        if (kind == SampleKind::Shape || kind == SampleKind::Both) {
            for (int d = 0; d < e_s.size(); ++d) e_s[d] = rng.normal();
        }
        if (kind == SampleKind::Pose || kind == SampleKind::Both) {
            for (int d = 0; d < e_p.size(); ++d) e_p[d] = rng.normal();
        }
        out.push_back(decode_to_mesh(params, solver, e_s, e_p));
    }
    return out;
}

Mesh pose_transfer(ModelParams& params, const ReconSolver& solver, const LatentCode& shape_donor,
                   const LatentCode& pose_donor) {
    return decode_to_mesh(params, solver, shape_donor.shape, pose_donor.pose);
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Ericson, Real-Time Collision Detection, 5.1.5.
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    }

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

AabbTree::AabbTree(const Mesh& mesh) : mesh_(&mesh) {
    if (mesh.triangles.empty()) throw std::runtime_error("AabbTree: empty mesh");
    const int m = mesh.num_triangles();
    order_.resize(m);
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.resize(m);
    for (int i = 0; i < m; ++i) {
        const auto& t = mesh.triangles[i];
        centroids_[i] =
            (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
    }
    nodes_.reserve(2 * m);
    root_ = build(0, m);
}

int AabbTree::build(int begin, int end) {
    Node node;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (int k = begin; k < end; ++k) {
        const auto& t = mesh_->triangles[order_[k]];
        for (int c = 0; c < 3; ++c) {
            node.lo = node.lo.cwiseMin(mesh_->vertices[t[c]]);
            node.hi = node.hi.cwiseMax(mesh_->vertices[t[c]]);
        }
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= 4) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    int axis = 0;
    (nodes_[id].hi - nodes_[id].lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return centroids_[a][axis] < centroids_[b][axis]; });
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

namespace {
double box_distance_sq(const Vec3& q, const Vec3& lo, const Vec3& hi) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double v = std::max({lo[c] - q[c], 0.0, q[c] - hi[c]});
        d += v * v;
    }
    return d;
}
}  // namespace

void AabbTree::query(int id, const Vec3& q, Hit& best) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
        for (int k = node.begin; k < node.end; ++k) {
            const int tri = order_[k];
            const auto& t = mesh_->triangles[tri];
            const Vec3 cp = closest_point_on_triangle(q, mesh_->vertices[t[0]],
                                                      mesh_->vertices[t[1]], mesh_->vertices[t[2]]);
            const double d = (q - cp).norm();
            if (d < best.distance) {
                best.distance = d;
                best.triangle = tri;
                best.point = cp;
            }
        }
        return;
    }
    const double dl = box_distance_sq(q, nodes_[node.left].lo, nodes_[node.left].hi);
    const double dr = box_distance_sq(q, nodes_[node.right].lo, nodes_[node.right].hi);
    const int first = dl <= dr ? node.left : node.right;
    const int second = dl <= dr ? node.right : node.left;
    const double dfirst = std::min(dl, dr), dsecond = std::max(dl, dr);
    if (dfirst < best.distance * best.distance) query(first, q, best);
    if (dsecond < best.distance * best.distance) query(second, q, best);
}

AabbTree::Hit AabbTree::nearest(const Vec3& query_point) const {
    Hit best;
    best.distance = std::numeric_limits<double>::infinity();
    query(root_, query_point, best);
    return best;
}

PmdResult pmd(const std::vector<Vec3>& cloud, const Mesh& mesh,
              const std::set<int>* exclude_vertices) {
    if (cloud.empty()) throw std::runtime_error("pmd: empty point cloud");
    if (mesh.triangles.empty()) throw std::runtime_error("pmd: empty mesh");
    const AabbTree tree(mesh);
    PmdResult out;
    out.distances.reserve(cloud.size());
    for (const Vec3& q : cloud) {
        const AabbTree::Hit hit = tree.nearest(q);
        if (exclude_vertices) {
            const auto& t = mesh.triangles[hit.triangle];
            if (exclude_vertices->count(t[0]) && exclude_vertices->count(t[1]) &&
                exclude_vertices->count(t[2])) {
                continue;
            }
        }
        out.distances.push_back(hit.distance);
    }
    out.count = out.distances.size();
    if (out.count > 0) {
        const double mean =
            std::accumulate(out.distances.begin(), out.distances.end(), 0.0) / out.count;
        double var = 0.0;
        for (double d : out.distances) var += (d - mean) * (d - mean);
        out.mean = mean;
        out.stddev = std::sqrt(var / out.count);
    }
    return out;
}

std::vector<Vec3> load_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_xyz: cannot open " + path);
    std::vector<Vec3> cloud;
    double x, y, z;
    while (in >> x >> y >> z) cloud.emplace_back(x, y, z);
    return cloud;
}

void save_xyz(const std::vector<Vec3>& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_xyz: cannot open " + path);
    char buf[128];
    for (const auto& p : cloud) {
        std::snprintf(buf, sizeof(buf), "%.12g %.12g %.12g\n", p.x(), p.y(), p.z());
        out << buf;
    }
}

}  // namespace bodyrep
