#include "bodyrep/registration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

namespace bodyrep {

AcapFeature DeformBasis::evaluate(const Eigen::VectorXd& w) const {
    if (w.size() != C.cols()) throw std::runtime_error("DeformBasis: coefficient size mismatch");
    return mean + C * w;
}

DeformBasis build_part_basis(const std::vector<AcapFeature>& corpus, const Mesh& ref,
                             const PartSegmentation& parts, int modes_per_part) {
    if (corpus.empty()) throw std::runtime_error("build_part_basis: empty corpus");
    const int n = ref.num_vertices();
    const int dim = 9 * n;
    for (const auto& f : corpus) {
        if (f.size() != dim) throw std::runtime_error("build_part_basis: feature size mismatch");
    }
    const int samples = static_cast<int>(corpus.size());
    int modes = modes_per_part;
    if (modes > samples) {
        std::cerr << "warning: build_part_basis: corpus smaller than modes_per_part, clamping to "
                  << samples << "\n";
        modes = samples;
    }

    DeformBasis basis;
    basis.mean = Eigen::VectorXd::Zero(dim);
    for (const auto& f : corpus) basis.mean += f;
    basis.mean /= samples;

    // Part supports: member vertices plus their one-ring halo.
    std::vector<std::set<int>> support(parts.part_count);
    std::vector<std::vector<int>> adj(n);
    for (const auto& t : ref.triangles) {
        for (int k = 0; k < 3; ++k) {
            adj[t[k]].push_back(t[(k + 1) % 3]);
            adj[t[(k + 1) % 3]].push_back(t[k]);
        }
    }
    for (int i = 0; i < n; ++i) {
        support[parts.labels[i]].insert(i);
        for (int j : adj[i]) support[parts.labels[i]].insert(j);
    }

    std::vector<Eigen::Triplet<double>> trips;
    basis.column_part.clear();
    int col = 0;
    for (int part = 0; part < parts.part_count; ++part) {
        std::vector<int> rows;
        for (int v : support[part]) {
            for (int c = 0; c < 9; ++c) rows.push_back(9 * v + c);
        }
        Eigen::MatrixXd data(rows.size(), samples);
        for (int s = 0; s < samples; ++s) {
            for (size_t r = 0; r < rows.size(); ++r) {
                data(r, s) = corpus[s][rows[r]] - basis.mean[rows[r]];
            }
        }
        Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinU);
        const int keep = std::min<int>(modes, static_cast<int>(svd.nonzeroSingularValues()));
        for (int m = 0; m < modes; ++m) {
            if (m < keep) {
                for (size_t r = 0; r < rows.size(); ++r) {
                    const double v = svd.matrixU()(r, m);
                    if (v != 0.0) trips.emplace_back(rows[r], col, v);
                }
            }
            // Rank-deficient parts keep zero columns so w stays a fixed size.
            basis.column_part.push_back(part);
            ++col;
        }
    }
    basis.C.resize(dim, col);
    basis.C.setFromTriplets(trips.begin(), trips.end());
    return basis;
}

std::vector<Landmark> load_landmarks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_landmarks: cannot open " + path);
    nlohmann::json j;
    in >> j;
    std::vector<Landmark> out;
    for (const auto& e : j) {
        Landmark lm;
        lm.ref_index = e.at(0).get<int>();
        if (e.at(1).is_array()) {
            const auto p = e.at(1).get<std::vector<double>>();
            lm.position = Vec3(p.at(0), p.at(1), p.at(2));
        } else {
            lm.target_index = e.at(1).get<int>();
        }
        out.push_back(lm);
    }
    return out;
}

namespace {

struct Correspondence {
    int vertex;
    Vec3 point;
    Vec3 normal;
};

double prior_energy(const Mesh& ref, const CotanWeights& weights, const std::vector<Vec3>& p,
                    const std::vector<Mat3>& T) {
    double e = 0.0;
    for (int i = 0; i < ref.num_vertices(); ++i) {
        const auto& nbr = weights.neighbors[i];
        const auto& wts = weights.weights[i];
        for (size_t k = 0; k < nbr.size(); ++k) {
            const int j = nbr[k];
            const Vec3 q = ref.vertices[i] - ref.vertices[j];
            e += wts[k] * ((p[i] - p[j]) - T[i] * q).squaredNorm();
        }
    }
    return e;
}

/// dT_i/dw_k columns for one vertex: through r (rotation derivative) and s.
void transform_jacobian_rows(const AcapFeature& f, int vertex, Mat3 dT[9]) {
    const VertexDeform d = feature_vertex(f, vertex);
    const Mat3 R = axis_angle_to_rot(d.r);
    const Mat3 S = vec_to_sym(d.s);
    for (int k = 0; k < 3; ++k) dT[k] = rotation_derivative(d.r, k) * S;
    for (int k = 0; k < 6; ++k) {
        Eigen::Matrix<double, 6, 1> e = Eigen::Matrix<double, 6, 1>::Zero();
        e[k] = 1.0;
        dT[3 + k] = R * vec_to_sym(e);
    }
}

}  // namespace

RegistrationResult register_mesh(const RegistrationProblem& problem, const CotanWeights& weights) {
    const Mesh& ref = problem.reference;
    const Mesh& target = problem.target;
    const int n = ref.num_vertices();
    if (problem.landmarks.empty()) throw std::runtime_error("register: landmarks required");

    std::vector<std::pair<int, Vec3>> landmark_targets;
    for (const Landmark& lm : problem.landmarks) {
        if (lm.ref_index < 0 || lm.ref_index >= n) {
            throw std::runtime_error("register: landmark reference index out of range");
        }
        Vec3 pos = lm.position;
        if (lm.target_index >= 0) {
            if (lm.target_index >= target.num_vertices()) {
                throw std::runtime_error("register: landmark target index out of range");
            }
            pos = target.vertices[lm.target_index];
        }
        landmark_targets.push_back({lm.ref_index, pos});
    }

    // Coarse initialization from landmark Procrustes.
    RigidTransform rt;
    if (landmark_targets.size() >= 3) {
        std::vector<Vec3> src, dst;
        for (const auto& [i, v] : landmark_targets) {
            src.push_back(ref.vertices[i]);
            dst.push_back(v);
        }
        rt = procrustes_align(src, dst, false);
    }

    std::vector<Vec3> p = ref.vertices;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(problem.basis.C.cols());
    std::vector<Mat3> T = feature_transforms(problem.basis.evaluate(w));

    const AabbTree tree(target);
    const std::vector<Vec3> target_normals = vertex_normals(target);
    const double dist_cap = problem.dist_limit_frac * target.bbox_diagonal();
    const double cos_limit = std::cos(problem.normal_angle_limit_deg * M_PI / 180.0);

    RegistrationResult result;
    double prev_energy = std::numeric_limits<double>::infinity();

    auto total_energy = [&](const std::vector<Vec3>& pv, const Eigen::VectorXd& wv,
                            const std::vector<Mat3>& Tv, const RigidTransform& rtv,
                            const std::vector<Correspondence>& corr) {
        double e = prior_energy(ref, weights, pv, Tv);
        for (const auto& c : corr) {
            const double d = c.normal.dot(rtv.rotation * pv[c.vertex] + rtv.translation - c.point);
            e += problem.lambda1 * d * d;
        }
        for (const auto& [i, v] : landmark_targets) {
            e += problem.lambda2 * (rtv.rotation * pv[i] + rtv.translation - v).squaredNorm();
        }
        e += problem.lambda3 * wv.lpNorm<1>();
        return e;
    };

    for (int outer = 0; outer < problem.max_outer; ++outer) {
        // Correspondences with normal-compatibility and distance rejection.
        Mesh current;
        current.vertices = p;
        current.triangles = ref.triangles;
        const std::vector<Vec3> current_normals = vertex_normals(current);
        std::vector<Correspondence> corr;
        int rejected = 0;
        for (int i = 0; i < n; ++i) {
            const Vec3 x = rt.rotation * p[i] + rt.translation;
            const AabbTree::Hit hit = tree.nearest(x);
            const auto& tri = target.triangles[hit.triangle];
            const Vec3 tn = ((target.vertices[tri[1]] - target.vertices[tri[0]])
                                 .cross(target.vertices[tri[2]] - target.vertices[tri[0]]))
                                .normalized();
            const Vec3 mn = (rt.rotation * current_normals[i]).normalized();
            if (hit.distance > dist_cap || std::abs(tn.dot(mn)) < cos_limit) {
                ++rejected;
                continue;
            }
            corr.push_back({i, hit.point, tn});
        }
        if (corr.empty()) throw std::runtime_error("register: no valid correspondences");
        result.rejected_correspondences = rejected;

        // (a) fix w, R, t; solve the quadratic problem in p (3V x 3V SPD).
        std::vector<Eigen::Triplet<double>> trips;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(3 * n);
        for (int i = 0; i < n; ++i) {
            const auto& nbr = weights.neighbors[i];
            const auto& wts = weights.weights[i];
            double diag = 0.0;
            Vec3 bi = Vec3::Zero();
            for (size_t k = 0; k < nbr.size(); ++k) {
                const int j = nbr[k];
                diag += 4.0 * wts[k];
                for (int c = 0; c < 3; ++c) trips.emplace_back(3 * i + c, 3 * j + c, -4.0 * wts[k]);
                bi += 2.0 * wts[k] * ((T[i] + T[j]) * (ref.vertices[i] - ref.vertices[j]));
            }
            for (int c = 0; c < 3; ++c) trips.emplace_back(3 * i + c, 3 * i + c, diag);
            rhs.segment<3>(3 * i) += bi;
        }
        for (const auto& c : corr) {
            const Vec3 rn = rt.rotation.transpose() * c.normal;
            const Mat3 block = 2.0 * problem.lambda1 * rn * rn.transpose();
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    trips.emplace_back(3 * c.vertex + a, 3 * c.vertex + b, block(a, b));
                }
            }
            rhs.segment<3>(3 * c.vertex) +=
                2.0 * problem.lambda1 * rn * (c.normal.dot(c.point - rt.translation));
        }
        for (const auto& [i, v] : landmark_targets) {
            for (int c = 0; c < 3; ++c) {
                trips.emplace_back(3 * i + c, 3 * i + c, 2.0 * problem.lambda2);
            }
            rhs.segment<3>(3 * i) +=
                2.0 * problem.lambda2 * (rt.rotation.transpose() * (v - rt.translation));
        }
        Eigen::SparseMatrix<double> A(3 * n, 3 * n);
        A.setFromTriplets(trips.begin(), trips.end());
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
        if (solver.info() != Eigen::Success) {
            throw std::runtime_error("register: p-step factorization failed");
        }
        const Eigen::VectorXd sol = solver.solve(rhs);
        std::vector<Vec3> p_new(n);
        for (int i = 0; i < n; ++i) p_new[i] = sol.segment<3>(3 * i);
        if (total_energy(p_new, w, T, rt, corr) <= total_energy(p, w, T, rt, corr)) p = p_new;

        // (b) fix p; update (R, t) by Procrustes on correspondences + landmarks.
        {
            std::vector<Vec3> src, dst;
            for (const auto& c : corr) {
                src.push_back(p[c.vertex]);
                dst.push_back(c.point);
            }
            for (const auto& [i, v] : landmark_targets) {
                src.push_back(p[i]);
                dst.push_back(v);
            }
            if (src.size() >= 3) {
                const RigidTransform cand = procrustes_align(src, dst, false);
                if (total_energy(p, w, T, rt, corr) >= total_energy(p, w, T, cand, corr)) rt = cand;
            }
        }

        // (c) fix p; proximal-gradient steps on w with the rotation part of
        // T(w) linearized at the current w.
        {
            const AcapFeature f = problem.basis.evaluate(w);
            const int K = static_cast<int>(w.size());
            // Columns touching each vertex's 9 feature rows.
            std::vector<std::vector<int>> vertex_columns(n);
            for (int c = 0; c < K; ++c) {
                int last_vertex = -1;
                for (Eigen::SparseMatrix<double>::InnerIterator it(problem.basis.C, c); it; ++it) {
                    const int v = static_cast<int>(it.row()) / 9;
                    if (v != last_vertex) {
                        vertex_columns[v].push_back(c);
                        last_vertex = v;
                    }
                }
            }
            Eigen::MatrixXd H = Eigen::MatrixXd::Zero(K, K);
            Eigen::VectorXd d = Eigen::VectorXd::Zero(K);
            Mat3 dT[9];
            for (int i = 0; i < n; ++i) {
                const std::vector<int>& cols = vertex_columns[i];
                if (cols.empty()) continue;
                transform_jacobian_rows(f, i, dT);
                const auto& nbr = weights.neighbors[i];
                const auto& wts = weights.weights[i];
                for (size_t k = 0; k < nbr.size(); ++k) {
                    const int j = nbr[k];
                    const Vec3 q = ref.vertices[i] - ref.vertices[j];
                    const Vec3 rho = (p[i] - p[j]) - T[i] * q;
                    // a_c = d(T_i q)/dw_c
                    std::vector<Vec3> a(cols.size());
                    for (size_t ci = 0; ci < cols.size(); ++ci) {
                        Vec3 acc = Vec3::Zero();
                        for (int r = 0; r < 9; ++r) {
                            const double coeff = problem.basis.C.coeff(9 * i + r, cols[ci]);
                            if (coeff != 0.0) acc += coeff * (dT[r] * q);
                        }
                        a[ci] = acc;
                    }
                    for (size_t ci = 0; ci < cols.size(); ++ci) {
                        d[cols[ci]] += wts[k] * a[ci].dot(rho);
                        for (size_t cj = 0; cj < cols.size(); ++cj) {
                            H(cols[ci], cols[cj]) += wts[k] * a[ci].dot(a[cj]);
                        }
                    }
                }
            }
            // ISTA on delta: grad = 2(H delta - d); eta from a trace bound.
            const double L = 2.0 * std::max(H.trace(), 1e-12);
            const double eta = 1.0 / L;
            Eigen::VectorXd delta = Eigen::VectorXd::Zero(K);
            for (int it = 0; it < 50; ++it) {
                Eigen::VectorXd x = w + delta - eta * 2.0 * (H * delta - d);
                for (int c = 0; c < K; ++c) {
                    const double thr = eta * problem.lambda3;
                    x[c] = x[c] > thr ? x[c] - thr : (x[c] < -thr ? x[c] + thr : 0.0);
                }
                delta = x - w;
            }
            // Backtrack on the true energy.
            const double e_old = total_energy(p, w, T, rt, corr);
            double step = 1.0;
            for (int tries = 0; tries < 5; ++tries, step *= 0.5) {
                const Eigen::VectorXd w_new = w + step * delta;
                const std::vector<Mat3> T_new = feature_transforms(problem.basis.evaluate(w_new));
                if (total_energy(p, w_new, T_new, rt, corr) <= e_old) {
                    w = w_new;
                    T = T_new;
                    break;
                }
            }
        }

        const double energy = total_energy(p, w, T, rt, corr);
        if (!std::isfinite(energy)) throw std::runtime_error("register: diverging energy");
        if (energy > prev_energy) break;  // correspondence refresh raised the bar; stop
        result.energy_log.push_back(energy);
        const bool converged = prev_energy < std::numeric_limits<double>::infinity() &&
                               (prev_energy - energy) <= problem.rel_tol * std::abs(prev_energy);
        prev_energy = energy;
        if (converged) break;
    }

    result.deformed.vertices = p;
    result.deformed.triangles = ref.triangles;
    result.deformed.part_labels = ref.part_labels;
    result.w = w;
    result.transform = rt;
    return result;
}

void save_registration_report(const RegistrationResult& result, const std::string& path) {
    nlohmann::json j;
    j["iterations"] = result.energy_log.size();
    j["energy_log"] = result.energy_log;
    j["final_energy"] = result.energy_log.empty() ? 0.0 : result.energy_log.back();
    j["rejected_correspondences"] = result.rejected_correspondences;
    j["nonzero_coefficients"] = (result.w.array().abs() > 1e-4).count();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_registration_report: cannot open " + path);
    out << j.dump(2) << '\n';
}

Mesh arap_deform(const Mesh& mesh, const std::vector<std::pair<int, Vec3>>& landmark_targets,
                 int stiffness_iters, std::vector<double>* energy_log) {
    if (landmark_targets.empty()) return mesh;
    const int n = mesh.num_vertices();
    for (const auto& [i, v] : landmark_targets) {
        if (i < 0 || i >= n) throw std::runtime_error("arap_deform: landmark index out of range");
    }
    const CotanWeights weights = cotan_weights(mesh);
    constexpr double kLandmarkWeight = 1e3;

    // Rigid warm start from the landmarks; local-global alternation is slow
    // to recover large global rotations from an identity start.
    RigidTransform init;
    if (landmark_targets.size() >= 3) {
        std::vector<Vec3> src, dst;
        for (const auto& [i, v] : landmark_targets) {
            src.push_back(mesh.vertices[i]);
            dst.push_back(v);
        }
        try {
            init = procrustes_align(src, dst, false);
        } catch (const std::runtime_error&) {
            // Degenerate landmark span: keep the identity start.
        }
    }

    // Per-coordinate system: 4*L + landmark diagonal; factor once.
    std::vector<Eigen::Triplet<double>> trips;
    for (int i = 0; i < n; ++i) {
        double diag = 0.0;
        const auto& nbr = weights.neighbors[i];
        const auto& wts = weights.weights[i];
        for (size_t k = 0; k < nbr.size(); ++k) {
            diag += 4.0 * wts[k];
            trips.emplace_back(i, nbr[k], -4.0 * wts[k]);
        }
        trips.emplace_back(i, i, diag);
    }
    for (const auto& [i, v] : landmark_targets) trips.emplace_back(i, i, 2.0 * kLandmarkWeight);
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver(A);
    if (solver.info() != Eigen::Success) throw std::runtime_error("arap_deform: factorization failed");

    std::vector<Vec3> p(n);
    for (int i = 0; i < n; ++i) p[i] = init.apply(mesh.vertices[i]);
    std::vector<Mat3> R(n, init.rotation);

    auto energy = [&]() {
        double e = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto& nbr = weights.neighbors[i];
            const auto& wts = weights.weights[i];
            for (size_t k = 0; k < nbr.size(); ++k) {
                const Vec3 q = mesh.vertices[i] - mesh.vertices[nbr[k]];
                e += wts[k] * ((p[i] - p[nbr[k]]) - R[i] * q).squaredNorm();
            }
        }
        for (const auto& [i, v] : landmark_targets) e += kLandmarkWeight * (p[i] - v).squaredNorm();
        return e;
    };

    for (int iter = 0; iter < stiffness_iters; ++iter) {
        // Local step: best rotation per vertex.
        for (int i = 0; i < n; ++i) {
            Mat3 cov = Mat3::Zero();
            const auto& nbr = weights.neighbors[i];
            const auto& wts = weights.weights[i];
            for (size_t k = 0; k < nbr.size(); ++k) {
                const Vec3 q = mesh.vertices[i] - mesh.vertices[nbr[k]];
                const Vec3 e = p[i] - p[nbr[k]];
                cov += wts[k] * e * q.transpose();
            }
            Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
            Mat3 D = Mat3::Identity();
            if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) D(2, 2) = -1.0;
            R[i] = svd.matrixU() * D * svd.matrixV().transpose();
        }
        // Global step: per-coordinate solve.
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 3);
        for (int i = 0; i < n; ++i) {
            const auto& nbr = weights.neighbors[i];
            const auto& wts = weights.weights[i];
            Vec3 bi = Vec3::Zero();
            for (size_t k = 0; k < nbr.size(); ++k) {
                const int j = nbr[k];
                const Vec3 q = mesh.vertices[i] - mesh.vertices[j];
                bi += 2.0 * wts[k] * ((R[i] + R[j]) * q);
            }
            rhs.row(i) = bi.transpose();
        }
        for (const auto& [i, v] : landmark_targets) {
            rhs.row(i) += 2.0 * kLandmarkWeight * v.transpose();
        }
        for (int c = 0; c < 3; ++c) {
            const Eigen::VectorXd x = solver.solve(rhs.col(c));
            for (int i = 0; i < n; ++i) p[i][c] = x[i];
        }
        if (energy_log) energy_log->push_back(energy());
    }

    Mesh out = mesh;
    out.vertices = p;
    return out;
}

HybridFitResult hybrid_fit(ModelParams& params, const ReconSolver& solver,
                           const std::vector<Vec3>& scan,
                           const std::vector<std::pair<int, Vec3>>& landmarks,
                           const HybridFitConfig& config) {
    if (scan.empty()) throw std::runtime_error("hybrid_fit: empty scan");
    if (landmarks.size() < 5) throw std::runtime_error("hybrid_fit: need at least 5 landmarks");
    const Mesh& ref = solver.reference();
    const CotanWeights& weights = solver.weights();
    const int n = ref.num_vertices();

    // Bring the scan into the reference frame via landmark Procrustes.
    std::vector<Vec3> src, dst;
    for (const auto& [i, v] : landmarks) {
        src.push_back(ref.vertices[i]);
        dst.push_back(v);
    }
    const RigidTransform to_scan = procrustes_align(src, dst, false);
    const RigidTransform to_ref = to_scan.inverse();
    std::vector<Vec3> cloud(scan.size());
    for (size_t k = 0; k < scan.size(); ++k) cloud[k] = to_ref.apply(scan[k]);
    std::vector<std::pair<int, Vec3>> lms;
    for (const auto& [i, v] : landmarks) lms.push_back({i, to_ref.apply(v)});

    Vec3 cloud_lo = cloud.front(), cloud_hi = cloud.front();
    for (const auto& c : cloud) {
        cloud_lo = cloud_lo.cwiseMin(c);
        cloud_hi = cloud_hi.cwiseMax(c);
    }
    const double dist_cap = config.dist_limit_frac * (cloud_hi - cloud_lo).norm();

    std::vector<Vec3> p = ref.vertices;
    nn::Parameter e_s("hybrid_e_s", nn::Mat::Zero(1, params.config.shape_dim));
    nn::Parameter e_p("hybrid_e_p", nn::Mat::Zero(1, params.config.pose_dim));
    nn::AdamConfig adam_config;
    adam_config.lr = config.lr_latent;
    nn::AdamState adam({&e_s, &e_p}, adam_config);
    const Eigen::VectorXd inv_slope = params.scaler_f.inverse_slope();

    auto decode_feature = [&]() {
        LatentCode code{e_s.value.row(0).transpose(), e_p.value.row(0).transpose()};
        const DecodeResult dec = decode(params, code);
        return params.scaler_f.unscale(dec.f_hat.row(0).transpose());
    };
    std::vector<Mat3> T = feature_transforms(decode_feature());

    auto nearest_cloud = [&](const Vec3& x) {
        // Desk-scale clouds; brute force keeps this dependency-free.
        double best = std::numeric_limits<double>::infinity();
        Vec3 bp = cloud.front();
        for (const auto& c : cloud) {
            const double d = (x - c).squaredNorm();
            if (d < best) {
                best = d;
                bp = c;
            }
        }
        return bp;
    };

    HybridFitResult result;
    double prev_energy = std::numeric_limits<double>::infinity();

    for (int outer = 0; outer < config.outer_iterations; ++outer) {
        // Correspondences mesh -> cloud.
        std::vector<std::pair<int, Vec3>> corr;
        for (int i = 0; i < n; ++i) {
            const Vec3 c = nearest_cloud(p[i]);
            if ((c - p[i]).norm() <= dist_cap) corr.push_back({i, c});
        }
        if (corr.empty()) throw std::runtime_error("hybrid_fit: no valid correspondences");

        // Free-vertex solve (per-coordinate SPD system).
        std::vector<Eigen::Triplet<double>> trips;
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 3);
        for (int i = 0; i < n; ++i) {
            double diag = 0.0;
            const auto& nbr = weights.neighbors[i];
            const auto& wts = weights.weights[i];
            Vec3 bi = Vec3::Zero();
            for (size_t k = 0; k < nbr.size(); ++k) {
                const int j = nbr[k];
                diag += 4.0 * config.lambda_prior * wts[k];
                trips.emplace_back(i, j, -4.0 * config.lambda_prior * wts[k]);
                bi += 2.0 * config.lambda_prior * wts[k] *
                      ((T[i] + T[j]) * (ref.vertices[i] - ref.vertices[j]));
            }
            trips.emplace_back(i, i, diag);
            rhs.row(i) = bi.transpose();
        }
        for (const auto& [i, c] : corr) {
            trips.emplace_back(i, i, 2.0 * config.lambda_icp);
            rhs.row(i) += 2.0 * config.lambda_icp * c.transpose();
        }
        for (const auto& [i, v] : lms) {
            trips.emplace_back(i, i, 2.0 * config.lambda_lan);
            rhs.row(i) += 2.0 * config.lambda_lan * v.transpose();
        }
        Eigen::SparseMatrix<double> A(n, n);
        A.setFromTriplets(trips.begin(), trips.end());
        Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> ldlt(A);
        if (ldlt.info() != Eigen::Success) throw std::runtime_error("hybrid_fit: factorization failed");
        for (int c = 0; c < 3; ++c) {
            const Eigen::VectorXd x = ldlt.solve(rhs.col(c));
            for (int i = 0; i < n; ++i) p[i][c] = x[i];
        }

        // Latent steps: pull the decoded surface toward the free vertices,
        // differentiating through the reconstruction solve. This drives the
        // same coupling as the prior term but with a much better conditioned
        // landscape; acceptance is still judged by the total energy below.
        const nn::Mat e_s_before = e_s.value;
        const nn::Mat e_p_before = e_p.value;
        for (int step = 0; step < config.latent_steps_per_outer; ++step) {
            nn::Tape tape;
            const DecoderNodes dec = decode_on_tape(tape, params, tape.param(e_s), tape.param(e_p));
            const AcapFeature f = params.scaler_f.unscale(tape.value(dec.f_hat).row(0).transpose());
            const std::vector<Vec3> q = solver.solve(feature_transforms(f));
            std::vector<Vec3> grad_q(n);
            for (int i = 0; i < n; ++i) grad_q[i] = 2.0 * (q[i] - p[i]);
            const std::vector<Mat3> grad_T = solver.adjoint(grad_q);
            Eigen::VectorXd grad_f = Eigen::VectorXd::Zero(f.size());
            feature_transform_backward(f, grad_T, grad_f);
            nn::Mat seed(1, f.size());
            seed.row(0) = (grad_f.array() * inv_slope.array()).matrix().transpose();
            e_s.zero_grad();
            e_p.zero_grad();
            tape.backward(dec.f_hat, seed);
            e_s.grad += 2.0 * config.lambda_beta * e_s.value;
            e_p.grad += 2.0 * config.lambda_theta * e_p.value;
            adam.step();
        }
        T = feature_transforms(decode_feature());

        auto total_energy = [&]() {
            double energy = prior_energy(ref, weights, p, T) * config.lambda_prior;
            for (const auto& [i, c] : corr) energy += config.lambda_icp * (p[i] - c).squaredNorm();
            for (const auto& [i, v] : lms) energy += config.lambda_lan * (p[i] - v).squaredNorm();
            energy += config.lambda_beta * e_s.value.squaredNorm() +
                      config.lambda_theta * e_p.value.squaredNorm();
            return energy;
        };
        double energy = total_energy();
        if (energy > prev_energy) {
            // Roll the latent move back if it raised the total energy.
            e_s.value = e_s_before;
            e_p.value = e_p_before;
            T = feature_transforms(decode_feature());
            energy = total_energy();
        }
        if (!std::isfinite(energy)) throw std::runtime_error("hybrid_fit: diverging energy");
        if (energy > prev_energy) break;
        result.energy_log.push_back(energy);
        prev_energy = energy;
    }

    result.code.shape = e_s.value.row(0).transpose();
    result.code.pose = e_p.value.row(0).transpose();
    const DecodeResult dec = decode(params, result.code);
    result.model_mesh = decode_acap(solver, params.scaler_f.unscale(dec.f_hat.row(0).transpose()));
    result.free_mesh = ref;
    result.free_mesh.vertices = p;
    // Return in the scan's original frame.
    for (auto& v : result.model_mesh.vertices) v = to_scan.apply(v);
    for (auto& v : result.free_mesh.vertices) v = to_scan.apply(v);
    return result;
}

}  // namespace bodyrep
