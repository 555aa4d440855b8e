#include "bodyrep/deform.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <stdexcept>

#include "bodyrep/binio.hpp"

namespace bodyrep {

FeatureScaler::FeatureScaler(Eigen::VectorXd min, Eigen::VectorXd max)
    : min_(std::move(min)), max_(std::move(max)) {
    if (min_.size() != max_.size()) throw std::runtime_error("FeatureScaler: min/max size mismatch");
    for (int d = 0; d < min_.size(); ++d) {
        if (min_[d] > max_[d]) throw std::runtime_error("FeatureScaler: min > max");
    }
}

FeatureScaler FeatureScaler::fit(const std::vector<Eigen::VectorXd>& corpus) {
    if (corpus.empty()) throw std::runtime_error("FeatureScaler: empty corpus");
    Eigen::VectorXd mn = corpus.front(), mx = corpus.front();
    for (const auto& f : corpus) {
        if (f.size() != mn.size()) throw std::runtime_error("FeatureScaler: inconsistent dims");
        mn = mn.cwiseMin(f);
        mx = mx.cwiseMax(f);
    }
    return FeatureScaler(std::move(mn), std::move(mx));
}

Eigen::VectorXd FeatureScaler::scale(const Eigen::VectorXd& x) const {
    if (x.size() != min_.size()) throw std::runtime_error("FeatureScaler: dimension mismatch");
    Eigen::VectorXd y(x.size());
    for (int d = 0; d < x.size(); ++d) {
        const double range = max_[d] - min_[d];
        y[d] = range > 0 ? -kRange + 2.0 * kRange * (x[d] - min_[d]) / range : 0.0;
    }
    return y;
}

Eigen::VectorXd FeatureScaler::unscale(const Eigen::VectorXd& y) const {
    if (y.size() != min_.size()) throw std::runtime_error("FeatureScaler: dimension mismatch");
    Eigen::VectorXd x(y.size());
    for (int d = 0; d < y.size(); ++d) {
        const double range = max_[d] - min_[d];
        x[d] = range > 0 ? min_[d] + (y[d] + kRange) / (2.0 * kRange) * range : min_[d];
    }
    return x;
}

Eigen::VectorXd FeatureScaler::slope() const {
    Eigen::VectorXd s(min_.size());
    for (int d = 0; d < min_.size(); ++d) {
        const double range = max_[d] - min_[d];
        s[d] = range > 0 ? 2.0 * kRange / range : 0.0;
    }
    return s;
}

Eigen::VectorXd FeatureScaler::inverse_slope() const {
    Eigen::VectorXd s(min_.size());
    for (int d = 0; d < min_.size(); ++d) {
        const double range = max_[d] - min_[d];
        s[d] = range > 0 ? range / (2.0 * kRange) : 0.0;
    }
    return s;
}

Mat3 local_deform_gradient(const Mesh& ref, const Mesh& target, const CotanWeights& weights,
                           int vertex, const DeformOptions& opts, bool* flagged) {
    if (ref.num_vertices() != target.num_vertices()) {
        throw std::runtime_error("local_deform_gradient: meshes do not share connectivity");
    }
    Mat3 A = Mat3::Zero();  // sum c * d d^T over reference edges
    Mat3 B = Mat3::Zero();  // sum c * e d^T
    const auto& nbr = weights.neighbors[vertex];
    const auto& wts = weights.weights[vertex];
    for (size_t k = 0; k < nbr.size(); ++k) {
        const Vec3 d = ref.vertices[vertex] - ref.vertices[nbr[k]];
        const Vec3 e = target.vertices[vertex] - target.vertices[nbr[k]];
        A += wts[k] * d * d.transpose();
        B += wts[k] * e * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(A);
    const double trace = A.trace();
    if (eig.eigenvalues()(0) <= 1e-9 * std::max(trace, 1e-30)) {
        A += (opts.rank_mu_scale * trace) * Mat3::Identity();
        if (flagged) *flagged = true;
    } else if (flagged) {
        *flagged = false;
    }
    return B * A.inverse();
}

std::vector<Vec3> rotation_branch_candidates(const Vec3& axis, double angle,
                                             const Vec3& reference_direction) {
    std::vector<Vec3> out;
    Vec3 u = axis;
    if (angle < 1e-9 || u.norm() < 1e-12) {
        // Identity rotation: branches are 2*pi*k along any direction. Use the
        // neighbors' mean direction so the zero branch can still unwind.
        out.push_back(Vec3::Zero());
        if (reference_direction.norm() > 1e-9) {
            const Vec3 d = reference_direction.normalized();
            for (int k = 1; k <= 2; ++k) {
                out.push_back(d * (2.0 * M_PI * k));
                out.push_back(d * (-2.0 * M_PI * k));
            }
        }
        return out;
    }
    u.normalize();
    for (int sign = 0; sign < 2; ++sign) {
        const Vec3 a = sign == 0 ? u : Vec3(-u);
        const double base = sign == 0 ? angle : 2.0 * M_PI - angle;
        for (int k = -2; k <= 2; ++k) {
            out.push_back(a * (base + 2.0 * M_PI * k));
        }
    }
    return out;
}

std::vector<Vec3> make_consistent(const Mesh& ref, const RawRotations& raw) {
    const int n = ref.num_vertices();
    if (static_cast<int>(raw.axis.size()) != n || static_cast<int>(raw.angle.size()) != n) {
        throw std::runtime_error("make_consistent: field size mismatch");
    }
    std::vector<std::vector<int>> adj(n);
    for (const auto& t : ref.triangles) {
        for (int k = 0; k < 3; ++k) {
            adj[t[k]].push_back(t[(k + 1) % 3]);
            adj[t[(k + 1) % 3]].push_back(t[k]);
        }
    }
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }

    std::vector<Vec3> result(n, Vec3::Zero());
    std::vector<char> fixed(n, 0);
    std::deque<int> queue;

    // Vertex 0 keeps its principal branch.
    result[0] = raw.axis[0] * raw.angle[0];
    fixed[0] = 1;
    queue.push_back(0);

    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        for (int w : adj[v]) {
            if (fixed[w]) continue;
            Vec3 mean = Vec3::Zero();
            int count = 0;
            for (int x : adj[w]) {
                if (fixed[x]) {
                    mean += result[x];
                    ++count;
                }
            }
            if (count > 0) mean /= count;

            double best = std::numeric_limits<double>::infinity();
            Vec3 best_r = raw.axis[w] * raw.angle[w];
            for (const Vec3& cand : rotation_branch_candidates(raw.axis[w], raw.angle[w], mean)) {
                double cost = 0.0;
                for (int x : adj[w]) {
                    if (fixed[x]) cost += (cand - result[x]).squaredNorm();
                }
                if (cost < best - 1e-15) {
                    best = cost;
                    best_r = cand;
                }
            }
            result[w] = best_r;
            fixed[w] = 1;
            queue.push_back(w);
        }
    }

    // Isolated vertices (none on valid meshes) keep their principal branch.
    for (int i = 0; i < n; ++i) {
        if (!fixed[i]) result[i] = raw.axis[i] * raw.angle[i];
    }
    return result;
}

AcapFeature encode_acap(const Mesh& ref, const Mesh& target, const CotanWeights& weights,
                        const DeformOptions& opts) {
    const int n = ref.num_vertices();
    if (target.num_vertices() != n || target.triangles != ref.triangles) {
        throw std::runtime_error("encode_acap: meshes do not share connectivity");
    }
    RawRotations raw;
    raw.axis.resize(n);
    raw.angle.resize(n);
    std::vector<Eigen::Matrix<double, 6, 1>> stretch(n);
    for (int i = 0; i < n; ++i) {
        const Mat3 T = local_deform_gradient(ref, target, weights, i, opts);
        Mat3 R, S;
        polar_decompose(T, R, S);
        const Vec3 r = rot_to_axis_angle(R);
        const double angle = r.norm();
        raw.angle[i] = angle;
        raw.axis[i] = angle > 1e-12 ? Vec3(r / angle) : Vec3::Zero();
        stretch[i] = sym_to_vec(S);
    }
    const std::vector<Vec3> r_consistent = make_consistent(ref, raw);

    AcapFeature f(9 * n);
    for (int i = 0; i < n; ++i) {
        f.segment<3>(9 * i) = r_consistent[i];
        f.segment<6>(9 * i + 3) = stretch[i];
    }
    return f;
}

namespace {
constexpr char kAcapMagic[8] = {'A', 'C', 'A', 'P', 'F', '1', 0, 0};
constexpr char kScalMagic[8] = {'S', 'C', 'A', 'L', '1', 0, 0, 0};
}  // namespace

void save_acap(const AcapFeature& f, const std::string& path) {
    if (f.size() % 9 != 0) throw std::runtime_error("save_acap: length not a multiple of 9");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_acap: cannot open " + path);
    write_magic(out, kAcapMagic);
    write_u32(out, static_cast<uint32_t>(f.size() / 9));
    write_u32(out, 9);
    std::vector<float> buf(f.size());
    for (int i = 0; i < f.size(); ++i) buf[i] = static_cast<float>(f[i]);
    write_f32_block(out, buf);
    if (!out) throw std::runtime_error("save_acap: write failure on " + path);
}

AcapFeature load_acap(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_acap: cannot open " + path);
    expect_magic(in, kAcapMagic, "load_acap");
    const uint32_t nv = read_u32(in, "load_acap");
    const uint32_t comp = read_u32(in, "load_acap");
    if (comp != 9) throw std::runtime_error("load_acap: unexpected component count");
    const auto buf = read_f32_block(in, static_cast<size_t>(nv) * 9, "load_acap");
    AcapFeature f(static_cast<int>(buf.size()));
    for (size_t i = 0; i < buf.size(); ++i) f[static_cast<int>(i)] = buf[i];
    return f;
}

void save_scaler(const FeatureScaler& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_scaler: cannot open " + path);
    write_magic(out, kScalMagic);
    write_u32(out, static_cast<uint32_t>(s.dim()));
    std::vector<float> buf(2 * s.dim());
    for (int d = 0; d < s.dim(); ++d) {
        buf[2 * d] = static_cast<float>(s.minimum()[d]);
        buf[2 * d + 1] = static_cast<float>(s.maximum()[d]);
    }
    write_f32_block(out, buf);
    if (!out) throw std::runtime_error("save_scaler: write failure on " + path);
}

FeatureScaler load_scaler(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_scaler: cannot open " + path);
    expect_magic(in, kScalMagic, "load_scaler");
    const uint32_t dim = read_u32(in, "load_scaler");
    const auto buf = read_f32_block(in, 2 * static_cast<size_t>(dim), "load_scaler");
    Eigen::VectorXd mn(dim), mx(dim);
    for (uint32_t d = 0; d < dim; ++d) {
        mn[d] = buf[2 * d];
        mx[d] = buf[2 * d + 1];
    }
    return FeatureScaler(std::move(mn), std::move(mx));
}

}  // namespace bodyrep
