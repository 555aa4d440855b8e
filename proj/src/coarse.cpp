#include "bodyrep/coarse.hpp"

#include <cmath>
#include <stdexcept>

#include "bodyrep/binio.hpp"

namespace bodyrep {

Mat3 part_deform(const Mesh& ref, const Mesh& target, const PartSegmentation& parts, int part,
                 bool* flagged) {
    if (part < 0 || part >= parts.part_count) throw std::runtime_error("part_deform: part out of range");
    Vec3 ref_mean = Vec3::Zero(), tgt_mean = Vec3::Zero();
    int count = 0;
    for (int i = 0; i < ref.num_vertices(); ++i) {
        if (parts.labels[i] != part) continue;
        ref_mean += ref.vertices[i];
        tgt_mean += target.vertices[i];
        ++count;
    }
    if (count == 0) throw std::runtime_error("part_deform: empty part");
    ref_mean /= count;
    tgt_mean /= count;

    Mat3 A = Mat3::Zero(), B = Mat3::Zero();
    for (int i = 0; i < ref.num_vertices(); ++i) {
        if (parts.labels[i] != part) continue;
        const Vec3 d = ref.vertices[i] - ref_mean;
        const Vec3 e = target.vertices[i] - tgt_mean;
        A += d * d.transpose();
        B += e * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(A);
    if (eig.eigenvalues()(0) <= 1e-9 * std::max(A.trace(), 1e-30)) {
        A += (1e-8 * A.trace()) * Mat3::Identity();
        if (flagged) *flagged = true;
    } else if (flagged) {
        *flagged = false;
    }
    return B * A.inverse();
}

Vec3 select_branch(const Vec3& r_init, const AcapFeature& acap, const PartSegmentation& parts,
                   int part) {
    Vec3 mean = Vec3::Zero();
    int count = 0;
    const int n = static_cast<int>(acap.size() / 9);
    for (int i = 0; i < n; ++i) {
        if (parts.labels[i] != part) continue;
        mean += acap.segment<3>(9 * i);
        ++count;
    }
    if (count == 0) throw std::runtime_error("select_branch: empty part");
    mean /= count;

    const double theta = r_init.norm();
    Vec3 u;
    if (theta > 1e-9) {
        u = r_init / theta;
    } else if (mean.norm() > 1e-9) {
        // theta == 0 leaves the axis free; use the members' mean direction so
        // a wound-up part can still pick a 2*pi branch.
        u = mean.normalized();
    } else {
        return Vec3::Zero();
    }

    double best = std::numeric_limits<double>::infinity();
    Vec3 best_r = r_init;
    for (int j = -3; j <= 3; ++j) {
        const Vec3 cand = u * (theta + 2.0 * M_PI * j);
        const double cost = (cand - mean).squaredNorm();
        if (cost < best) {
            best = cost;
            best_r = cand;
        }
    }
    return best_r;
}

CoarseFeature encode_coarse(const Mesh& ref, const Mesh& target, const AcapFeature& acap,
                            const PartSegmentation& parts) {
    if (acap.size() != 9 * ref.num_vertices()) {
        throw std::runtime_error("encode_coarse: feature length mismatch");
    }
    CoarseFeature g(9 * parts.part_count);
    for (int k = 0; k < parts.part_count; ++k) {
        const Mat3 T = part_deform(ref, target, parts, k);
        Mat3 R, S;
        polar_decompose(T, R, S);
        const Vec3 r = select_branch(rot_to_axis_angle(R), acap, parts, k);
        g.segment<3>(9 * k) = r;
        g.segment<6>(9 * k + 3) = sym_to_vec(S);
    }
    return g;
}

namespace {
constexpr char kCoarseMagic[8] = {'C', 'O', 'A', 'R', 'S', '1', 0, 0};
}

void save_coarse(const CoarseFeature& g, const std::string& path) {
    if (g.size() % 9 != 0) throw std::runtime_error("save_coarse: length not a multiple of 9");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_coarse: cannot open " + path);
    write_magic(out, kCoarseMagic);
    write_u32(out, static_cast<uint32_t>(g.size() / 9));
    write_u32(out, 9);
    std::vector<float> buf(g.size());
    for (int i = 0; i < g.size(); ++i) buf[i] = static_cast<float>(g[i]);
    write_f32_block(out, buf);
    if (!out) throw std::runtime_error("save_coarse: write failure on " + path);
}

CoarseFeature load_coarse(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_coarse: cannot open " + path);
    expect_magic(in, kCoarseMagic, "load_coarse");
    const uint32_t p = read_u32(in, "load_coarse");
    const uint32_t comp = read_u32(in, "load_coarse");
    if (comp != 9) throw std::runtime_error("load_coarse: unexpected component count");
    const auto buf = read_f32_block(in, static_cast<size_t>(p) * 9, "load_coarse");
    CoarseFeature g(static_cast<int>(buf.size()));
    for (size_t i = 0; i < buf.size(); ++i) g[static_cast<int>(i)] = buf[i];
    return g;
}

}  // namespace bodyrep
