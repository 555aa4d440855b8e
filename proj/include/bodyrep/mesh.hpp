#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "bodyrep/rotation.hpp"

namespace bodyrep {

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> part_labels;  // empty or one id per vertex

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_triangles() const { return static_cast<int>(triangles.size()); }

    Vec3 bbox_min() const;
    Vec3 bbox_max() const;
    double bbox_diagonal() const;
};

/// One-ring adjacency plus symmetric cotangent weights, clamped from below
/// so the reconstruction system stays positive definite on obtuse meshes.
struct CotanWeights {
    static constexpr double kEpsilonW = 1e-6;

    std::vector<std::vector<int>> neighbors;     // N(i), sorted ascending
    std::vector<std::vector<double>> weights;    // parallel to neighbors

    double weight(int i, int j) const;  // 0 if (i,j) is not an edge
};

struct PartSegmentation {
    std::vector<int> labels;
    int part_count = 0;
    std::set<std::pair<int, int>> part_adjacency;  // unordered pairs, a < b

    std::vector<std::vector<int>> part_vertices() const;
    bool adjacent(int a, int b) const;
};

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
    RigidTransform inverse() const;
};

Mesh load_obj(const std::string& path);
void save_obj(const Mesh& mesh, const std::string& path);

/// Throws if any triangle index is out of range or any triangle is degenerate
/// by index. Orientation and connectivity have separate checks since some
/// inputs legitimately fail them (load_obj only warns).
void check_indices(const Mesh& mesh);
bool is_connected(const Mesh& mesh);
bool is_consistently_oriented(const Mesh& mesh);

CotanWeights cotan_weights(const Mesh& mesh);

std::vector<Vec3> vertex_normals(const Mesh& mesh);

PartSegmentation load_parts(const std::string& path, int expected_vertices);
void save_parts(const PartSegmentation& parts, const std::string& path);
PartSegmentation make_part_segmentation(const Mesh& mesh, const std::vector<int>& labels, int part_count);

/// Least-squares rigid (optionally similarity) alignment source -> target,
/// reflection excluded. Throws on fewer than 3 points or a degenerate span.
RigidTransform procrustes_align(const std::vector<Vec3>& source,
                                const std::vector<Vec3>& target,
                                bool with_scale = false);

}  // namespace bodyrep
