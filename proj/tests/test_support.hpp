#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "bodyrep/mesh.hpp"

namespace bodyrep::testing {

/// Regular tetrahedron with unit edge length.
inline Mesh tetrahedron() {
    Mesh m;
    const double s = 1.0 / std::sqrt(2.0);
    m.vertices = {Vec3(1, 0, -s), Vec3(-1, 0, -s), Vec3(0, 1, s), Vec3(0, -1, s)};
    for (auto& v : m.vertices) v *= 0.5;  // edge length 1
    m.triangles = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
    return m;
}

/// Axis-aligned unit cube surface, 8 vertices, 12 triangles, watertight.
inline Mesh cube() {
    Mesh m;
    for (int i = 0; i < 8; ++i) {
        m.vertices.push_back(Vec3(i & 1 ? 1 : 0, i & 2 ? 1 : 0, i & 4 ? 1 : 0));
    }
    const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                             {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        m.triangles.push_back({q[0], q[1], q[2]});
        m.triangles.push_back({q[0], q[2], q[3]});
    }
    return m;
}

/// Triangle strip along x: vertices alternate between y = 0 and y = 1.
inline Mesh strip(int columns) {
    Mesh m;
    for (int i = 0; i < columns; ++i) {
        m.vertices.push_back(Vec3(i, 0, 0));
        m.vertices.push_back(Vec3(i, 1, 0));
    }
    for (int i = 0; i + 1 < columns; ++i) {
        const int a = 2 * i, b = 2 * i + 1, c = 2 * i + 2, d = 2 * i + 3;
        m.triangles.push_back({a, c, b});
        m.triangles.push_back({b, c, d});
    }
    return m;
}

inline Mesh transformed(const Mesh& m, const Mat3& A, const Vec3& t) {
    Mesh out = m;
    for (auto& v : out.vertices) v = A * v + t;
    return out;
}

inline double max_vertex_deviation(const Mesh& a, const Mesh& b) {
    double d = 0.0;
    for (int i = 0; i < a.num_vertices(); ++i) {
        d = std::max(d, (a.vertices[i] - b.vertices[i]).norm());
    }
    return d;
}

}  // namespace bodyrep::testing
