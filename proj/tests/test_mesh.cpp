#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bodyrep/mesh.hpp"
#include "bodyrep/nn.hpp"
#include "test_support.hpp"

using namespace bodyrep;
namespace bt = bodyrep::testing;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("load_obj parses vertices and faces") {
    const std::string path = temp_path("tetra.obj");
    {
        std::ofstream out(path);
        out << "# tetra\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
            << "f 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n";
    }
    const Mesh m = load_obj(path);
    CHECK(m.num_vertices() == 4);
    CHECK(m.num_triangles() == 4);
    CHECK(m.triangles[0] == std::array<int, 3>{0, 1, 2});
}

TEST_CASE("load_obj rejects 0-based face indices") {
    const std::string path = temp_path("bad.obj");
    {
        std::ofstream out(path);
        out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n";
    }
    CHECK_THROWS_WITH_AS(load_obj(path), doctest::Contains("index out of range"),
                         std::runtime_error);
}

TEST_CASE("load_obj fan-triangulates quads") {
    const std::string path = temp_path("quad.obj");
    {
        std::ofstream out(path);
        out << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
    }
    const Mesh m = load_obj(path);
    REQUIRE(m.num_triangles() == 2);
    CHECK(m.triangles[0] == std::array<int, 3>{0, 1, 2});
    CHECK(m.triangles[1] == std::array<int, 3>{0, 2, 3});
}

TEST_CASE("save_obj round trip") {
    const Mesh cube = bt::cube();
    const std::string path = temp_path("cube.obj");
    save_obj(cube, path);
    const Mesh back = load_obj(path);
    REQUIRE(back.num_vertices() == cube.num_vertices());
    CHECK(bt::max_vertex_deviation(cube, back) < 1e-6);
    CHECK(back.triangles == cube.triangles);

    CHECK_THROWS_WITH_AS(save_obj(Mesh{}, path), doctest::Contains("empty mesh"),
                         std::runtime_error);
}

TEST_CASE("cotan weights on the regular tetrahedron") {
    const Mesh tet = bt::tetrahedron();
    const CotanWeights w = cotan_weights(tet);
    // Every angle is 60 degrees: c = (cot60 + cot60)/2 = 1/sqrt(3).
    const double expected = 1.0 / std::sqrt(3.0);
    for (int i = 0; i < 4; ++i) {
        REQUIRE(w.neighbors[i].size() == 3);
        for (double cw : w.weights[i]) CHECK(cw == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("right-angle diagonal clamps to epsilon") {
    // Unit square split along the diagonal: opposite angles are 90 degrees.
    Mesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    const CotanWeights w = cotan_weights(m);
    CHECK(w.weight(0, 2) == doctest::Approx(CotanWeights::kEpsilonW));
}

TEST_CASE("boundary edge uses a single cotangent") {
    Mesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, std::sqrt(3.0) / 2.0, 0)};
    m.triangles = {{0, 1, 2}};
    const CotanWeights w = cotan_weights(m);
    CHECK(w.weight(0, 1) == doctest::Approx(0.5 / std::tan(M_PI / 3)).epsilon(1e-9));
}

TEST_CASE("degenerate triangle is reported by index") {
    Mesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)};
    m.triangles = {{0, 1, 2}};
    CHECK_THROWS_WITH_AS(cotan_weights(m), doctest::Contains("triangle 0"), std::runtime_error);
}

TEST_CASE("cotan Laplacian rows annihilate constants when no clamping fires") {
    // L has diag sum(c_ij) and off-diagonal -c_ij; applied to the all-ones
    // vector every row must vanish. The tetrahedron has no obtuse angles, so
    // the clamp never fires and the identity holds exactly.
    const Mesh tet = bt::tetrahedron();
    const CotanWeights w = cotan_weights(tet);
    for (int i = 0; i < tet.num_vertices(); ++i) {
        double diag = 0.0;
        double off = 0.0;
        for (double cw : w.weights[i]) {
            diag += cw;
            off += cw;
        }
        CHECK(std::abs(diag - off) < 1e-9);
        for (double cw : w.weights[i]) CHECK(cw > CotanWeights::kEpsilonW * 0.999);
    }
}

TEST_CASE("cotan weights are invariant under rigid motion") {
    const Mesh tet = bt::tetrahedron();
    const Mat3 R = axis_angle_to_rot(Vec3(0.3, -0.2, 0.9));
    const Mesh moved = bt::transformed(tet, R, Vec3(4, 5, 6));
    const CotanWeights a = cotan_weights(tet);
    const CotanWeights b = cotan_weights(moved);
    for (int i = 0; i < 4; ++i) {
        for (size_t k = 0; k < a.neighbors[i].size(); ++k) {
            CHECK(a.weights[i][k] == doctest::Approx(b.weights[i][k]).epsilon(1e-9));
        }
    }
}

TEST_CASE("orientation and connectivity checks") {
    CHECK(is_consistently_oriented(bt::cube()));
    CHECK(is_connected(bt::cube()));

    Mesh broken = bt::cube();
    std::swap(broken.triangles[0][0], broken.triangles[0][1]);
    CHECK_FALSE(is_consistently_oriented(broken));

    // Two disjoint tetrahedra.
    Mesh two = bt::tetrahedron();
    const Mesh other = bt::transformed(bt::tetrahedron(), Mat3::Identity(), Vec3(10, 0, 0));
    const int off = two.num_vertices();
    for (const auto& v : other.vertices) two.vertices.push_back(v);
    for (const auto& t : other.triangles) two.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
    CHECK_FALSE(is_connected(two));
}

TEST_CASE("procrustes identity") {
    const Mesh tet = bt::tetrahedron();
    const RigidTransform rt = procrustes_align(tet.vertices, tet.vertices, false);
    CHECK((rt.rotation - Mat3::Identity()).norm() < 1e-12);
    CHECK(rt.translation.norm() < 1e-12);
}

TEST_CASE("procrustes recovers a planted rigid motion") {
    const Mesh tet = bt::tetrahedron();
    const Mat3 R = axis_angle_to_rot(Vec3(0, 0, M_PI / 6));
    const Vec3 t(1, 2, 3);
    const Mesh moved = bt::transformed(tet, R, t);
    const RigidTransform rt = procrustes_align(tet.vertices, moved.vertices, false);
    CHECK((rt.rotation - R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((rt.translation - t).norm() < 1e-9);
}

TEST_CASE("procrustes with scale") {
    const Mesh tet = bt::tetrahedron();
    Mesh scaled = tet;
    for (auto& v : scaled.vertices) v *= 2.0;
    const RigidTransform rt = procrustes_align(tet.vertices, scaled.vertices, true);
    CHECK(rt.scale == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("procrustes inverse composition is identity for random rotations") {
    nn::RandomEngine rng(17);
    const Mesh tet = bt::tetrahedron();
    for (int k = 0; k < 50; ++k) {
        const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        const Mat3 R = axis_angle_to_rot(axis * rng.uniform(0.0, 3.0));
        const Vec3 t(rng.normal(), rng.normal(), rng.normal());
        const Mesh moved = bt::transformed(tet, R, t);
        const RigidTransform rt = procrustes_align(tet.vertices, moved.vertices, false);
        const RigidTransform inv = rt.inverse();
        for (int i = 0; i < tet.num_vertices(); ++i) {
            CHECK((inv.apply(moved.vertices[i]) - tet.vertices[i]).norm() < 1e-9);
        }
    }
}

TEST_CASE("procrustes error cases") {
    std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
    CHECK_THROWS(procrustes_align(two, two, false));
    std::vector<Vec3> line = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)};
    CHECK_THROWS(procrustes_align(line, line, false));
}

TEST_CASE("part segmentation sidecar round trip") {
    const Mesh cube = bt::cube();
    std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1, 1};
    const PartSegmentation parts = make_part_segmentation(cube, labels, 2);
    CHECK(parts.adjacent(0, 1));
    const std::string path = temp_path("parts.json");
    save_parts(parts, path);
    const PartSegmentation back = load_parts(path, cube.num_vertices());
    CHECK(back.labels == parts.labels);
    CHECK(back.part_count == 2);
    CHECK(back.adjacent(0, 1));

    CHECK_THROWS(make_part_segmentation(cube, labels, 3));  // part 2 owns nothing
    CHECK_THROWS(load_parts(path, 12));
}
