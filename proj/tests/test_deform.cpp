#include <doctest.h>
#include <functional>

#include <cmath>
#include <filesystem>

#include "bodyrep/deform.hpp"
#include "bodyrep/nn.hpp"
#include "test_support.hpp"

using namespace bodyrep;
namespace bt = bodyrep::testing;

TEST_CASE("local deformation gradient trivial cases") {
    const Mesh tet = bt::tetrahedron();
    const CotanWeights w = cotan_weights(tet);

    for (int i = 0; i < 4; ++i) {
        CHECK((local_deform_gradient(tet, tet, w, i) - Mat3::Identity()).cwiseAbs().maxCoeff() <
              1e-12);
    }

    Mesh doubled = tet;
    for (auto& v : doubled.vertices) v *= 2.0;
    for (int i = 0; i < 4; ++i) {
        CHECK((local_deform_gradient(tet, doubled, w, i) - 2.0 * Mat3::Identity())
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    }

    const Mat3 R = axis_angle_to_rot(Vec3(0, 0, M_PI / 4));
    const Mesh rotated = bt::transformed(tet, R, Vec3::Zero());
    for (int i = 0; i < 4; ++i) {
        CHECK((local_deform_gradient(tet, rotated, w, i) - R).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("rank-deficient one-ring is regularized and flagged") {
    // A single triangle: each vertex has only 2 edge directions.
    Mesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    m.triangles = {{0, 1, 2}};
    const CotanWeights w = cotan_weights(m);
    bool flagged = false;
    const Mat3 T = local_deform_gradient(m, m, w, 0, {}, &flagged);
    CHECK(flagged);
    CHECK(T.allFinite());
}

TEST_CASE("encode_acap identity and translation invariance") {
    const Mesh tet = bt::tetrahedron();
    const CotanWeights w = cotan_weights(tet);
    const AcapFeature f = encode_acap(tet, tet, w);
    REQUIRE(f.size() == 36);
    for (int i = 0; i < 4; ++i) {
        CHECK(f.segment<3>(9 * i).norm() < 1e-12);
        Eigen::Matrix<double, 6, 1> id;
        id << 1, 0, 0, 1, 0, 1;
        CHECK((f.segment<6>(9 * i + 3) - id).norm() < 1e-9);
    }

    // Edge differences absorb the translation; only the rounding of
    // (v + t) - (w + t) remains.
    const Mesh moved = bt::transformed(tet, Mat3::Identity(), Vec3(0.3, -4, 11));
    const AcapFeature f2 = encode_acap(tet, moved, w);
    CHECK((f - f2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encode_acap recovers a global rotation") {
    const Mesh tet = bt::tetrahedron();
    const CotanWeights w = cotan_weights(tet);
    const Mesh rotated = bt::transformed(tet, axis_angle_to_rot(Vec3(0, 0, M_PI / 2)), Vec3::Zero());
    const AcapFeature f = encode_acap(tet, rotated, w);
    for (int i = 0; i < 4; ++i) {
        CHECK((f.segment<3>(9 * i) - Vec3(0, 0, M_PI / 2)).norm() < 1e-9);
        Eigen::Matrix<double, 6, 1> id;
        id << 1, 0, 0, 1, 0, 1;
        CHECK((f.segment<6>(9 * i + 3) - id).norm() < 1e-9);
    }
}

TEST_CASE("encode_acap is bit-reproducible") {
    const Mesh cube = bt::cube();
    const CotanWeights w = cotan_weights(cube);
    const Mesh target = bt::transformed(cube, axis_angle_to_rot(Vec3(0.2, 0.1, 0.4)), Vec3(1, 2, 3));
    const AcapFeature a = encode_acap(cube, target, w);
    const AcapFeature b = encode_acap(cube, target, w);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("branch flip resolves opposing raw axes") {
    // Two adjacent vertices with raw (z, 0.1) and (-z, 0.1): the second must
    // land on (0, 0, -0.1), 0.2 away, instead of any shifted branch.
    Mesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, 1, 0)};
    m.triangles = {{0, 1, 2}};
    RawRotations raw;
    raw.axis = {Vec3(0, 0, 1), Vec3(0, 0, -1), Vec3(0, 0, 1)};
    raw.angle = {0.1, 0.1, 0.1};
    const auto r = make_consistent(m, raw);
    CHECK((r[0] - Vec3(0, 0, 0.1)).norm() < 1e-12);
    CHECK((r[1] - Vec3(0, 0, -0.1)).norm() < 1e-12);
}

namespace {

double consistency_objective(const Mesh& m, const std::vector<Vec3>& r) {
    double obj = 0.0;
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k], b = t[(k + 1) % 3];
            if (a < b) obj += (r[a] - r[b]).squaredNorm();
        }
    }
    return obj;
}

}  // namespace

namespace {

RawRotations principal_branches(const std::vector<double>& theta) {
    RawRotations raw;
    const int n = static_cast<int>(theta.size());
    raw.axis.resize(n);
    raw.angle.resize(n);
    for (int i = 0; i < n; ++i) {
        const Vec3 r = rot_to_axis_angle(axis_angle_to_rot(Vec3(0, 0, theta[i])));
        const double angle = r.norm();
        raw.axis[i] = angle > 1e-12 ? Vec3(r / angle) : Vec3(0, 0, 1);
        raw.angle[i] = angle;
    }
    return raw;
}

}  // namespace

TEST_CASE("unwinding past pi matches exhaustive branch search on a short chain") {
    // 6 vertices rotating 0 -> 1.5*pi about z; the right assignment crosses
    // the principal branch boundary.
    const int columns = 3;
    const Mesh m = bt::strip(columns);
    const int n = m.num_vertices();
    std::vector<double> truth(n);
    for (int i = 0; i < n; ++i) truth[i] = 1.5 * M_PI * (i / 2) / (columns - 1);
    const RawRotations raw = principal_branches(truth);
    const auto result = make_consistent(m, raw);
    for (int i = 0; i < n; ++i) {
        CHECK(result[i].z() == doctest::Approx(truth[i]).epsilon(1e-9));
    }

    // Exhaustive search over the full candidate product, vertex 0 pinned to
    // its principal branch like the propagation.
    std::vector<std::vector<Vec3>> candidates(n);
    candidates[0] = {raw.axis[0] * raw.angle[0]};
    for (int i = 1; i < n; ++i) {
        candidates[i] = rotation_branch_candidates(raw.axis[i], raw.angle[i], Vec3(0, 0, 1));
    }
    double best_obj = std::numeric_limits<double>::infinity();
    std::vector<Vec3> current(n);
    std::function<void(int)> search = [&](int v) {
        if (v == n) {
            best_obj = std::min(best_obj, consistency_objective(m, current));
            return;
        }
        for (const Vec3& c : candidates[v]) {
            current[v] = c;
            search(v + 1);
        }
    };
    search(0);
    CHECK(consistency_objective(m, result) == doctest::Approx(best_obj).epsilon(1e-9));
}

TEST_CASE("propagated angles increase monotonically up to 3*pi") {
    const int columns = 8;
    const Mesh m = bt::strip(columns);
    const int n = m.num_vertices();
    std::vector<double> truth(n);
    for (int i = 0; i < n; ++i) truth[i] = 3.0 * M_PI * (i / 2) / (columns - 1);
    const auto result = make_consistent(m, principal_branches(truth));
    for (int i = 2; i < n; i += 2) {
        CHECK(result[i].z() >= result[i - 2].z() - 1e-9);
    }
    for (int i = 0; i < n; ++i) {
        CHECK(result[i].z() == doctest::Approx(truth[i]).epsilon(1e-9));
    }
}

TEST_CASE("feature scaler") {
    std::vector<Eigen::VectorXd> corpus;
    for (double v : {-2.0, 0.0, 2.0}) {
        Eigen::VectorXd x(2);
        x << v, 5.0;
        corpus.push_back(x);
    }
    const FeatureScaler scaler = FeatureScaler::fit(corpus);
    Eigen::VectorXd probe(2);
    probe << -2.0, 5.0;
    CHECK(scaler.scale(probe)[0] == doctest::Approx(-0.95));
    CHECK(scaler.scale(probe)[1] == doctest::Approx(0.0));
    probe << 0.0, 5.0;
    CHECK(scaler.scale(probe)[0] == doctest::Approx(0.0));
    probe << 2.0, 5.0;
    CHECK(scaler.scale(probe)[0] == doctest::Approx(0.95));

    for (const auto& x : corpus) {
        CHECK((scaler.unscale(scaler.scale(x)) - x).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("acap and scaler files round trip with their magic") {
    namespace fs = std::filesystem;
    const std::string acap_path = (fs::temp_directory_path() / "t.acap").string();
    const std::string scal_path = (fs::temp_directory_path() / "t.scal").string();

    AcapFeature f(18);
    for (int i = 0; i < 18; ++i) f[i] = 0.25 * i - 1.0;
    save_acap(f, acap_path);
    const AcapFeature back = load_acap(acap_path);
    CHECK((f - back).cwiseAbs().maxCoeff() < 1e-6);  // float32 storage

    std::vector<Eigen::VectorXd> corpus = {f, 2.0 * f};
    const FeatureScaler scaler = FeatureScaler::fit(corpus);
    save_scaler(scaler, scal_path);
    const FeatureScaler sback = load_scaler(scal_path);
    CHECK((scaler.minimum() - sback.minimum()).cwiseAbs().maxCoeff() < 1e-6);

    CHECK_THROWS_WITH_AS(load_acap(scal_path), doctest::Contains("bad magic"), std::runtime_error);
    CHECK_THROWS_WITH_AS(load_scaler(acap_path), doctest::Contains("bad magic"), std::runtime_error);
}
