#include <doctest.h>

#include <cmath>

#include "bodyrep/nn.hpp"
#include "bodyrep/rotation.hpp"

using namespace bodyrep;

namespace {

Mat3 random_rotation(nn::RandomEngine& rng) {
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    return axis_angle_to_rot(axis * rng.uniform(0.0, M_PI - 1e-3));
}

}  // namespace

TEST_CASE("axis-angle round trip on random rotations") {
    nn::RandomEngine rng(7);
    for (int k = 0; k < 500; ++k) {
        const Mat3 R = random_rotation(rng);
        const Mat3 back = axis_angle_to_rot(rot_to_axis_angle(R));
        CHECK((back - R).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("axis-angle canonical cases") {
    CHECK(rot_to_axis_angle(Mat3::Identity()).norm() == doctest::Approx(0.0));
    const Vec3 r = rot_to_axis_angle(axis_angle_to_rot(Vec3(0, 0, M_PI / 2)));
    CHECK(r.x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.z() == doctest::Approx(M_PI / 2));
}

TEST_CASE("angle near pi uses the largest-diagonal branch deterministically") {
    const Vec3 axis = Vec3(1, 2, 3).normalized();
    const Mat3 R = axis_angle_to_rot(axis * M_PI);
    const Vec3 r1 = rot_to_axis_angle(R);
    const Vec3 r2 = rot_to_axis_angle(R);
    CHECK((r1 - r2).norm() == 0.0);
    CHECK(r1.norm() == doctest::Approx(M_PI).epsilon(1e-9));
    CHECK((axis_angle_to_rot(r1) - R).cwiseAbs().maxCoeff() < 1e-9);
    // First nonzero component positive.
    CHECK(r1.x() > 0.0);
}

TEST_CASE("polar decomposition") {
    Mat3 R, S;
    polar_decompose(Mat3::Identity(), R, S);
    CHECK((R - Mat3::Identity()).norm() < 1e-12);
    CHECK((S - Mat3::Identity()).norm() < 1e-12);

    const Mat3 D = Vec3(2, 3, 4).asDiagonal();
    polar_decompose(D, R, S);
    CHECK((R - Mat3::Identity()).norm() < 1e-12);
    CHECK((S - D).norm() < 1e-12);

    const Mat3 R0 = axis_angle_to_rot(Vec3(0, 0, M_PI / 3));
    const Mat3 S0 = Vec3(1, 2, 1).asDiagonal();
    polar_decompose(R0 * S0, R, S);
    CHECK((R - R0).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((S - S0).cwiseAbs().maxCoeff() < 1e-9);

    CHECK_THROWS(polar_decompose(Vec3(-1, 1, 1).asDiagonal(), R, S));
}

TEST_CASE("polar decomposition construct-and-recover on random inputs") {
    nn::RandomEngine rng(11);
    for (int k = 0; k < 200; ++k) {
        const Mat3 R0 = random_rotation(rng);
        Mat3 A = Mat3::Zero();
        for (int i = 0; i < 3; ++i) {
            const Vec3 v(rng.normal(), rng.normal(), rng.normal());
            A += v * v.transpose();
        }
        const Mat3 S0 = A + 0.5 * Mat3::Identity();  // symmetric PD
        Mat3 R, S;
        polar_decompose(R0 * S0, R, S);
        CHECK((R - R0).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((S - S0).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("rotation derivative matches finite differences") {
    nn::RandomEngine rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3 r(rng.normal(), rng.normal(), rng.normal());
        const double h = 1e-6;
        for (int k = 0; k < 3; ++k) {
            Vec3 rp = r, rm = r;
            rp[k] += h;
            rm[k] -= h;
            const Mat3 fd = (axis_angle_to_rot(rp) - axis_angle_to_rot(rm)) / (2 * h);
            CHECK((rotation_derivative(r, k) - fd).cwiseAbs().maxCoeff() < 1e-7);
        }
    }
    // At the origin the derivative is the skew generator.
    CHECK((rotation_derivative(Vec3::Zero(), 2) - skew(Vec3::UnitZ())).norm() < 1e-12);
}

TEST_CASE("right Jacobian and its inverse") {
    nn::RandomEngine rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3 r(rng.normal(), rng.normal(), rng.normal());
        const Mat3 J = so3_right_jacobian(r);
        CHECK((so3_right_jacobian_inv(r) * J - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        // exp([r + d]) ~ exp([r]) exp([J d])
        const Vec3 d = 1e-7 * Vec3(rng.normal(), rng.normal(), rng.normal());
        const Mat3 lhs = axis_angle_to_rot(r + d);
        const Mat3 rhs = axis_angle_to_rot(r) * axis_angle_to_rot(J * d);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("symmetric pack/unpack") {
    Eigen::Matrix<double, 6, 1> s;
    s << 1, 2, 3, 4, 5, 6;
    CHECK((sym_to_vec(vec_to_sym(s)) - s).norm() == 0.0);
}
