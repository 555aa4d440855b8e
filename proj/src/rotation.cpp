#include "bodyrep/rotation.hpp"

#include <cmath>
#include <stdexcept>

namespace bodyrep {

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
        -v.y(), v.x(), 0;
    return m;
}

Mat3 axis_angle_to_rot(const Vec3& r) {
    const double theta = r.norm();
    if (theta < 1e-12) {
        // Second-order Taylor keeps the round trip exact to double precision.
        const Mat3 k = skew(r);
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    return Eigen::AngleAxisd(theta, r / theta).toRotationMatrix();
}

Vec3 rot_to_axis_angle(const Mat3& R) {
    const double cos_theta = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
    const double theta = std::acos(cos_theta);

    if (theta < 1e-7) {
        // r ~ vee(R - R^T)/2 for small angles.
        return Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)) * 0.5;
    }

    if (M_PI - theta < 1e-6) {
        // Near pi the skew part vanishes; recover the axis from uu^T = (R+I)/2.
        const Mat3 B = 0.5 * (R + Mat3::Identity());
        int k = 0;
        B.diagonal().maxCoeff(&k);
        Vec3 u = B.col(k) / std::sqrt(std::max(B(k, k), 1e-16));
        u.normalize();
        for (int i = 0; i < 3; ++i) {
            if (std::abs(u[i]) > 1e-9) {
                if (u[i] < 0) u = -u;
                break;
            }
        }
        return theta * u;
    }

    Vec3 axis(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    axis /= 2.0 * std::sin(theta);
    return theta * axis;
}

void polar_decompose(const Mat3& T, Mat3& R, Mat3& S) {
    if (T.determinant() <= 0.0) {
        throw std::runtime_error("polar_decompose: reflective or singular deformation");
    }
    Eigen::JacobiSVD<Mat3> svd(T, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3 U = svd.matrixU();
    const Mat3 V = svd.matrixV();
    R = U * V.transpose();
    S = V * svd.singularValues().asDiagonal() * V.transpose();
    // det(T) > 0 forces det(U)det(V) = +1, so R is a proper rotation already.
}

Mat3 rotation_derivative(const Vec3& r, int k) {
    const double theta2 = r.squaredNorm();
    Vec3 e = Vec3::Zero();
    e[k] = 1.0;
    if (theta2 < 1e-16) {
        return skew(e);
    }
    const Mat3 R = axis_angle_to_rot(r);
    const Vec3 v = r[k] * r + skew(r) * ((Mat3::Identity() - R) * e);
    return (skew(v) / theta2) * R;
}

Mat3 so3_right_jacobian(const Vec3& r) {
    const double theta = r.norm();
    const Mat3 K = skew(r);
    if (theta < 1e-6) {
        return Mat3::Identity() - 0.5 * K + (1.0 / 6.0) * K * K;
    }
    const double t2 = theta * theta;
    const double a = (1.0 - std::cos(theta)) / t2;
    const double b = (theta - std::sin(theta)) / (t2 * theta);
    return Mat3::Identity() - a * K + b * K * K;
}

Mat3 so3_right_jacobian_inv(const Vec3& r) {
    const double theta = r.norm();
    const Mat3 K = skew(r);
    if (theta < 1e-6) {
        return Mat3::Identity() + 0.5 * K + (1.0 / 12.0) * K * K;
    }
    const double c = 1.0 / (theta * theta) -
                     (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
    return Mat3::Identity() + 0.5 * K + c * K * K;
}

Eigen::Matrix<double, 6, 1> sym_to_vec(const Mat3& S) {
    Eigen::Matrix<double, 6, 1> s;
    s << S(0, 0), S(0, 1), S(0, 2), S(1, 1), S(1, 2), S(2, 2);
    return s;
}

Mat3 vec_to_sym(const Eigen::Matrix<double, 6, 1>& s) {
    Mat3 S;
    S << s[0], s[1], s[2],
         s[1], s[3], s[4],
         s[2], s[4], s[5];
    return S;
}

}  // namespace bodyrep
