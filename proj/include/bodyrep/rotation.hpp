#pragma once

#include <Eigen/Dense>

namespace bodyrep {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Skew-symmetric matrix [v]x with [v]x * w = v.cross(w).
Mat3 skew(const Vec3& v);

/// Rodrigues formula, exp([r]x). Safe for all magnitudes including ||r|| -> 0.
Mat3 axis_angle_to_rot(const Vec3& r);

/// Principal-branch matrix logarithm of a rotation, ||r|| in [0, pi].
/// Near pi the axis comes from the largest diagonal of (R+I)/2 with the
/// first nonzero component made positive, so the branch is deterministic.
Vec3 rot_to_axis_angle(const Mat3& R);

/// Polar factorization T = R*S with R a proper rotation and S symmetric
/// positive definite, via SVD. Throws if det(T) <= 0.
void polar_decompose(const Mat3& T, Mat3& R, Mat3& S);

/// Partial derivative of exp([r]x) with respect to r[k].
/// Uses the closed form of Gallego & Yezzi; at r = 0 this is skew(e_k).
Mat3 rotation_derivative(const Vec3& r, int k);

/// Right Jacobian J_r of SO(3): exp([r + d]x) ~ exp([r]x) exp([J_r(r) d]x).
Mat3 so3_right_jacobian(const Vec3& r);

/// Inverse of the right Jacobian (series form near 0).
Mat3 so3_right_jacobian_inv(const Vec3& r);

/// Pack the upper triangle of a symmetric matrix as (S11,S12,S13,S22,S23,S33).
Eigen::Matrix<double, 6, 1> sym_to_vec(const Mat3& S);

/// Inverse of sym_to_vec.
Mat3 vec_to_sym(const Eigen::Matrix<double, 6, 1>& s);

}  // namespace bodyrep
