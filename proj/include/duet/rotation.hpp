#pragma once

#include <array>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace duet {

using Rot6 = std::array<double, 6>;

// Continuous 6-D rotation encoding: the first two columns of the matrix,
// column-major (c0.x, c0.y, c0.z, c1.x, c1.y, c1.z).
inline Rot6 rotation_to_6d(const Eigen::Matrix3d& r) {
  return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

// Gram-Schmidt orthonormalization of the two encoded columns; the third
// column completes a right-handed frame.
inline Eigen::Matrix3d rotation_from_6d(const double* v) {
  Eigen::Vector3d a(v[0], v[1], v[2]);
  Eigen::Vector3d b(v[3], v[4], v[5]);
  Eigen::Vector3d c0 = a.normalized();
  Eigen::Vector3d c1 = (b - c0.dot(b) * c0).normalized();
  Eigen::Vector3d c2 = c0.cross(c1);
  Eigen::Matrix3d r;
  r.col(0) = c0;
  r.col(1) = c1;
  r.col(2) = c2;
  return r;
}

inline Eigen::Matrix3d rotation_from_6d(const Rot6& v) { return rotation_from_6d(v.data()); }

inline Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline Eigen::Matrix3d rot_x(double a) { return axis_angle(Eigen::Vector3d::UnitX(), a); }
inline Eigen::Matrix3d rot_y(double a) { return axis_angle(Eigen::Vector3d::UnitY(), a); }
inline Eigen::Matrix3d rot_z(double a) { return axis_angle(Eigen::Vector3d::UnitZ(), a); }

inline bool is_rotation(const Eigen::Matrix3d& r, double tol = 1e-6) {
  return r.allFinite() && (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace duet
