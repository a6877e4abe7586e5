#pragma once

#include <array>

namespace dynakf {

/// 6-DoF pose: translation xyz then XYZ-intrinsic Euler angles (radians).
using Pose6 = std::array<double, 6>;
using Rot3 = std::array<double, 9>;  // row-major 3x3

Rot3 rot_from_euler(double roll, double pitch, double yaw);
std::array<double, 3> euler_from_rot(const Rot3& r);
Rot3 rot_mul(const Rot3& a, const Rot3& b);
Rot3 rot_transpose(const Rot3& r);
std::array<double, 3> rot_apply(const Rot3& r, const std::array<double, 3>& v);
/// Geodesic angle of the rotation, in radians.
double rot_angle(const Rot3& r);

struct Transform {
  Rot3 r;
  std::array<double, 3> t;

  static Transform identity();
  static Transform from_pose(const Pose6& p);
  Pose6 to_pose() const;
  Transform inverse() const;
};

Transform compose(const Transform& a, const Transform& b);

}  // namespace dynakf
