#include "dynakf/se3.hpp"

#include <algorithm>
#include <cmath>

namespace dynakf {

Rot3 rot_from_euler(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  // R = Rx(roll) * Ry(pitch) * Rz(yaw)
  return Rot3{cp * cy,
              -cp * sy,
              sp,
              cr * sy + sr * sp * cy,
              cr * cy - sr * sp * sy,
              -sr * cp,
              sr * sy - cr * sp * cy,
              sr * cy + cr * sp * sy,
              cr * cp};
}

std::array<double, 3> euler_from_rot(const Rot3& r) {
  const double sp = std::clamp(r[2], -1.0, 1.0);
  const double pitch = std::asin(sp);
  double roll, yaw;
  if (std::fabs(sp) < 1.0 - 1e-12) {
    roll = std::atan2(-r[5], r[8]);
    yaw = std::atan2(-r[1], r[0]);
  } else {
    // gimbal lock: fold the indeterminate rotation into roll
    roll = std::atan2(r[3], r[4]);
    yaw = 0.0;
  }
  return {roll, pitch, yaw};
}

Rot3 rot_mul(const Rot3& a, const Rot3& b) {
  Rot3 c{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[static_cast<size_t>(i * 3 + k)] * b[static_cast<size_t>(k * 3 + j)];
      c[static_cast<size_t>(i * 3 + j)] = s;
    }
  }
  return c;
}

Rot3 rot_transpose(const Rot3& r) {
  return Rot3{r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]};
}

std::array<double, 3> rot_apply(const Rot3& r, const std::array<double, 3>& v) {
  return {r[0] * v[0] + r[1] * v[1] + r[2] * v[2],
          r[3] * v[0] + r[4] * v[1] + r[5] * v[2],
          r[6] * v[0] + r[7] * v[1] + r[8] * v[2]};
}

double rot_angle(const Rot3& r) {
  const double tr = r[0] + r[4] + r[8];
  const double c = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  if (c >= 1.0 - 1e-12) return 0.0;  // trace rounding would read as ~1e-8 rad
  return std::acos(c);
}

Transform Transform::identity() {
  return {Rot3{1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}};
}

Transform Transform::from_pose(const Pose6& p) {
  return {rot_from_euler(p[3], p[4], p[5]), {p[0], p[1], p[2]}};
}

Pose6 Transform::to_pose() const {
  const auto e = euler_from_rot(r);
  return {t[0], t[1], t[2], e[0], e[1], e[2]};
}

Transform Transform::inverse() const {
  const Rot3 rt = rot_transpose(r);
  const auto ti = rot_apply(rt, {-t[0], -t[1], -t[2]});
  return {rt, ti};
}

Transform compose(const Transform& a, const Transform& b) {
  const auto tb = rot_apply(a.r, b.t);
  return {rot_mul(a.r, b.r), {a.t[0] + tb[0], a.t[1] + tb[1], a.t[2] + tb[2]}};
}

}  // namespace dynakf
