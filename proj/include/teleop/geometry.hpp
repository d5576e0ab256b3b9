#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace teleop {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle into [-pi, pi).
inline double normalize_angle(double a) {
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  r -= kPi;
  // fmod rounding can land exactly on +pi
  if (r >= kPi) r -= 2.0 * kPi;
  return r;
}

/// Shortest signed difference to - from, in [-pi, pi).
inline double angle_diff(double to, double from) { return normalize_angle(to - from); }

/// Position in the workspace frame (x right, y forward, z up, origin on the
/// table under the robot base) plus Z-Y-X Euler angles.
struct Pose6D {
  Vec3 position{Vec3::Zero()};
  double yaw{0.0};
  double pitch{0.0};
  double roll{0.0};

  Pose6D() = default;
  Pose6D(Vec3 p, double yaw_ = 0.0, double pitch_ = 0.0, double roll_ = 0.0)
      : position(std::move(p)), yaw(normalize_angle(yaw_)), pitch(pitch_), roll(roll_) {}

  Mat3 rotation() const {
    return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
            Eigen::AngleAxisd(roll, Vec3::UnitX()))
        .toRotationMatrix();
  }

  bool operator==(const Pose6D& o) const {
    return position == o.position && yaw == o.yaw && pitch == o.pitch && roll == o.roll;
  }
};

/// Rigid transform used for composing the camera mount onto the end-effector.
struct Transform {
  Mat3 rotation{Mat3::Identity()};
  Vec3 translation{Vec3::Zero()};

  static Transform from_pose(const Pose6D& p) { return {p.rotation(), p.position}; }

  Transform operator*(const Transform& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Vec3 apply(const Vec3& v) const { return rotation * v + translation; }
  Vec3 apply_inverse(const Vec3& v) const { return rotation.transpose() * (v - translation); }

  Pose6D to_pose() const {
    // Z-Y-X decomposition; pitch at +-pi/2 is degenerate and resolved with roll = 0.
    const Mat3& r = rotation;
    double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    double yaw, roll;
    if (std::abs(std::cos(pitch)) > 1e-9) {
      yaw = std::atan2(r(1, 0), r(0, 0));
      roll = std::atan2(r(2, 1), r(2, 2));
    } else {
      yaw = std::atan2(-r(0, 1), r(1, 1));
      roll = 0.0;
    }
    return Pose6D{translation, yaw, pitch, normalize_angle(roll)};
  }
};

/// Axis-aligned rectangle in the table plane.
struct Rect2 {
  Vec2 min{Vec2::Zero()};
  Vec2 max{Vec2::Zero()};

  bool contains(const Vec2& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
  }
  double width() const { return max.x() - min.x(); }
  double height() const { return max.y() - min.y(); }
};

}  // namespace teleop
