#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>
#include <string>

namespace strata {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// r(t) = origin + t * direction, restricted to [t_near, t_far].
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3(0, 0, -1);
  double t_near = 0.0;
  double t_far = 1.0;
  /// Pixel radius at unit distance along the ray.
  double pixel_footprint = 0.0;
  int level = 0;

  Vec3 at(double t) const { return origin + t * direction; }
};

/// Pinhole camera. The pose maps camera coordinates to world coordinates;
/// the camera looks down its local -z axis with +y up and +x right.
struct Camera {
  int width = 0;
  int height = 0;
  double focal = 1.0;
  Mat4 pose = Mat4::Identity();
  double t_near = 0.0;
  double t_far = 1.0;
  int level = 0;

  Vec3 position() const { return pose.block<3, 1>(0, 3); }
  Mat3 rotation() const { return pose.block<3, 3>(0, 0); }
  /// World-space viewing direction (camera -z).
  Vec3 forward() const { return -rotation().col(2); }

  void validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("Camera: non-positive image size");
    if (!(focal > 0)) throw std::invalid_argument("Camera: focal must be positive");
    if (!(t_near >= 0 && t_near < t_far)) {
      throw std::invalid_argument("Camera: require 0 <= t_near < t_far");
    }
    const Mat3 r = rotation();
    if ((r.transpose() * r - Mat3::Identity()).norm() > 1e-6) {
      throw std::invalid_argument("Camera: pose rotation is not orthonormal");
    }
  }
};

/// Camera-to-world pose at `eye` looking at `target`. The up hint is world +z;
/// when the view axis is parallel to it, world +y is used instead.
inline Mat4 look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up(0, 0, 1);
  if (std::abs(forward.dot(up)) > 1.0 - 1e-9) up = Vec3(0, 1, 0);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 cam_up = right.cross(forward);
  Mat4 pose = Mat4::Identity();
  pose.block<3, 1>(0, 0) = right;
  pose.block<3, 1>(0, 1) = cam_up;
  pose.block<3, 1>(0, 2) = -forward;
  pose.block<3, 1>(0, 3) = eye;
  return pose;
}

}  // namespace strata
