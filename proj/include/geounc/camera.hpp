#pragma once

#include "geounc/core.hpp"

#include <Eigen/SVD>

#include <optional>
#include <string>
#include <vector>

namespace geounc {

/// Interleaved float image, row-major, channel fastest.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }
  Mat3 inverse() const {
    Mat3 k;
    k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
    return k;
  }
};

/// World-to-camera rigid transform: x_cam = R x_world + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

/// A pinhole view. Pixel (x, y) has its center at integer coordinates (x, y);
/// the camera looks along +z of its own frame. Depth stores the distance along
/// the unit pixel ray to the first hit, 0 for a miss.
struct CameraView {
  int id = 0;
  Intrinsics K;
  Pose pose;
  int width = 0;
  int height = 0;
  Image image;
  std::vector<float> depth;

  bool has_depth() const { return !depth.empty(); }
  float depth_at(int x, int y) const { return depth[static_cast<std::size_t>(y) * width + x]; }

  Vec3 center() const { return -pose.R.transpose() * pose.t; }
  Vec3 to_camera(const Vec3& world) const { return pose.R * world + pose.t; }

  /// Unit world-space direction of the ray through pixel coordinate (u, v).
  Vec3 pixel_direction(double u, double v) const {
    const Vec3 cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
    return (pose.R.transpose() * cam).normalized();
  }

  /// Projects a world point; empty if it lies at or behind the image plane.
  std::optional<Vec2> project(const Vec3& world, double min_depth = 1e-9) const {
    const Vec3 c = to_camera(world);
    if (c.z() <= min_depth) return std::nullopt;
    return Vec2(K.fx * c.x() / c.z() + K.cx, K.fy * c.y() / c.z() + K.cy);
  }

  bool inside(const Vec2& px, double margin = 0.0) const {
    return px.x() >= margin && px.y() >= margin && px.x() <= width - 1 - margin && px.y() <= height - 1 - margin;
  }

  void validate() const {
    const Mat3& R = pose.R;
    const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
    require(ortho < 1e-9, "camera " + std::to_string(id) + ": R is not orthonormal");
    require(std::abs(R.determinant() - 1.0) < 1e-9, "camera " + std::to_string(id) + ": det(R) != 1");
    require(K.fx > 0.0 && K.fy > 0.0, "camera " + std::to_string(id) + ": focal lengths must be positive");
    require(width > 0 && height > 0, "camera " + std::to_string(id) + ": empty resolution");
    require(K.cx >= 0.0 && K.cx < width && K.cy >= 0.0 && K.cy < height,
            "camera " + std::to_string(id) + ": principal point outside the image");
  }
};

/// Camera at `eye` looking at `target`; image y grows along -up.
inline CameraView look_at(int id, const Vec3& eye, const Vec3& target, const Vec3& up_hint, double fov_y_deg,
                          int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up = up_hint;
  if (std::abs(forward.dot(up.normalized())) > 0.999) up = std::abs(forward.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  // Re-orthonormalize so the invariants hold to machine precision.
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  R = svd.matrixU() * svd.matrixV().transpose();

  CameraView cam;
  cam.id = id;
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * height / std::tan(0.5 * fov_y_deg * std::numbers::pi / 180.0);
  cam.K = {f, f, 0.5 * (width - 1), 0.5 * (height - 1)};
  cam.pose.R = R;
  cam.pose.t = -R * eye;
  return cam;
}

enum class RigLayout { sphere, hemisphere, ring };

/// `count` cameras at distance `radius` from `target`, all looking at it.
/// Sphere and hemisphere layouts use a Fibonacci lattice of directions.
inline std::vector<CameraView> make_rig(int count, RigLayout layout, const Vec3& target, double radius,
                                        double fov_y_deg, int width, int height) {
  require(count >= 1, "camera count must be >= 1");
  std::vector<CameraView> views;
  views.reserve(count);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    Vec3 dir;
    if (layout == RigLayout::ring) {
      const double phi = 2.0 * std::numbers::pi * i / count;
      dir = Vec3(std::cos(phi), std::sin(phi), 0.25).normalized();
    } else {
      const double z = layout == RigLayout::sphere ? 1.0 - (2.0 * i + 1.0) / count : 1.0 - (i + 0.5) / count;
      const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * i;
      dir = Vec3(s * std::cos(phi), s * std::sin(phi), z);
    }
    views.push_back(look_at(i, target + radius * dir, target, Vec3::UnitZ(), fov_y_deg, width, height));
  }
  return views;
}

}  // namespace geounc
