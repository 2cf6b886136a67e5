// SPDX-License-Identifier: Apache-2.0
//
// Box parameterization, pinhole camera model and yaw-only homogeneous frames.
//
// Conventions used throughout the library:
//  * The camera sits at the world origin. At zero pitch/roll the optical axis
//    is world +Z, which is also the vertical axis objects rotate about. The
//    synthetic scenes therefore look down at the floor from the ceiling.
//  * Angles are wrapped to [-pi, pi) after every addition or subtraction.
//  * Box sizes are full extents along the box's own x/y/z axes.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "explicit3d/errors.hpp"

namespace explicit3d {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle to [-pi, pi).
inline double wrap_angle(double a) {
  double w = a - kTwoPi * std::floor((a + kPi) / kTwoPi);
  if (w >= kPi) w -= kTwoPi;
  if (w < -kPi) w += kTwoPi;
  return w;
}

struct CameraIntrinsics {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();

  static CameraIntrinsics pinhole(double focal, double cx, double cy) {
    CameraIntrinsics out;
    out.k << focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0;
    return out;
  }
};

/// Camera orientation relative to the world; the camera's own yaw is removed
/// by construction.
struct CameraPose {
  double pitch_beta = 0.0;
  double roll_gamma = 0.0;
};

/// World-frame oriented box.
struct Box3D {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  double yaw = 0.0;
};

/// Per-object parameters in the camera system, as predicted by the object
/// decoder: projected-center offset, camera distance, size and yaw.
struct CameraSpaceParams {
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();
  double distance = 1.0;
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  double yaw = 0.0;
};

/// Multiplication order used when chaining a relative frame onto a world frame.
enum class ComposeOrder {
  kRelativeFirst,  // ^W T_j = ^i T_j * ^W T_i
  kWorldFirst,     // ^W T_j = ^W T_i * ^i T_j
};

/// Translation convention of corner frames.
enum class CornerConvention {
  kLiteral,  // translation c + s/2, half extent not rotated
  kRotated,  // translation c + R_z(theta) s/2
};

inline Eigen::Matrix3d rot_z(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Eigen::Matrix3d r;
  r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return r;
}

/// 4x4 rigid transform whose rotation block is a rotation about Z.
class HomogeneousFrame {
 public:
  HomogeneousFrame() : m_(Eigen::Matrix4d::Identity()) {}

  static HomogeneousFrame identity() { return {}; }

  static HomogeneousFrame from_yaw_translation(double theta,
                                               const Eigen::Vector3d& t) {
    HomogeneousFrame f;
    f.m_.topLeftCorner<3, 3>() = rot_z(theta);
    f.m_.topRightCorner<3, 1>() = t;
    return f;
  }

  /// Validates the bottom row and the Z-yaw structure of the rotation block.
  static HomogeneousFrame from_matrix(const Eigen::Matrix4d& m,
                                      double tol = 1e-9) {
    if (!is_valid(m, tol)) {
      throw InvalidInput("matrix is not a Z-yaw homogeneous frame");
    }
    HomogeneousFrame f;
    f.m_ = m;
    return f;
  }

  static bool is_valid(const Eigen::Matrix4d& m, double tol = 1e-9) {
    if (std::abs(m(3, 0)) > tol || std::abs(m(3, 1)) > tol ||
        std::abs(m(3, 2)) > tol || std::abs(m(3, 3) - 1.0) > tol) {
      return false;
    }
    if (std::abs(m(0, 2)) > tol || std::abs(m(1, 2)) > tol ||
        std::abs(m(2, 0)) > tol || std::abs(m(2, 1)) > tol ||
        std::abs(m(2, 2) - 1.0) > tol) {
      return false;
    }
    const Eigen::Matrix2d r = m.topLeftCorner<2, 2>();
    if ((r.transpose() * r - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() >
        tol) {
      return false;
    }
    return std::abs(r.determinant() - 1.0) <= tol;
  }

  const Eigen::Matrix4d& matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

 private:
  Eigen::Matrix4d m_;
};

/// Camera rotation from pitch and roll: R = R_z(beta) * R_x(gamma).
inline Eigen::Matrix3d camera_rotation(const CameraPose& pose) {
  const double cb = std::cos(pose.pitch_beta);
  const double sb = std::sin(pose.pitch_beta);
  const double cg = std::cos(pose.roll_gamma);
  const double sg = std::sin(pose.roll_gamma);
  Eigen::Matrix3d r;
  r << cb, -cg * sb, sb * sg,  //
      sb, cb * cg, -cb * sg,   //
      0.0, sg, cg;
  return r;
}

/// Lifts a pixel and a camera distance to a world point. `r` must be a
/// rotation, so its inverse is taken as the transpose; the result has norm d.
inline Eigen::Vector3d back_project(const Eigen::Vector2d& c, double d,
                                    const CameraIntrinsics& k,
                                    const Eigen::Matrix3d& r) {
  if (!(d > 0.0)) throw InvalidInput("back_project: distance must be positive");
  if (std::abs(k.k.determinant()) < 1e-12) {
    throw InvalidInput("back_project: singular intrinsics");
  }
  const Eigen::Vector3d ray = k.k.inverse() * Eigen::Vector3d(c.x(), c.y(), 1.0);
  return r.transpose() * (d * ray / ray.norm());
}

struct PixelProjection {
  Eigen::Vector2d pixel;
  double distance = 0.0;
};

/// Inverse of back_project for points in front of the camera.
inline PixelProjection project_center(const Eigen::Vector3d& point,
                                      const CameraIntrinsics& k,
                                      const Eigen::Matrix3d& r) {
  const Eigen::Vector3d cam = r * point;
  if (!(cam.z() > 0.0)) {
    throw InvalidInput("project_center: point is behind the camera");
  }
  const Eigen::Vector3d h = k.k * cam;
  return {Eigen::Vector2d(h.x() / h.z(), h.y() / h.z()), point.norm()};
}

inline HomogeneousFrame pose_frame(double theta, const Eigen::Vector3d& c) {
  return HomogeneousFrame::from_yaw_translation(theta, c);
}

/// Offset from a box frame's origin to its corner frame's origin.
inline Eigen::Vector3d corner_offset(double theta, const Eigen::Vector3d& s,
                                     CornerConvention conv) {
  if (conv == CornerConvention::kLiteral) return 0.5 * s;
  return rot_z(theta) * (0.5 * s);
}

inline HomogeneousFrame corner_frame(
    double theta, const Eigen::Vector3d& c, const Eigen::Vector3d& s,
    CornerConvention conv = CornerConvention::kLiteral) {
  if (!(s.minCoeff() > 0.0)) {
    throw InvalidInput("corner_frame: size must be positive");
  }
  return HomogeneousFrame::from_yaw_translation(theta,
                                                c + corner_offset(theta, s, conv));
}

inline HomogeneousFrame compose(const HomogeneousFrame& a,
                                const HomogeneousFrame& b) {
  HomogeneousFrame out = HomogeneousFrame::from_matrix(a.matrix() * b.matrix(),
                                                       1e-6);
  return out;
}

/// Chains a relative frame onto a world frame in the requested order.
inline HomogeneousFrame chain(const HomogeneousFrame& relative,
                              const HomogeneousFrame& world,
                              ComposeOrder order) {
  return order == ComposeOrder::kRelativeFirst ? compose(relative, world)
                                               : compose(world, relative);
}

struct YawPose {
  double theta = 0.0;
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
};

inline YawPose extract_pose(const HomogeneousFrame& t) {
  const Eigen::Matrix4d& m = t.matrix();
  if (!HomogeneousFrame::is_valid(m, 1e-6)) {
    throw InvalidInput("extract_pose: rotation block is not a Z-yaw");
  }
  return {wrap_angle(std::atan2(m(1, 0), m(0, 0))), t.translation()};
}

/// Recovers the box size from a corner frame and its pose frame.
inline Eigen::Vector3d extract_scale(
    const HomogeneousFrame& b, const HomogeneousFrame& t,
    CornerConvention conv = CornerConvention::kLiteral) {
  if ((b.rotation() - t.rotation()).cwiseAbs().maxCoeff() > 1e-9) {
    throw InvalidInput("extract_scale: frames have different rotations");
  }
  const Eigen::Vector3d diff = b.translation() - t.translation();
  if (conv == CornerConvention::kLiteral) return 2.0 * diff;
  return 2.0 * (t.rotation().transpose() * diff);
}

/// Corner sign pattern shared by every corner routine: bit 0 -> x, bit 1 -> y,
/// bit 2 -> z; a set bit means the positive half extent.
inline constexpr std::array<std::array<double, 3>, 8> kCornerSigns = {{
    {-1, -1, -1},
    {1, -1, -1},
    {-1, 1, -1},
    {1, 1, -1},
    {-1, -1, 1},
    {1, -1, 1},
    {-1, 1, 1},
    {1, 1, 1},
}};

inline Eigen::Matrix<double, 8, 3> box_corners(const Box3D& b) {
  const Eigen::Matrix3d r = rot_z(b.yaw);
  Eigen::Matrix<double, 8, 3> out;
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d local(kCornerSigns[i][0] * 0.5 * b.size.x(),
                                kCornerSigns[i][1] * 0.5 * b.size.y(),
                                kCornerSigns[i][2] * 0.5 * b.size.z());
    out.row(i) = (b.centroid + r * local).transpose();
  }
  return out;
}

namespace detail {

using Polygon = std::vector<Eigen::Vector2d>;

inline Polygon footprint(const Box3D& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const double hx = 0.5 * b.size.x();
  const double hy = 0.5 * b.size.y();
  Polygon p;
  p.reserve(4);
  // Counter-clockwise.
  const std::array<std::array<double, 2>, 4> local = {
      {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}}};
  for (const auto& l : local) {
    p.emplace_back(b.centroid.x() + c * l[0] - s * l[1],
                   b.centroid.y() + s * l[0] + c * l[1]);
  }
  return p;
}

inline double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
inline Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Eigen::Vector2d a = clip[e];
    const Eigen::Vector2d b = clip[(e + 1) % clip.size()];
    const Eigen::Vector2d edge = b - a;
    Polygon in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Eigen::Vector2d p = in[i];
      const Eigen::Vector2d q = in[(i + 1) % in.size()];
      const double sp = cross(edge, p - a);
      const double sq = cross(edge, q - a);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

inline double polygon_area(const Polygon& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    a += cross(p[i], p[(i + 1) % p.size()]);
  }
  return 0.5 * std::abs(a);
}

}  // namespace detail

/// Exact intersection-over-union of two Z-yaw boxes.
inline double iou3d(const Box3D& a, const Box3D& b) {
  const double za0 = a.centroid.z() - 0.5 * a.size.z();
  const double za1 = a.centroid.z() + 0.5 * a.size.z();
  const double zb0 = b.centroid.z() - 0.5 * b.size.z();
  const double zb1 = b.centroid.z() + 0.5 * b.size.z();
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  const double va = a.size.prod();
  const double vb = b.size.prod();
  if (dz <= 0.0) return 0.0;
  const double area = detail::polygon_area(
      detail::clip_convex(detail::footprint(a), detail::footprint(b)));
  const double inter = area * dz;
  const double uni = va + vb - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// World yaw whose Z-rotation is closest to R_cam * R_z(theta_cam).
inline double camera_yaw_to_world(double theta_cam, const CameraPose& pose) {
  const Eigen::Matrix3d m = camera_rotation(pose) * rot_z(theta_cam);
  return wrap_angle(std::atan2(m(1, 0), m(0, 0)));
}

/// Exact inverse of camera_yaw_to_world for |roll| < pi/2.
inline double world_yaw_to_camera(double theta_world, const CameraPose& pose) {
  const double phi = theta_world - pose.pitch_beta;
  return wrap_angle(
      std::atan2(std::sin(phi) / std::cos(pose.roll_gamma), std::cos(phi)));
}

/// Converts camera-space parameters, anchored at the 2D box center `c2d`, to
/// a world box.
inline Box3D camera_to_world(const CameraSpaceParams& p,
                             const Eigen::Vector2d& c2d,
                             const CameraIntrinsics& k, const CameraPose& pose) {
  Box3D out;
  out.centroid = back_project(c2d + p.offset, p.distance, k, camera_rotation(pose));
  out.size = p.size;
  out.yaw = camera_yaw_to_world(p.yaw, pose);
  return out;
}

/// Inverse of camera_to_world used by the scene generator.
inline CameraSpaceParams world_to_camera(const Box3D& box,
                                         const Eigen::Vector2d& c2d,
                                         const CameraIntrinsics& k,
                                         const CameraPose& pose) {
  const PixelProjection proj =
      project_center(box.centroid, k, camera_rotation(pose));
  CameraSpaceParams out;
  out.offset = proj.pixel - c2d;
  out.distance = proj.distance;
  out.size = box.size;
  out.yaw = world_yaw_to_camera(box.yaw, pose);
  return out;
}

}  // namespace explicit3d
