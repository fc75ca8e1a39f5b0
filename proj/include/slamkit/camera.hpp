#pragma once

// Camera projection models selected at runtime by tag.
//
//   Ideal           pixel = K * (x/z, y/z)
//   PinholeDistort  pixel = K * d(x/z, y/z), d = radial-tangential polynomial
//                   with coefficients (k1, k2, p1, p2, k3) in OpenCV order
//   ATAN            pixel = K * f(r) * (x/z, y/z),
//                   f(r) = atan(2 r tan(w/2)) / (w r), r = |(x/z, y/z)|
//
// The ATAN parameter w acts on the normalized image plane (not pixels).

#include <Eigen/Core>
#include <Eigen/LU>

#include <cmath>
#include <optional>
#include <ostream>
#include <string>

#include "slamkit/config.hpp"
#include "slamkit/error.hpp"

namespace slamkit {

enum class CameraModel { kIdeal, kPinholeDistort, kAtan };

inline const char* to_string(CameraModel m) {
  switch (m) {
    case CameraModel::kIdeal:
      return "ideal";
    case CameraModel::kPinholeDistort:
      return "pinhole";
    case CameraModel::kAtan:
      return "atan";
  }
  return "unknown";
}

inline CameraModel camera_model_from_string(const std::string& s) {
  if (s == "ideal") return CameraModel::kIdeal;
  if (s == "pinhole" || s == "opencv" || s == "pinhole_distort") return CameraModel::kPinholeDistort;
  if (s == "atan") return CameraModel::kAtan;
  throw InvalidArgument("unknown camera model '" + s + "' (expected ideal, pinhole or atan)");
}

struct Unprojection {
  Eigen::Vector3d bearing;  ///< unit length
  bool in_image = true;
};

class Camera {
 public:
  /// Maximum Newton steps when inverting the distortion polynomial.
  static constexpr int kMaxUndistortIterations = 20;
  /// Unprojection fails when the reprojection residual exceeds this.
  static constexpr double kUnprojectTolerancePx = 0.01;

  Camera() : Camera(CameraModel::kIdeal, 1, 1, 1, 1, 0, 0) {}

  static Camera ideal(int width, int height, double fx, double fy, double cx, double cy) {
    return Camera(CameraModel::kIdeal, width, height, fx, fy, cx, cy);
  }

  static Camera pinhole_distort(int width, int height, double fx, double fy, double cx, double cy, double k1,
                                double k2, double p1, double p2, double k3 = 0) {
    Camera c(CameraModel::kPinholeDistort, width, height, fx, fy, cx, cy);
    c.k1_ = k1;
    c.k2_ = k2;
    c.p1_ = p1;
    c.p2_ = p2;
    c.k3_ = k3;
    return c;
  }

  static Camera atan(int width, int height, double fx, double fy, double cx, double cy, double w) {
    if (!(w >= 0) || w >= M_PI) throw InvalidArgument("ATAN parameter w must lie in [0, pi)");
    Camera c(CameraModel::kAtan, width, height, fx, fy, cx, cy);
    c.w_ = w;
    return c;
  }

  /// Reads camera.model, camera.width, camera.height, camera.fx/fy/cx/cy,
  /// camera.k1..k3, camera.p1/p2 and camera.w under `prefix`.
  static Camera from_config(const config::ConfigTree& tree, const std::string& prefix = "camera") {
    auto key = [&](const char* k) { return prefix + "." + k; };
    const auto model = camera_model_from_string(tree.get<std::string>(key("model"), "ideal"));
    const int w = tree.require<int>(key("width"));
    const int h = tree.require<int>(key("height"));
    const double fx = tree.require<double>(key("fx"));
    const double fy = tree.get<double>(key("fy"), fx);
    const double cx = tree.get<double>(key("cx"), w / 2.0);
    const double cy = tree.get<double>(key("cy"), h / 2.0);
    switch (model) {
      case CameraModel::kIdeal:
        return ideal(w, h, fx, fy, cx, cy);
      case CameraModel::kPinholeDistort:
        return pinhole_distort(w, h, fx, fy, cx, cy, tree.get<double>(key("k1"), 0), tree.get<double>(key("k2"), 0),
                               tree.get<double>(key("p1"), 0), tree.get<double>(key("p2"), 0),
                               tree.get<double>(key("k3"), 0));
      case CameraModel::kAtan:
        return atan(w, h, fx, fy, cx, cy, tree.get<double>(key("w"), 0));
    }
    throw InvalidArgument("unreachable camera model");
  }

  void to_config(config::ConfigTree& tree, const std::string& prefix = "camera") const {
    auto key = [&](const char* k) { return prefix + "." + k; };
    tree.set(key("model"), std::string(to_string(model_)));
    tree.set(key("width"), std::int64_t{width_});
    tree.set(key("height"), std::int64_t{height_});
    tree.set(key("fx"), fx_);
    tree.set(key("fy"), fy_);
    tree.set(key("cx"), cx_);
    tree.set(key("cy"), cy_);
    if (model_ == CameraModel::kPinholeDistort) {
      tree.set(key("k1"), k1_);
      tree.set(key("k2"), k2_);
      tree.set(key("p1"), p1_);
      tree.set(key("p2"), p2_);
      tree.set(key("k3"), k3_);
    } else if (model_ == CameraModel::kAtan) {
      tree.set(key("w"), w_);
    }
  }

  CameraModel model() const { return model_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double fx() const { return fx_; }
  double fy() const { return fy_; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double k1() const { return k1_; }
  double k2() const { return k2_; }
  double p1() const { return p1_; }
  double p2() const { return p2_; }
  double k3() const { return k3_; }
  double w() const { return w_; }

  Eigen::Matrix3d K() const {
    Eigen::Matrix3d k;
    k << fx_, 0, cx_, 0, fy_, cy_, 0, 0, 1;
    return k;
  }

  bool in_image(const Eigen::Vector2d& px) const {
    return px.x() >= 0 && px.y() >= 0 && px.x() < width_ && px.y() < height_;
  }

  /// Empty for points on or behind the image plane.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& p_c) const {
    if (!(p_c.z() > 0)) return std::nullopt;
    const Eigen::Vector2d d = distort(p_c.head<2>() / p_c.z());
    return Eigen::Vector2d(fx_ * d.x() + cx_, fy_ * d.y() + cy_);
  }

  /// Unit bearing through `px`. Throws SolverError if the distortion
  /// inverse leaves a residual above kUnprojectTolerancePx.
  Unprojection unproject(const Eigen::Vector2d& px) const {
    const Eigen::Vector2d d((px.x() - cx_) / fx_, (px.y() - cy_) / fy_);
    const Eigen::Vector2d u = undistort(d);
    return {Eigen::Vector3d(u.x(), u.y(), 1.0).normalized(), in_image(px)};
  }

  /// Normalized plane -> distorted normalized plane.
  Eigen::Vector2d distort(const Eigen::Vector2d& u) const {
    switch (model_) {
      case CameraModel::kIdeal:
        return u;
      case CameraModel::kPinholeDistort: {
        const double x = u.x(), y = u.y();
        const double r2 = x * x + y * y;
        const double radial = 1 + r2 * (k1_ + r2 * (k2_ + r2 * k3_));
        return {x * radial + 2 * p1_ * x * y + p2_ * (r2 + 2 * x * x),
                y * radial + p1_ * (r2 + 2 * y * y) + 2 * p2_ * x * y};
      }
      case CameraModel::kAtan:
        return atan_factor(u.norm()) * u;
    }
    return u;
  }

  /// Inverse of distort(). Closed form for Ideal and ATAN, Newton iteration
  /// for the polynomial model.
  Eigen::Vector2d undistort(const Eigen::Vector2d& d) const {
    switch (model_) {
      case CameraModel::kIdeal:
        return d;
      case CameraModel::kAtan: {
        const double rd = d.norm();
        if (w_ < 1e-8) return d;
        if (rd < 1e-12) return d * (w_ / (2 * std::tan(w_ / 2)));
        const double arg = rd * w_;
        if (arg >= M_PI / 2) throw SolverError("pixel lies outside the ATAN model domain");
        const double ru = std::tan(arg) / (2 * std::tan(w_ / 2));
        return d * (ru / rd);
      }
      case CameraModel::kPinholeDistort:
        return undistort_polynomial(d);
    }
    return d;
  }

 private:
  Camera(CameraModel model, int width, int height, double fx, double fy, double cx, double cy)
      : model_(model), width_(width), height_(height), fx_(fx), fy_(fy), cx_(cx), cy_(cy) {
    if (width <= 0 || height <= 0) throw InvalidArgument("camera size must be positive");
    if (!(fx > 0) || !(fy > 0)) throw InvalidArgument("focal lengths must be positive");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
      throw InvalidArgument("principal point must lie inside the image");
  }

  double atan_factor(double r) const {
    if (w_ < 1e-8) return 1.0;
    const double t = 2 * std::tan(w_ / 2);
    if (r < 1e-8) {
      // Series of atan(t r) / (w r) about r = 0.
      return (t / w_) * (1 - t * t * r * r / 3);
    }
    return std::atan(t * r) / (w_ * r);
  }

  Eigen::Vector2d undistort_polynomial(const Eigen::Vector2d& d) const {
    Eigen::Vector2d u = d;
    for (int it = 0; it < kMaxUndistortIterations; ++it) {
      const Eigen::Vector2d f = distort(u) - d;
      if (f.norm() < 1e-15) break;
      const double x = u.x(), y = u.y();
      const double r2 = x * x + y * y;
      const double radial = 1 + r2 * (k1_ + r2 * (k2_ + r2 * k3_));
      const double dradial = k1_ + r2 * (2 * k2_ + 3 * k3_ * r2);  // d radial / d r2
      Eigen::Matrix2d J;
      J(0, 0) = radial + 2 * x * x * dradial + 2 * p1_ * y + 6 * p2_ * x;
      J(0, 1) = 2 * x * y * dradial + 2 * p1_ * x + 2 * p2_ * y;
      J(1, 0) = 2 * x * y * dradial + 2 * p1_ * x + 2 * p2_ * y;
      J(1, 1) = radial + 2 * y * y * dradial + 6 * p1_ * y + 2 * p2_ * x;
      const Eigen::Vector2d step = J.partialPivLu().solve(f);
      if (!step.allFinite()) break;
      u -= step;
      if (step.norm() < 1e-16) break;
    }
    const double ur2 = u.squaredNorm();
    if (!(1 + ur2 * (k1_ + ur2 * (k2_ + ur2 * k3_)) > 0)) {
      throw SolverError("pixel lies beyond the fold of the distortion polynomial");
    }
    const Eigen::Vector2d r = distort(u) - d;
    const double residual_px = std::hypot(r.x() * fx_, r.y() * fy_);
    if (!(residual_px <= kUnprojectTolerancePx)) {
      throw SolverError("distortion inverse did not converge within " + std::to_string(kMaxUndistortIterations) +
                        " iterations (residual " + std::to_string(residual_px) + " px)");
    }
    return u;
  }

  CameraModel model_;
  int width_, height_;
  double fx_, fy_, cx_, cy_;
  double k1_ = 0, k2_ = 0, p1_ = 0, p2_ = 0, k3_ = 0;
  double w_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, const Camera& c) {
  os << to_string(c.model()) << ' ' << c.width() << ' ' << c.height() << ' ' << c.fx() << ' ' << c.fy() << ' '
     << c.cx() << ' ' << c.cy();
  if (c.model() == CameraModel::kPinholeDistort)
    os << ' ' << c.k1() << ' ' << c.k2() << ' ' << c.p1() << ' ' << c.p2() << ' ' << c.k3();
  if (c.model() == CameraModel::kAtan) os << ' ' << c.w();
  return os;
}

/// Parses the operator<< form.
inline Camera read_camera(std::istream& is) {
  std::string tag;
  int w = 0, h = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  if (!(is >> tag >> w >> h >> fx >> fy >> cx >> cy)) throw ParseError("truncated camera record");
  switch (camera_model_from_string(tag)) {
    case CameraModel::kIdeal:
      return Camera::ideal(w, h, fx, fy, cx, cy);
    case CameraModel::kPinholeDistort: {
      double k1, k2, p1, p2, k3;
      if (!(is >> k1 >> k2 >> p1 >> p2 >> k3)) throw ParseError("truncated distortion coefficients");
      return Camera::pinhole_distort(w, h, fx, fy, cx, cy, k1, k2, p1, p2, k3);
    }
    case CameraModel::kAtan: {
      double om;
      if (!(is >> om)) throw ParseError("missing ATAN parameter");
      return Camera::atan(w, h, fx, fy, cx, cy, om);
    }
  }
  throw ParseError("unknown camera record");
}

}  // namespace slamkit
