#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "canon9d/error.hpp"

namespace canon9d {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

using Vector3 = Vec3<double>;
using Matrix3 = Mat3<double>;
using Points = Points3<double>;

inline constexpr double kPi = std::numbers::pi;
constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Rotation + translation + uniform scale: p' = scale * rotation * p + translation.
template <typename Scalar = double>
struct SimilarityTransform {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();
  Scalar scale = Scalar(1);

  static SimilarityTransform Identity() { return {}; }

  /// Applies the transform to a single point or to every column of a 3xN block.
  template <typename Derived>
  auto operator*(const Eigen::MatrixBase<Derived>& points) const {
    return ((scale * rotation) * points).colwise() + translation;
  }

  template <typename NewScalar>
  SimilarityTransform<NewScalar> cast() const {
    return {rotation.template cast<NewScalar>(), translation.template cast<NewScalar>(),
            static_cast<NewScalar>(scale)};
  }
};

using Sim3 = SimilarityTransform<double>;

/// Oriented box: the box frame maps into the parent frame by (rotation, translation);
/// extents are full side lengths along the box x/y/z axes.
template <typename Scalar = double>
struct Pose9D {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();
  Vec3<Scalar> extents = Vec3<Scalar>::Ones();
};

using Box9D = Pose9D<double>;

// ---------------------------------------------------------------------------
// Rotation utilities

/// Nearest rotation in Frobenius norm (polar factor with determinant fix).
template <typename Derived>
Mat3<typename Derived::Scalar> nearest_rotation(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Eigen::JacobiSVD<Mat3<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3<Scalar> d = Mat3<Scalar>::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? Scalar(-1) : Scalar(1);
  return svd.matrixU() * d * svd.matrixV().transpose();
}

template <typename Derived>
bool is_rotation(const Eigen::MatrixBase<Derived>& m, double tol = 1e-6) {
  using Scalar = typename Derived::Scalar;
  if (!m.allFinite()) return false;
  const Mat3<Scalar> r = m;
  return (r.transpose() * r - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - Scalar(1)) <= tol;
}

/// Angle of r1^T r2 in [0, pi].
template <typename Scalar>
Scalar geodesic_distance(const Mat3<Scalar>& r1, const Mat3<Scalar>& r2) {
  const Mat3<Scalar> rel = r1.transpose() * r2;
  // atan2 of the skew and symmetric parts; equals arccos((tr - 1) / 2) but keeps
  // full precision near 0 and pi.
  const Vec3<Scalar> skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  const Scalar s = Scalar(0.5) * skew.norm();
  const Scalar c = std::clamp((rel.trace() - Scalar(1)) / Scalar(2), Scalar(-1), Scalar(1));
  return std::atan2(s, c);
}

template <typename Scalar>
Mat3<Scalar> rotation_about(const Vec3<Scalar>& axis, Scalar angle) {
  return Eigen::AngleAxis<Scalar>(angle, axis.normalized()).toRotationMatrix();
}

/// Rodrigues exponential of an axis-angle vector.
template <typename Scalar>
Mat3<Scalar> exp_so3(const Vec3<Scalar>& omega) {
  const Scalar angle = omega.norm();
  if (angle < Scalar(1e-300)) return Mat3<Scalar>::Identity();
  return Eigen::AngleAxis<Scalar>(angle, omega / angle).toRotationMatrix();
}

template <typename Scalar>
Mat3<Scalar> skew(const Vec3<Scalar>& v) {
  Mat3<Scalar> m;
  m << Scalar(0), -v.z(), v.y(), v.z(), Scalar(0), -v.x(), -v.y(), v.x(), Scalar(0);
  return m;
}

// ---------------------------------------------------------------------------
// Similarity transform algebra

/// Result applies b first, then a.
template <typename Scalar>
SimilarityTransform<Scalar> compose(const SimilarityTransform<Scalar>& a,
                                    const SimilarityTransform<Scalar>& b) {
  SimilarityTransform<Scalar> out;
  out.rotation = nearest_rotation(a.rotation * b.rotation);
  out.translation = a.scale * (a.rotation * b.translation) + a.translation;
  out.scale = a.scale * b.scale;
  return out;
}

template <typename Scalar>
SimilarityTransform<Scalar> inverse(const SimilarityTransform<Scalar>& t) {
  SimilarityTransform<Scalar> out;
  out.rotation = t.rotation.transpose();
  out.scale = Scalar(1) / t.scale;
  out.translation = -out.scale * (out.rotation * t.translation);
  return out;
}

template <typename Scalar, typename Derived>
Points3<Scalar> apply(const SimilarityTransform<Scalar>& t, const Eigen::MatrixBase<Derived>& points) {
  return t * points;
}

template <typename Scalar>
bool is_valid(const SimilarityTransform<Scalar>& t, double tol = 1e-6) {
  return is_rotation(t.rotation, tol) && t.translation.allFinite() && std::isfinite(t.scale) &&
         t.scale > Scalar(0);
}

template <typename Scalar>
bool is_valid(const Pose9D<Scalar>& p, double tol = 1e-6) {
  return is_rotation(p.rotation, tol) && p.translation.allFinite() && p.extents.allFinite() &&
         (p.extents.array() > Scalar(0)).all();
}

/// Throws InvalidArgument when the transform violates its invariants.
void check_valid(const Sim3& t, const char* what = "similarity transform");
void check_valid(const Box9D& p, const char* what = "pose");

// ---------------------------------------------------------------------------
// Featured surfaces

/// Vertices plus a variable-length set of unit feature vectors per vertex.
/// Feature columns for vertex i live in [offsets[i], offsets[i + 1]).
struct FeaturedSurface {
  Eigen::Matrix3Xf vertices;
  std::vector<std::uint32_t> offsets{0};
  Eigen::MatrixXf features;  // feature_dim x total observation count
  int feature_dim = 1;

  Eigen::Index vertex_count() const { return vertices.cols(); }
  std::uint32_t feature_count(Eigen::Index i) const { return offsets[i + 1] - offsets[i]; }
  auto vertex_features(Eigen::Index i) const {
    return features.middleCols(offsets[i], feature_count(i));
  }
  Points points() const { return vertices.cast<double>(); }

  /// Appends a vertex with its observations (columns of `obs`).
  void add_vertex(const Eigen::Vector3f& v, const Eigen::MatrixXf& obs);
};

/// Throws DimensionMismatch / InvalidFeature when storage is inconsistent.
void check_valid(const FeaturedSurface& s);

bool bitwise_equal(const FeaturedSurface& a, const FeaturedSurface& b);

/// Centroid and radius of the sphere centred on the centroid enclosing all points.
struct BoundingSphere {
  Vector3 center = Vector3::Zero();
  double radius = 0.0;
};

template <typename Derived>
BoundingSphere bounding_sphere(const Eigen::MatrixBase<Derived>& points) {
  BoundingSphere s;
  if (points.cols() == 0) return s;
  s.center = points.template cast<double>().rowwise().mean();
  s.radius = (points.template cast<double>().colwise() - s.center).colwise().norm().maxCoeff();
  return s;
}

}  // namespace canon9d
