#include "canon9d/canonical.hpp"

#include <algorithm>
#include <cmath>

namespace canon9d {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(Errc::EmptyInput, "quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * double(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - double(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Box9D fit_box(const Points& points, double robust_quantile) {
  if (!(robust_quantile >= 0.0 && robust_quantile < 0.5)) {
    throw Error(Errc::InvalidArgument, "robust quantile must lie in [0, 0.5)");
  }
  if (points.cols() < 4) throw Error(Errc::TooFewPoints, "box fitting needs at least 4 points");
  Box9D box;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> v(static_cast<std::size_t>(points.cols()));
    for (Eigen::Index i = 0; i < points.cols(); ++i) v[static_cast<std::size_t>(i)] = points(axis, i);
    double lower, upper;
    if (robust_quantile == 0.0) {
      const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
      lower = *mn;
      upper = *mx;
    } else {
      lower = quantile(v, robust_quantile);
      upper = quantile(std::move(v), 1.0 - robust_quantile);
    }
    box.translation(axis) = 0.5 * (lower + upper);
    box.extents(axis) = upper - lower;
  }
  if (!(box.extents.minCoeff() >= 1e-9)) {
    throw Error(Errc::DegenerateExtent, "point cloud is flat along at least one axis");
  }
  return box;
}

Sim3 canonicalizer(const Box9D& annotation) {
  Sim3 t;
  t.rotation = annotation.rotation.transpose();
  t.translation = -(t.rotation * annotation.translation);
  t.scale = 1.0;
  return t;
}

CanonicalPose make_canonical_pose(const Points& instance_points, const Sim3& instance_to_reference,
                                  const Box9D& reference_annotation, double robust_quantile) {
  check_valid(instance_to_reference, "alignment transform");
  if (!is_rotation(reference_annotation.rotation)) {
    throw Error(Errc::InvalidArgument, "reference annotation rotation is not orthonormal");
  }
  CanonicalPose out;
  out.world_to_canonical = compose(canonicalizer(reference_annotation), instance_to_reference);
  out.box = fit_box(out.world_to_canonical * instance_points, robust_quantile);
  out.world_to_canonical.translation -= out.box.translation;
  out.box.translation.setZero();
  out.box.rotation.setIdentity();
  return out;
}

Box9D world_pose(const CanonicalPose& canonical) {
  const Sim3 placement = inverse(canonical.world_to_canonical);
  Box9D pose;
  pose.rotation = placement.rotation;
  pose.translation = placement * canonical.box.translation;
  pose.extents = canonical.box.extents * placement.scale;
  return pose;
}

std::vector<Box9D> propagate(const CanonicalPose& canonical, const std::vector<CameraFrame>& trajectory) {
  const Box9D world = world_pose(canonical);
  std::vector<Box9D> out;
  out.reserve(trajectory.size());
  for (const auto& frame : trajectory) {
    const Sim3& cam = frame.world_to_camera;
    Box9D p;
    p.rotation = nearest_rotation(cam.rotation * world.rotation);
    p.translation = cam * world.translation;
    p.extents = world.extents;
    out.push_back(p);
  }
  return out;
}

Box9D annotate_reference(const Points& points, const Matrix3& rotation, const Vector3& origin,
                         double robust_quantile) {
  Box9D frame;
  frame.rotation = rotation;
  frame.translation = origin;
  const Points local = canonicalizer(frame) * points;
  const Box9D box = fit_box(local, robust_quantile);
  Box9D out;
  out.rotation = rotation;
  out.translation = rotation * box.translation + origin;
  out.extents = box.extents;
  return out;
}

}  // namespace canon9d
