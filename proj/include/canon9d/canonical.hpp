#pragma once

#include <vector>

#include "canon9d/core.hpp"
#include "canon9d/ingest.hpp"

namespace canon9d {

inline constexpr double kDefaultBoxQuantile = 0.01;

/// world_to_canonical maps an object's reconstruction frame into the shared
/// canonical frame; the box is axis-aligned there and centred at the origin.
struct CanonicalPose {
  Sim3 world_to_canonical;
  Box9D box;
};

/// Linear interpolation between order statistics; `values` need not be sorted.
double quantile(std::vector<double> values, double q);

/// Axis-aligned box spanning the [q, 1 - q] quantiles per axis (q = 0 gives the
/// exact min/max box). Throws TooFewPoints or DegenerateExtent (< 1e-9).
Box9D fit_box(const Points& points, double robust_quantile = kDefaultBoxQuantile);

/// Rigid map from a reference's reconstruction frame into its annotated frame.
Sim3 canonicalizer(const Box9D& annotation);

/// Composes the annotation's canonicalizer with the instance->reference transform,
/// fits the box in canonical coordinates and re-centres the frame on the box.
CanonicalPose make_canonical_pose(const Points& instance_points, const Sim3& instance_to_reference,
                                  const Box9D& reference_annotation,
                                  double robust_quantile = kDefaultBoxQuantile);

/// The object's oriented box in its own reconstruction frame (extents in
/// reconstruction units).
Box9D world_pose(const CanonicalPose& canonical);

/// Per-frame oriented box in camera coordinates. Extents are identical for every
/// frame.
std::vector<Box9D> propagate(const CanonicalPose& canonical, const std::vector<CameraFrame>& trajectory);

/// Reference annotation from an annotator-chosen frame: the box is fitted to the
/// surface in that frame and the translation moved to the box centre.
Box9D annotate_reference(const Points& points, const Matrix3& rotation, const Vector3& origin,
                         double robust_quantile = kDefaultBoxQuantile);

}  // namespace canon9d
