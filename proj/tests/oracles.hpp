#pragma once

// Exhaustive and closed-form references the library is checked against. None
// of these call into the code they verify.

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "canon9d/align.hpp"
#include "canon9d/cluster.hpp"
#include "canon9d/core.hpp"

namespace oracle {

using canon9d::Box9D;
using canon9d::Matrix3;
using canon9d::Points;
using canon9d::Vector3;

inline double quaternion_angle(const Matrix3& a, const Matrix3& b) {
  const Eigen::Quaterniond qa(a), qb(b);
  const double d = std::min(1.0, std::abs(qa.coeffs().dot(qb.coeffs())));
  return 2.0 * std::acos(d);
}

/// Index of the nearest column of `set` to `q`; lowest index among ties.
inline Eigen::Index brute_nearest(const Points& set, const Vector3& q) {
  Eigen::Index best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < set.cols(); ++j) {
    const double d = (set.col(j) - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

inline double brute_chamfer(const Points& a, const Points& b) {
  double ab = 0.0, ba = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) ab += (a.col(i) - b.col(brute_nearest(b, a.col(i)))).norm();
  for (Eigen::Index j = 0; j < b.cols(); ++j) ba += (b.col(j) - a.col(brute_nearest(a, b.col(j)))).norm();
  return ab / double(a.cols()) + ba / double(b.cols());
}

/// Per featured source vertex: argmin over featured target vertices of the sum
/// over source observations of the distance to the closest target observation.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> brute_feature_nn(const canon9d::FeaturedSurface& s,
                                                                           const canon9d::FeaturedSurface& t) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  for (Eigen::Index i = 0; i < s.vertex_count(); ++i) {
    if (s.feature_count(i) == 0) continue;
    Eigen::Index best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < t.vertex_count(); ++j) {
      if (t.feature_count(j) == 0) continue;
      double cost = 0.0;
      for (auto a = s.offsets[i]; a < s.offsets[i + 1]; ++a) {
        double m = std::numeric_limits<double>::infinity();
        for (auto b = t.offsets[j]; b < t.offsets[j + 1]; ++b) {
          m = std::min(m, (s.features.col(a).cast<double>() - t.features.col(b).cast<double>()).norm());
        }
        cost += m;
      }
      if (cost < best_cost) {
        best_cost = cost;
        best = j;
      }
    }
    out.emplace_back(i, best);
  }
  return out;
}

inline std::string brute_medoid(const std::vector<canon9d::ObjectEmbedding>& e) {
  const std::size_t n = e.size();
  if (n == 1) return e[0].object_id;
  std::vector<double> mean(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double c = e[i].vector.dot(e[j].vector) / (e[i].vector.norm() * e[j].vector.norm());
      mean[i] += (1.0 - c) / double(n - 1);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (mean[i] < mean[best] - 1e-12 || (std::abs(mean[i] - mean[best]) <= 1e-12 && e[i].object_id < e[best].object_id))
      best = i;
  }
  return e[best].object_id;
}

inline bool inside(const Box9D& box, const Vector3& p) {
  const Vector3 local = box.rotation.transpose() * (p - box.translation);
  return (local.array().abs() <= 0.5 * box.extents.array()).all();
}

/// Monte-Carlo IoU: uniform samples in `a`, counted inside `b`.
inline double monte_carlo_iou(const Box9D& a, const Box9D& b, long samples, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  long hits = 0;
  for (long k = 0; k < samples; ++k) {
    const Vector3 local(u(rng) * a.extents.x(), u(rng) * a.extents.y(), u(rng) * a.extents.z());
    hits += inside(b, a.rotation * local + a.translation);
  }
  const double va = a.extents.prod(), vb = b.extents.prod();
  const double inter = va * double(hits) / double(samples);
  return inter / (va + vb - inter);
}

/// P(angle(R, I) < theta) for R drawn from the Haar measure on SO(3).
inline double haar_cap(double theta) { return (theta - std::sin(theta)) / canon9d::kPi; }

/// Transformed points computed coordinate by coordinate.
inline Vector3 apply_scalar(const canon9d::Sim3& t, const Vector3& p) {
  Vector3 out;
  for (int r = 0; r < 3; ++r) {
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) acc += t.rotation(r, c) * p(c);
    out(r) = t.scale * acc + t.translation(r);
  }
  return out;
}

/// Nearest-neighbour assignments used by the geometric term at `t`.
inline std::vector<Eigen::Index> chamfer_assignments(const Points& src, const Points& tgt, const canon9d::Sim3& t) {
  const Points moved = t * src;
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < moved.cols(); ++i) out.push_back(brute_nearest(tgt, moved.col(i)));
  for (Eigen::Index j = 0; j < tgt.cols(); ++j) out.push_back(brute_nearest(moved, tgt.col(j)));
  return out;
}

}  // namespace oracle
