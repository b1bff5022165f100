#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "canon9d/core.hpp"
#include "canon9d/kdtree.hpp"

namespace canon9d {

/// Tuning for instance-to-reference alignment. Distances that are "fractions of
/// the radius" refer to the bounding-sphere radius of the surface they are
/// measured on.
struct AlignConfig {
  double alpha = 0.2;             // appearance weight in [0, 1]
  int ransac_iters = 2048;
  double inlier_threshold = 0.05;  // fraction of target radius
  int refine_max_iters = 500;
  double refine_tol = 1e-6;
  double cycle_tau = 0.1;  // fraction of radius

  double initial_step = 1e-2;
  double backtrack_factor = 0.5;
  int max_backtracks = 20;
  int stall_iterations = 10;
  double max_step = 1.0;
  double min_scale = 0.1;
  double max_scale = 10.0;
  int max_vertices = 4096;
};

void check_valid(const AlignConfig& config);

struct Correspondence {
  Eigen::Index source_index = 0;
  Eigen::Index target_index = 0;
  double weight = 1.0;
};

struct FeatureMatch {
  std::vector<Correspondence> correspondences;  // one per featured source vertex
  std::vector<Eigen::Index> excluded;           // source vertices without features
};

/// For each featured source vertex, the target vertex minimising the sum over the
/// source observations of the distance to the nearest observation at that target
/// vertex. Unfeatured target vertices are never candidates. Throws NoFeatures.
FeatureMatch feature_nn(const FeaturedSurface& source, const FeaturedSurface& target);

/// exp(-|v_i - v_r(i)| / (tau * rho)) where r(i) is the round trip through
/// `forward` then `backward` and rho is the radius of `source_points`.
std::vector<double> cycle_weights(const std::vector<Correspondence>& forward,
                                  const std::vector<Correspondence>& backward, const Points& source_points,
                                  double tau);

/// Symmetric Chamfer distance with uniform weights (sum of both directed means).
double dist_geo(const Points& a, const Points& b);

/// Weighted mean of |s_i - t_fwd(i)| plus weighted mean of |t_j - s_bwd(j)|, using
/// the `weight` field of each correspondence. Throws DegenerateWeights.
double dist_app(const Points& source, const Points& target, const std::vector<Correspondence>& forward,
                const std::vector<Correspondence>& backward);

/// Weighted least-squares similarity mapping src columns onto dst columns.
/// Throws DegenerateSample when the weighted source points are (nearly) collinear.
Sim3 estimate_similarity(const Points& src, const Points& dst, const Eigen::VectorXd& weights);

/// Voxel-grid subsampling to at most `max_vertices` vertices; each occupied voxel
/// keeps the vertex closest to the voxel centroid together with its features.
FeaturedSurface downsample(const FeaturedSurface& surface, int max_vertices);

using Increment = Eigen::Matrix<double, 7, 1>;  // (rotation axis-angle, translation / radius, log scale)

/// Cached correspondences and spatial indices for one source/target pair. The
/// objective is (1 - alpha) * dist_geo + alpha * dist_app, both divided by the
/// target radius.
class AlignmentProblem {
 public:
  AlignmentProblem(const FeaturedSurface& source, const FeaturedSurface& target, const AlignConfig& config);

  struct Evaluation {
    double value = 0.0;
    double geo = 0.0;  // raw (unnormalized) terms
    double app = 0.0;
    Increment gradient = Increment::Zero();
  };

  /// Objective at `t` and its gradient w.r.t. the increment of retract(t, .) at zero.
  Evaluation evaluate(const Sim3& t) const;
  double total_distance(const Sim3& t) const { return evaluate(t).value; }

  /// Applies an increment: rotation and scale act about the centroid of the
  /// transformed source, translation is measured in units of the target radius.
  Sim3 retract(const Sim3& t, const Increment& delta) const;

  const Points& source_points() const { return source_tree_.points(); }
  const Points& target_points() const { return target_tree_.points(); }
  const std::vector<Correspondence>& forward() const { return forward_; }
  const std::vector<Correspondence>& backward() const { return backward_; }
  double source_radius() const { return source_radius_; }
  double target_radius() const { return target_radius_; }
  const AlignConfig& config() const { return config_; }

 private:
  struct Prepared {};
  AlignmentProblem(const FeaturedSurface& src, const FeaturedSurface& tgt, const AlignConfig& config, Prepared);

  AlignConfig config_;
  KdTree3 source_tree_;
  KdTree3 target_tree_;
  std::vector<Correspondence> forward_;   // source -> target, cycle-weighted
  std::vector<Correspondence> backward_;  // target -> source, cycle-weighted
  double source_radius_ = 0.0;
  double target_radius_ = 0.0;
};

/// Convenience wrapper that builds the problem for a single evaluation.
double total_distance(const FeaturedSurface& source, const FeaturedSurface& target, const Sim3& t,
                      const AlignConfig& config);

struct RansacResult {
  Sim3 transform;
  std::size_t inliers = 0;
  int degenerate_samples = 0;
};

/// Weighted-sampling RANSAC over 3-point similarity hypotheses, refit on the
/// inliers of the best hypothesis. `radius` scales the inlier threshold.
RansacResult ransac_init(const Points& source, const Points& target, const std::vector<Correspondence>& corr,
                         const AlignConfig& config, double radius, std::uint64_t seed);

struct RefineResult {
  Sim3 transform;
  double distance = 0.0;
  double initial_distance = 0.0;
  int iterations = 0;
};

/// Backtracking gradient descent on the alignment objective starting at t0.
RefineResult refine(const Sim3& t0, const AlignmentProblem& problem);

struct AlignResult {
  Sim3 transform;  // instance frame -> reference frame
  double score = 0.0;
  std::size_t ransac_inliers = 0;
  std::size_t correspondences = 0;
  int refine_iterations = 0;
};

/// feature_nn both ways -> cycle weights -> RANSAC -> refinement.
AlignResult align(const FeaturedSurface& instance, const FeaturedSurface& reference, const AlignConfig& config,
                  std::uint64_t seed);

}  // namespace canon9d
