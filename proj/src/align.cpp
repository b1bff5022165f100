#include "canon9d/align.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <Eigen/Eigenvalues>

namespace canon9d {

void check_valid(const AlignConfig& c) {
  auto fail = [](const char* what) { throw Error(Errc::InvalidArgument, std::string("align config: ") + what); };
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (c.ransac_iters < 1) fail("ransac_iters must be positive");
  if (!(c.inlier_threshold > 0.0)) fail("inlier_threshold must be positive");
  if (c.refine_max_iters < 0) fail("refine_max_iters must be non-negative");
  if (!(c.refine_tol > 0.0)) fail("refine_tol must be positive");
  if (!(c.cycle_tau > 0.0)) fail("cycle_tau must be positive");
  if (!(c.min_scale > 0.0 && c.min_scale <= c.max_scale)) fail("scale bounds");
  if (c.max_vertices < 4) fail("max_vertices must be at least 4");
}

// ---------------------------------------------------------------------------
// Feature-space correspondences

namespace {

std::vector<Eigen::Index> featured_vertices(const FeaturedSurface& s) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < s.vertex_count(); ++i)
    if (s.feature_count(i) > 0) out.push_back(i);
  return out;
}

}  // namespace

FeatureMatch feature_nn(const FeaturedSurface& source, const FeaturedSurface& target) {
  if (source.feature_dim != target.feature_dim) {
    throw Error(Errc::DimensionMismatch, "source and target feature dimensions differ");
  }
  const auto candidates = featured_vertices(target);
  if (candidates.empty()) throw Error(Errc::NoFeatures, "target surface has no featured vertices");

  FeatureMatch out;
  const Eigen::MatrixXd target_features = target.features.cast<double>();
  const Eigen::RowVectorXd target_sq = target_features.colwise().squaredNorm();
  const Eigen::Index n_candidates = static_cast<Eigen::Index>(candidates.size());

  // Blocks of source vertices keep the similarity matrix at a few MB.
  constexpr Eigen::Index kBlockFeatures = 256;
  Eigen::VectorXd cost(n_candidates);
  Eigen::Index i = 0;
  const Eigen::Index n_source = source.vertex_count();
  while (i < n_source) {
    Eigen::Index end = i;
    while (end < n_source && (end == i || source.offsets[end + 1] - source.offsets[i] <= kBlockFeatures)) ++end;
    const Eigen::Index col0 = source.offsets[i];
    const Eigen::Index ncols = source.offsets[end] - col0;
    const Eigen::MatrixXd block = source.features.middleCols(col0, ncols).cast<double>();
    const Eigen::MatrixXd dots = block.transpose() * target_features;
    const Eigen::VectorXd block_sq = block.colwise().squaredNorm().transpose();

    for (Eigen::Index v = i; v < end; ++v) {
      if (source.feature_count(v) == 0) {
        out.excluded.push_back(v);
        continue;
      }
      cost.setZero();
      for (Eigen::Index l = source.offsets[v] - col0; l < source.offsets[v + 1] - col0; ++l) {
        for (Eigen::Index c = 0; c < n_candidates; ++c) {
          const Eigen::Index j = candidates[static_cast<std::size_t>(c)];
          double best = std::numeric_limits<double>::infinity();
          for (Eigen::Index k = target.offsets[j]; k < target.offsets[j + 1]; ++k) {
            const double sq = block_sq(l) + target_sq(k) - 2.0 * dots(l, k);
            best = std::min(best, std::sqrt(std::max(0.0, sq)));
          }
          cost(c) += best;
        }
      }
      Eigen::Index arg = 0;
      cost.minCoeff(&arg);
      out.correspondences.push_back({v, candidates[static_cast<std::size_t>(arg)], 1.0});
    }
    i = end;
  }
  if (out.correspondences.empty()) throw Error(Errc::NoFeatures, "source surface has no featured vertices");
  return out;
}

std::vector<double> cycle_weights(const std::vector<Correspondence>& forward,
                                  const std::vector<Correspondence>& backward, const Points& source_points,
                                  double tau) {
  Eigen::Index max_target = -1;
  for (const auto& c : backward) max_target = std::max(max_target, c.source_index);
  std::vector<Eigen::Index> back(static_cast<std::size_t>(max_target + 1), -1);
  for (const auto& c : backward) back[static_cast<std::size_t>(c.source_index)] = c.target_index;

  const double bandwidth = tau * bounding_sphere(source_points).radius;
  std::vector<double> weights;
  weights.reserve(forward.size());
  for (const auto& c : forward) {
    const Eigen::Index j = c.target_index;
    const Eigen::Index r = j < static_cast<Eigen::Index>(back.size()) ? back[static_cast<std::size_t>(j)] : -1;
    if (r < 0) {
      weights.push_back(0.0);
      continue;
    }
    const double d = (source_points.col(c.source_index) - source_points.col(r)).norm();
    if (bandwidth > 0.0) {
      weights.push_back(std::exp(-d / bandwidth));
    } else {
      weights.push_back(d == 0.0 ? 1.0 : 0.0);
    }
  }
  return weights;
}

// ---------------------------------------------------------------------------
// Distances

double dist_geo(const Points& a, const Points& b) {
  if (a.cols() == 0 || b.cols() == 0) throw Error(Errc::InvalidArgument, "dist_geo of an empty point set");
  const KdTree3 tree_a(a), tree_b(b);
  double ab = 0.0, ba = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) ab += std::sqrt(tree_b.nearest(a.col(i)).squared_distance);
  for (Eigen::Index j = 0; j < b.cols(); ++j) ba += std::sqrt(tree_a.nearest(b.col(j)).squared_distance);
  return ab / double(a.cols()) + ba / double(b.cols());
}

namespace {

double weighted_mean_distance(const Points& from, const Points& to, const std::vector<Correspondence>& corr,
                              const char* side) {
  double wsum = 0.0, acc = 0.0;
  for (const auto& c : corr) {
    wsum += c.weight;
    acc += c.weight * (from.col(c.source_index) - to.col(c.target_index)).norm();
  }
  if (wsum < 1e-12) throw Error(Errc::DegenerateWeights, std::string(side) + " correspondence weights vanish");
  return acc / wsum;
}

}  // namespace

double dist_app(const Points& source, const Points& target, const std::vector<Correspondence>& forward,
                const std::vector<Correspondence>& backward) {
  return weighted_mean_distance(source, target, forward, "forward") +
         weighted_mean_distance(target, source, backward, "backward");
}

// ---------------------------------------------------------------------------
// Closed-form similarity

Sim3 estimate_similarity(const Points& src, const Points& dst, const Eigen::VectorXd& weights) {
  if (src.cols() != dst.cols() || src.cols() != weights.size()) {
    throw Error(Errc::DimensionMismatch, "point sets and weights differ in size");
  }
  const double wsum = weights.sum();
  if (src.cols() < 3 || !(wsum > 0.0)) throw Error(Errc::DegenerateSample, "need three weighted points");
  const Eigen::VectorXd w = weights / wsum;
  const Vector3 mu_src = src * w;
  const Vector3 mu_dst = dst * w;
  const Points xs = src.colwise() - mu_src;
  const Points ys = dst.colwise() - mu_dst;
  const Matrix3 cxx = xs * w.asDiagonal() * xs.transpose();
  const Matrix3 cov = ys * w.asDiagonal() * xs.transpose();

  // Rank >= 2 is required; three points always leave the third singular value at zero.
  const Vector3 spread = Eigen::SelfAdjointEigenSolver<Matrix3>(cxx, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .cwiseMax(0.0)
                             .cwiseSqrt();  // ascending
  if (!(spread(2) > 0.0) || spread(1) < 1e-9 * spread(2)) {
    throw Error(Errc::DegenerateSample, "collinear or coincident sample");
  }

  Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector3 s = Vector3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
  Sim3 t;
  t.rotation = nearest_rotation(svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose());
  const double var_src = cxx.trace();
  t.scale = svd.singularValues().dot(s) / var_src;
  t.translation = mu_dst - t.scale * (t.rotation * mu_src);
  if (!(t.scale > 0.0) || !t.translation.allFinite()) throw Error(Errc::DegenerateSample, "non-positive scale");
  return t;
}

// ---------------------------------------------------------------------------
// Downsampling

FeaturedSurface downsample(const FeaturedSurface& surface, int max_vertices) {
  const Eigen::Index n = surface.vertex_count();
  if (n <= max_vertices) return surface;
  const Points pts = surface.points();
  const BoundingSphere sphere = bounding_sphere(pts);
  const Vector3 lo = pts.rowwise().minCoeff();
  double edge = sphere.radius > 0.0 ? sphere.radius / 32.0 : 1.0;

  std::map<std::array<std::int64_t, 3>, std::vector<Eigen::Index>> voxels;
  for (;;) {
    voxels.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector3 cell = ((pts.col(i) - lo) / edge).array().floor();
      voxels[{static_cast<std::int64_t>(cell.x()), static_cast<std::int64_t>(cell.y()),
              static_cast<std::int64_t>(cell.z())}]
          .push_back(i);
    }
    if (voxels.size() <= static_cast<std::size_t>(max_vertices)) break;
    edge *= 1.25;
  }

  std::vector<Eigen::Index> keep;
  keep.reserve(voxels.size());
  for (const auto& [key, members] : voxels) {
    Vector3 centroid = Vector3::Zero();
    for (auto i : members) centroid += pts.col(i);
    centroid /= double(members.size());
    Eigen::Index best = members.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (auto i : members) {
      const double d = (pts.col(i) - centroid).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    keep.push_back(best);
  }
  std::sort(keep.begin(), keep.end());

  FeaturedSurface out;
  out.feature_dim = surface.feature_dim;
  out.vertices.resize(3, static_cast<Eigen::Index>(keep.size()));
  std::uint32_t total = 0;
  for (auto i : keep) total += surface.feature_count(i);
  out.features.resize(surface.feature_dim, total);
  out.offsets.assign(1, 0);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto i = keep[k];
    out.vertices.col(static_cast<Eigen::Index>(k)) = surface.vertices.col(i);
    const auto count = surface.feature_count(i);
    if (count > 0) out.features.middleCols(out.offsets.back(), count) = surface.vertex_features(i);
    out.offsets.push_back(out.offsets.back() + count);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objective

AlignmentProblem::AlignmentProblem(const FeaturedSurface& source, const FeaturedSurface& target,
                                   const AlignConfig& config)
    : AlignmentProblem(downsample(source, config.max_vertices), downsample(target, config.max_vertices), config,
                       Prepared{}) {}

AlignmentProblem::AlignmentProblem(const FeaturedSurface& src, const FeaturedSurface& tgt, const AlignConfig& config,
                                   Prepared)
    : config_(config), source_tree_(src.points()), target_tree_(tgt.points()) {
  check_valid(config);
  if (src.vertex_count() < 4 || tgt.vertex_count() < 4) {
    throw Error(Errc::TooFewPoints, "alignment needs at least 4 vertices per surface");
  }
  source_radius_ = bounding_sphere(source_tree_.points()).radius;
  target_radius_ = bounding_sphere(target_tree_.points()).radius;
  if (!(target_radius_ > 0.0)) throw Error(Errc::InvalidArgument, "target surface has zero extent");

  forward_ = feature_nn(src, tgt).correspondences;
  backward_ = feature_nn(tgt, src).correspondences;
  const auto wf = cycle_weights(forward_, backward_, source_tree_.points(), config.cycle_tau);
  const auto wb = cycle_weights(backward_, forward_, target_tree_.points(), config.cycle_tau);
  for (std::size_t k = 0; k < forward_.size(); ++k) forward_[k].weight = wf[k];
  for (std::size_t k = 0; k < backward_.size(); ++k) backward_[k].weight = wb[k];
}

AlignmentProblem::Evaluation AlignmentProblem::evaluate(const Sim3& t) const {
  const Points& src = source_tree_.points();
  const Points& tgt = target_tree_.points();
  const Points moved = t * src;
  const Vector3 center = moved.rowwise().mean();
  const double rho = target_radius_;
  const double alpha = config_.alpha;
  const Sim3 back = inverse(t);

  Evaluation e;
  // Adds coeff * |p - b| and its gradient w.r.t. the retract increment.
  auto term = [&](const Vector3& p, const Vector3& b, double coeff) {
    const Vector3 r = p - b;
    const double n = r.norm();
    if (n > 0.0) {
      const Vector3 u = r / n;
      const Vector3 q = p - center;
      e.gradient.head<3>() += coeff * q.cross(u);
      e.gradient.segment<3>(3) += (coeff * rho) * u;
      e.gradient(6) += coeff * u.dot(q);
    }
    return n;
  };

  const double ns = double(src.cols()), nt = double(tgt.cols());
  double geo_st = 0.0, geo_ts = 0.0;
  if (alpha < 1.0) {
    const double c_st = (1.0 - alpha) / (rho * ns);
    const double c_ts = (1.0 - alpha) / (rho * nt);
    for (Eigen::Index i = 0; i < src.cols(); ++i) {
      const auto hit = target_tree_.nearest(moved.col(i));
      geo_st += term(moved.col(i), tgt.col(hit.index), c_st);
    }
    for (Eigen::Index j = 0; j < tgt.cols(); ++j) {
      // Uniform scale preserves nearest neighbours, so query the fixed source tree.
      const auto hit = source_tree_.nearest(back * tgt.col(j));
      geo_ts += term(moved.col(hit.index), tgt.col(j), c_ts);
    }
    e.geo = geo_st / ns + geo_ts / nt;
  } else {
    e.geo = dist_geo(moved, tgt);
  }

  double wf = 0.0, wb = 0.0;
  for (const auto& c : forward_) wf += c.weight;
  for (const auto& c : backward_) wb += c.weight;
  if (wf >= 1e-12 && wb >= 1e-12) {
    double app_f = 0.0, app_b = 0.0;
    const double cf = alpha / (rho * wf), cb = alpha / (rho * wb);
    for (const auto& c : forward_) app_f += c.weight * term(moved.col(c.source_index), tgt.col(c.target_index), cf * c.weight);
    for (const auto& c : backward_) app_b += c.weight * term(moved.col(c.target_index), tgt.col(c.source_index), cb * c.weight);
    e.app = app_f / wf + app_b / wb;
  } else if (alpha > 0.0) {
    throw Error(Errc::DegenerateWeights, "cycle-consistency weights vanish");
  }
  e.value = ((1.0 - alpha) * e.geo + alpha * e.app) / rho;
  if (alpha == 0.0) e.value = e.geo / rho;
  if (alpha == 1.0) e.value = e.app / rho;
  return e;
}

Sim3 AlignmentProblem::retract(const Sim3& t, const Increment& delta) const {
  const Vector3 center = t * source_tree_.points().rowwise().mean();
  const Matrix3 rot = exp_so3<double>(delta.head<3>());
  const double growth = std::exp(delta(6));
  Sim3 out;
  out.rotation = nearest_rotation(rot * t.rotation);
  out.scale = growth * t.scale;
  out.translation = growth * (rot * (t.translation - center)) + center + target_radius_ * delta.segment<3>(3);
  return out;
}

double total_distance(const FeaturedSurface& source, const FeaturedSurface& target, const Sim3& t,
                      const AlignConfig& config) {
  check_valid(t, "alignment transform");
  return AlignmentProblem(source, target, config).total_distance(t);
}

// ---------------------------------------------------------------------------
// RANSAC

RansacResult ransac_init(const Points& source, const Points& target, const std::vector<Correspondence>& corr,
                         const AlignConfig& config, double radius, std::uint64_t seed) {
  std::vector<double> weights;
  weights.reserve(corr.size());
  std::size_t positive = 0;
  for (const auto& c : corr) {
    weights.push_back(std::max(0.0, c.weight));
    positive += c.weight > 0.0;
  }
  if (positive < 3) throw Error(Errc::TooFewCorrespondences, "need three correspondences with positive weight");

  const auto n = static_cast<Eigen::Index>(corr.size());
  Points src(3, n), dst(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    src.col(k) = source.col(corr[static_cast<std::size_t>(k)].source_index);
    dst.col(k) = target.col(corr[static_cast<std::size_t>(k)].target_index);
  }
  const double threshold = config.inlier_threshold * radius;

  std::mt19937_64 rng(seed);
  std::discrete_distribution<Eigen::Index> draw(weights.begin(), weights.end());
  RansacResult best;
  bool found = false;
  Points s3(3, 3), d3(3, 3);
  const Eigen::VectorXd ones3 = Eigen::VectorXd::Ones(3);
  for (int it = 0; it < config.ransac_iters; ++it) {
    std::array<Eigen::Index, 3> idx{};
    int filled = 0;
    for (int attempt = 0; filled < 3 && attempt < 64; ++attempt) {
      const Eigen::Index k = draw(rng);
      if (std::find(idx.begin(), idx.begin() + filled, k) == idx.begin() + filled) idx[filled++] = k;
    }
    if (filled < 3) {
      ++best.degenerate_samples;
      continue;
    }
    for (int c = 0; c < 3; ++c) {
      s3.col(c) = src.col(idx[c]);
      d3.col(c) = dst.col(idx[c]);
    }
    Sim3 hypothesis;
    try {
      hypothesis = estimate_similarity(s3, d3, ones3);
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateSample) throw;
      ++best.degenerate_samples;
      continue;
    }
    if (hypothesis.scale < config.min_scale || hypothesis.scale > config.max_scale) continue;
    const Eigen::RowVectorXd residuals = ((hypothesis * src) - dst).colwise().norm();
    const auto inliers = static_cast<std::size_t>((residuals.array() < threshold).count());
    if (!found || inliers > best.inliers) {
      best.transform = hypothesis;
      best.inliers = inliers;
      found = true;
    }
  }
  if (!found) throw Error(Errc::DegenerateSample, "no non-degenerate RANSAC hypothesis");

  const Eigen::RowVectorXd residuals = ((best.transform * src) - dst).colwise().norm();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < n; ++k)
    if (residuals(k) < threshold && weights[static_cast<std::size_t>(k)] > 0.0) keep.push_back(k);
  if (keep.size() >= 3) {
    Points si(3, static_cast<Eigen::Index>(keep.size())), di(3, static_cast<Eigen::Index>(keep.size()));
    Eigen::VectorXd wi(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      si.col(static_cast<Eigen::Index>(k)) = src.col(keep[k]);
      di.col(static_cast<Eigen::Index>(k)) = dst.col(keep[k]);
      wi(static_cast<Eigen::Index>(k)) = weights[static_cast<std::size_t>(keep[k])];
    }
    try {
      best.transform = estimate_similarity(si, di, wi);
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateSample) throw;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Refinement

RefineResult refine(const Sim3& t0, const AlignmentProblem& problem) {
  check_valid(t0, "initial transform");
  const AlignConfig& cfg = problem.config();
  auto clamp_scale = [&](Sim3 t) {
    t.scale = std::clamp(t.scale, cfg.min_scale, cfg.max_scale);
    return t;
  };

  RefineResult result;
  result.transform = t0;
  auto current = problem.evaluate(t0);
  if (!std::isfinite(current.value) || !current.gradient.allFinite()) {
    throw Error(Errc::NonFiniteObjective, "objective is not finite at the initial transform");
  }
  result.initial_distance = current.value;

  double step = cfg.initial_step;
  int stalled = 0;
  for (int it = 0; it < cfg.refine_max_iters; ++it) {
    const double gnorm2 = current.gradient.squaredNorm();
    if (current.value == 0.0 || gnorm2 == 0.0) break;
    bool accepted = false;
    double eta = step;
    for (int b = 0; b <= cfg.max_backtracks; ++b, eta *= cfg.backtrack_factor) {
      const Sim3 trial = clamp_scale(problem.retract(result.transform, -eta * current.gradient));
      auto next = problem.evaluate(trial);
      if (!std::isfinite(next.value)) throw Error(Errc::NonFiniteObjective, "objective diverged");
      if (next.value <= current.value - 1e-4 * eta * gnorm2) {
        const double decrease = (current.value - next.value) / current.value;
        stalled = decrease < cfg.refine_tol ? stalled + 1 : 0;
        result.transform = trial;
        current = std::move(next);
        accepted = true;
        break;
      }
    }
    ++result.iterations;
    if (!accepted || stalled >= cfg.stall_iterations) break;
    step = std::min(cfg.max_step, 2.0 * eta);
  }
  result.distance = current.value;
  return result;
}

// ---------------------------------------------------------------------------

AlignResult align(const FeaturedSurface& instance, const FeaturedSurface& reference, const AlignConfig& config,
                  std::uint64_t seed) {
  const AlignmentProblem problem(instance, reference, config);
  if (problem.forward().size() < 3) throw Error(Errc::TooFewCorrespondences, "fewer than three featured vertices");
  const RansacResult init = ransac_init(problem.source_points(), problem.target_points(), problem.forward(), config,
                                        problem.target_radius(), seed);
  Sim3 start = init.transform;
  start.scale = std::clamp(start.scale, config.min_scale, config.max_scale);
  const RefineResult refined = refine(start, problem);

  AlignResult out;
  out.transform = refined.transform;
  out.score = refined.distance;
  out.ransac_inliers = init.inliers;
  out.correspondences = problem.forward().size();
  out.refine_iterations = refined.iterations;
  return out;
}

}  // namespace canon9d
