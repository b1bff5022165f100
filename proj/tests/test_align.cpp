#include <doctest.h>

#include <Eigen/Geometry>

#include "canon9d/align.hpp"
#include "canon9d/error.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace canon9d;

namespace {

FeaturedSurface transformed(const FeaturedSurface& s, const Sim3& t) {
  FeaturedSurface out = s;
  out.vertices = (t * s.points()).cast<float>();
  return out;
}

synthetic::Options noiseless(int points) {
  synthetic::Options o;
  o.points = points;
  o.noise = 0.0;
  o.dropout_max = 0.0;
  o.feature_noise = 0.0;
  o.max_observations = 1;
  return o;
}

FeaturedSurface canonical_surface(const synthetic::BaseShape& base, const synthetic::Options& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return synthetic::make_instance(base, 0, "ref", o, rng, Sim3::Identity()).surface;
}

std::vector<Correspondence> identity_map(Eigen::Index n) {
  std::vector<Correspondence> c;
  for (Eigen::Index i = 0; i < n; ++i) c.push_back({i, i, 1.0});
  return c;
}

}  // namespace

TEST_SUITE("align") {

TEST_CASE("feature_nn self match") {
  std::mt19937_64 rng(31);
  const FeaturedSurface s = testing::random_surface(40, 8, 2, rng, false);
  const FeatureMatch m = feature_nn(s, s);
  REQUIRE(m.correspondences.size() == 40);
  for (const auto& c : m.correspondences) CHECK(c.source_index == c.target_index);
}

TEST_CASE("feature_nn hand-set toy") {
  FeaturedSurface src, tgt;
  src.feature_dim = tgt.feature_dim = 2;
  Eigen::MatrixXf a(2, 2), b(2, 1), c(2, 1);
  a << 1, 0, 0, 1;
  b << 0.6f, 0.8f;
  c << -1, 0;
  src.add_vertex({0, 0, 0}, a);
  src.add_vertex({1, 0, 0}, c);
  src.add_vertex({2, 0, 0}, Eigen::MatrixXf(2, 0));
  tgt.add_vertex({0, 0, 0}, c);
  tgt.add_vertex({0, 1, 0}, b);
  tgt.add_vertex({0, 2, 0}, a.col(1));
  const FeatureMatch m = feature_nn(src, tgt);
  const auto expect = oracle::brute_feature_nn(src, tgt);
  REQUIRE(m.correspondences.size() == expect.size());
  for (std::size_t k = 0; k < expect.size(); ++k) {
    CHECK(m.correspondences[k].source_index == expect[k].first);
    CHECK(m.correspondences[k].target_index == expect[k].second);
  }
  REQUIRE(m.excluded.size() == 1);
  CHECK(m.excluded[0] == 2);
}

TEST_CASE("feature_nn matches exhaustive search") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 1 + int(rng() % 6);
    const FeaturedSurface s = testing::random_surface(1 + int(rng() % 50), dim, 3, rng);
    const FeaturedSurface t = testing::random_surface(1 + int(rng() % 50), dim, 3, rng);
    const auto expect = oracle::brute_feature_nn(s, t);
    bool any_target = false;
    for (Eigen::Index j = 0; j < t.vertex_count(); ++j) any_target |= t.feature_count(j) > 0;
    if (expect.empty() || !any_target) {
      CHECK_THROWS_AS(feature_nn(s, t), Error);
      continue;
    }
    const auto m = feature_nn(s, t);
    REQUIRE(m.correspondences.size() == expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) {
      CHECK(m.correspondences[k].source_index == expect[k].first);
      CHECK(m.correspondences[k].target_index == expect[k].second);
    }
  }
}

TEST_CASE("feature_nn never rejects") {
  FeaturedSurface src, tgt;
  src.feature_dim = tgt.feature_dim = 3;
  src.add_vertex({0, 0, 0}, Eigen::Vector3f(0, 0, 1));
  tgt.add_vertex({0, 0, 0}, Eigen::Vector3f(1, 0, 0));
  tgt.add_vertex({1, 0, 0}, Eigen::Vector3f(0, 1, 0));
  const auto m = feature_nn(src, tgt);
  REQUIRE(m.correspondences.size() == 1);
  CHECK(m.correspondences[0].target_index == 0);
}

TEST_CASE("cycle weights") {
  std::mt19937_64 rng(33);
  const Points p = testing::random_points(20, rng);
  const auto id = identity_map(20);
  for (double w : cycle_weights(id, id, p, 0.1)) CHECK(w == 1.0);

  // Source 0 -> target 0 -> source 1, with |p0 - p1| = tau * rho.
  Points line(3, 3);
  line << -1, 1, 0, 0, 0, 0, 0, 0, 0;  // radius 2/3 about the centroid (0, 0, 0)
  const double rho = bounding_sphere(line).radius;
  const double tau = 2.0 / rho;  // so tau * rho = |p0 - p1| = 2
  std::vector<Correspondence> fwd{{0, 0, 1}}, bwd{{0, 1, 1}};
  CHECK(cycle_weights(fwd, bwd, line, tau)[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  for (int trial = 0; trial < 20; ++trial) {
    const FeaturedSurface s = testing::random_surface(30, 4, 2, rng, false);
    const FeaturedSurface t = testing::random_surface(25, 4, 2, rng, false);
    const auto f = feature_nn(s, t).correspondences;
    const auto b = feature_nn(t, s).correspondences;
    const auto w = cycle_weights(f, b, s.points(), 0.1);
    const double r = bounding_sphere(s.points()).radius;
    for (std::size_t k = 0; k < f.size(); ++k) {
      Eigen::Index back = -1;
      for (const auto& c : b)
        if (c.source_index == f[k].target_index) back = c.target_index;
      const double d = (s.points().col(f[k].source_index) - s.points().col(back)).norm();
      CHECK(w[k] == doctest::Approx(std::exp(-d / (0.1 * r))).epsilon(1e-12));
    }
  }
}

TEST_CASE("dist_geo") {
  std::mt19937_64 rng(34);
  const Points a = testing::random_points(30, rng);
  CHECK(dist_geo(a, a) == 0.0);
  Points p(3, 1), q(3, 1);
  p << 0, 0, 0;
  q << 0, 3, 4;
  CHECK(dist_geo(p, q) == 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Points x = testing::random_points(1 + int(rng() % 50), rng);
    const Points y = testing::random_points(1 + int(rng() % 50), rng);
    CHECK(dist_geo(x, y) == oracle::brute_chamfer(x, y));
  }
}

TEST_CASE("dist_app") {
  std::mt19937_64 rng(35);
  const Points a = testing::random_points(30, rng);
  const auto id = identity_map(30);
  CHECK(dist_app(a, a, id, id) == 0.0);
  const Vector3 t(0.3, -0.2, 0.5);
  const Points b = a.colwise() + t;
  CHECK(dist_app(a, b, id, id) == doctest::Approx(2.0 * t.norm()).epsilon(1e-12));

  const Points c = testing::random_points(20, rng);
  std::vector<Correspondence> f, bk;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < 30; ++i) f.push_back({i, Eigen::Index(rng() % 20), u(rng)});
  for (Eigen::Index j = 0; j < 20; ++j) bk.push_back({j, Eigen::Index(rng() % 30), u(rng)});
  double num_f = 0, den_f = 0, num_b = 0, den_b = 0;
  for (const auto& k : f) {
    num_f += k.weight * (a.col(k.source_index) - c.col(k.target_index)).norm();
    den_f += k.weight;
  }
  for (const auto& k : bk) {
    num_b += k.weight * (c.col(k.source_index) - a.col(k.target_index)).norm();
    den_b += k.weight;
  }
  CHECK(dist_app(a, c, f, bk) == doctest::Approx(num_f / den_f + num_b / den_b).epsilon(1e-12));
  for (auto& k : f) k.weight = 0.0;
  CHECK_THROWS_AS(dist_app(a, c, f, bk), Error);
}

TEST_CASE("blended objective endpoints") {
  std::mt19937_64 rng(36);
  synthetic::Options o = noiseless(400);
  o.feature_dim = 8;
  const auto base = synthetic::make_base(rng, o, "b");
  const FeaturedSurface ref = canonical_surface(base, o, 1);
  const FeaturedSurface inst = canonical_surface(base, o, 2);
  const Sim3 t = synthetic::random_similarity(rng, 0.9, 1.1, 0.1);
  for (double alpha : {0.0, 0.3, 1.0}) {
    AlignConfig cfg;
    cfg.alpha = alpha;
    const AlignmentProblem problem(inst, ref, cfg);
    CHECK(problem.total_distance(Sim3::Identity()) >= 0.0);
    const auto self = AlignmentProblem(ref, ref, cfg);
    CHECK(self.total_distance(Sim3::Identity()) == 0.0);
    const auto e = problem.evaluate(t);
    const double rho = problem.target_radius();
    const Points moved = t * problem.source_points();
    if (alpha == 0.0) {
      CHECK(e.value * rho == doctest::Approx(dist_geo(moved, problem.target_points())).epsilon(1e-12));
    }
    if (alpha == 1.0) {
      CHECK(e.value * rho ==
            doctest::Approx(dist_app(moved, problem.target_points(), problem.forward(), problem.backward()))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("estimate_similarity") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    const Sim3 t = synthetic::random_similarity(rng, 0.5, 2.0, 3.0);
    const Points src = testing::random_points(20, rng);
    const Points dst = t * src;
    const Sim3 est = estimate_similarity(src, dst, Eigen::VectorXd::Ones(20));
    CHECK(geodesic_distance(est.rotation, t.rotation) < 1e-6);
    CHECK(std::abs(est.scale / t.scale - 1.0) < 1e-9);
    CHECK((est.translation - t.translation).norm() < 1e-9);

    // Uniform weights agree with Eigen's umeyama on noisy data.
    const Points noisy = dst + 0.05 * testing::random_points(20, rng);
    const Eigen::Matrix4d u = Eigen::umeyama(src, noisy, true);
    const Sim3 mine = estimate_similarity(src, noisy, Eigen::VectorXd::Ones(20));
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = mine.scale * mine.rotation;
    m.topRightCorner<3, 1>() = mine.translation;
    CHECK((m - u).norm() < 1e-9);
  }

  Points line(3, 4);
  line << 0, 1, 2, 3, 0, 2, 4, 6, 0, 0, 0, 0;
  CHECK_THROWS_WITH_AS(estimate_similarity(line, line, Eigen::VectorXd::Ones(4)), doctest::Contains("DegenerateSample"),
                       Error);
}

TEST_CASE("weighted similarity ignores zero-weight points") {
  std::mt19937_64 rng(38);
  const Sim3 t = synthetic::random_similarity(rng, 0.5, 2.0, 1.0);
  const Points src = testing::random_points(12, rng);
  Points dst = t * src;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(12);
  for (int k = 8; k < 12; ++k) {
    dst.col(k) += Vector3(5, -3, 2);
    w(k) = 0.0;
  }
  const Sim3 est = estimate_similarity(src, dst, w);
  CHECK(geodesic_distance(est.rotation, t.rotation) < 1e-6);
}

TEST_CASE("ransac with outliers") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Sim3 t = synthetic::random_similarity(rng, 0.5, 2.0, 1.0);
    const Points src = testing::random_points(200, rng);
    const Points dst = t * src;
    std::vector<Correspondence> corr;
    for (Eigen::Index i = 0; i < 200; ++i) {
      const bool outlier = i % 10 >= 7;  // 30%
      corr.push_back({i, outlier ? Eigen::Index(rng() % 200) : i, 1.0});
    }
    AlignConfig cfg;
    cfg.ransac_iters = 256;
    const auto r = ransac_init(src, dst, corr, cfg, bounding_sphere(dst).radius, seed);
    CHECK(rad2deg(geodesic_distance(r.transform.rotation, t.rotation)) < 2.0);
  }
}

TEST_CASE("ransac skips collinear samples") {
  std::mt19937_64 rng(39);
  Points src(3, 40);
  for (int i = 0; i < 36; ++i) src.col(i) = Vector3(0.1 * i, 0, 0);
  src.rightCols(4) = testing::random_points(4, rng);
  const Sim3 t = synthetic::random_similarity(rng, 0.5, 2.0, 1.0);
  const Points dst = t * src;
  const auto corr = identity_map(40);
  AlignConfig cfg;
  cfg.ransac_iters = 500;
  const auto r = ransac_init(src, dst, corr, cfg, bounding_sphere(dst).radius, 1);
  CHECK(r.degenerate_samples > 0);
  CHECK(r.inliers == 40);
  CHECK(geodesic_distance(r.transform.rotation, t.rotation) < 1e-6);

  std::vector<Correspondence> two{{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 0.0}};
  CHECK_THROWS_AS(ransac_init(src, dst, two, cfg, 1.0, 1), Error);
}

TEST_CASE("refinement") {
  std::mt19937_64 rng(40);
  synthetic::Options o = noiseless(1500);
  const auto base = synthetic::make_base(rng, o, "b");
  const FeaturedSurface ref = canonical_surface(base, o, 3);
  const Sim3 placement = synthetic::random_similarity(rng, 0.5, 2.0, 1.0);
  const FeaturedSurface inst = transformed(ref, placement);
  const Sim3 truth = inverse(placement);
  AlignConfig cfg;
  const AlignmentProblem problem(inst, ref, cfg);

  const auto at_truth = refine(truth, problem);
  CHECK(at_truth.distance < 1e-5);
  CHECK(geodesic_distance(at_truth.transform.rotation, truth.rotation) < 1e-4);

  for (int trial = 0; trial < 5; ++trial) {
    const Vector3 axis = testing::random_points(1, rng).col(0).normalized();
    Sim3 start = truth;
    start.rotation = rotation_about(axis, deg2rad(5.0)) * truth.rotation;
    start.scale *= trial % 2 ? 1.05 : 0.95;
    const auto r = refine(start, problem);
    CHECK(rad2deg(geodesic_distance(r.transform.rotation, truth.rotation)) < 0.5);
    CHECK(std::abs(r.transform.scale / truth.scale - 1.0) < 0.005);
    CHECK(r.distance < r.initial_distance);
  }
}

TEST_CASE("gradient matches central differences") {
  std::mt19937_64 rng(41);
  synthetic::Options o = noiseless(300);
  o.feature_noise = 0.05;
  const auto base = synthetic::make_base(rng, o, "b");
  int checked = 0;
  for (int attempt = 0; attempt < 200 && checked < 10; ++attempt) {
    const FeaturedSurface ref = canonical_surface(base, o, 10 + attempt);
    const FeaturedSurface inst = canonical_surface(base, o, 500 + attempt);
    AlignConfig cfg;
    cfg.alpha = 0.3;
    const AlignmentProblem problem(inst, ref, cfg);
    const Sim3 t = synthetic::random_similarity(rng, 0.8, 1.25, 0.2);
    const double h = 1e-7;
    const auto base_nn = oracle::chamfer_assignments(problem.source_points(), problem.target_points(), t);
    bool kink = false;
    for (int k = 0; k < 7 && !kink; ++k) {
      for (double sign : {-1.0, 1.0}) {
        const Sim3 moved = problem.retract(t, sign * h * Increment::Unit(k));
        kink |= oracle::chamfer_assignments(problem.source_points(), problem.target_points(), moved) != base_nn;
      }
    }
    if (kink) continue;
    const Increment g = problem.evaluate(t).gradient;
    for (int k = 0; k < 7; ++k) {
      const double fp = problem.total_distance(problem.retract(t, h * Increment::Unit(k)));
      const double fm = problem.total_distance(problem.retract(t, -h * Increment::Unit(k)));
      const double fd = (fp - fm) / (2.0 * h);
      const double rel = std::abs(fd - g(k)) / std::max({std::abs(fd), std::abs(g(k)), 1e-8});
      CHECK(rel < 1e-4);
    }
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("align end to end") {
  std::mt19937_64 rng(42);
  synthetic::Options o;
  const auto base = synthetic::make_base(rng, o, "b");
  const FeaturedSurface ref = canonical_surface(base, noiseless(2048), 4);

  const auto self = align(ref, ref, AlignConfig{}, 1);
  CHECK(geodesic_distance<double>(self.transform.rotation, Matrix3::Identity()) < deg2rad(0.5));
  CHECK(std::abs(self.transform.scale - 1.0) < 1e-3);
  CHECK(self.score < 1e-3);

  o.dropout_max = 0.0;
  auto noisy = synthetic::make_instance(base, 0, "n", o, rng);
  auto r = align(noisy.surface, ref, AlignConfig{}, 2);
  CHECK(rad2deg(geodesic_distance<double>(r.transform.rotation, noisy.planted.rotation.transpose())) < 5.0);

  o.dropout_min = o.dropout_max = 0.3;
  for (auto mode : {synthetic::Dropout::Random, synthetic::Dropout::Cap}) {
    o.dropout = mode;
    auto partial = synthetic::make_instance(base, 0, "p", o, rng);
    r = align(partial.surface, ref, AlignConfig{}, 3);
    CHECK(rad2deg(geodesic_distance<double>(r.transform.rotation, partial.planted.rotation.transpose())) < 10.0);
  }
}

TEST_CASE("config validation") {
  AlignConfig c;
  CHECK_NOTHROW(check_valid(c));
  c.alpha = 1.5;
  CHECK_THROWS_AS(check_valid(c), Error);
}

}
