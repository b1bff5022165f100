#include <doctest.h>

#include "canon9d/cluster.hpp"
#include "canon9d/error.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "planted.hpp"

using namespace canon9d;

namespace {

std::vector<int> labels_of(const Clustering& c, const planted::Populations& p) {
  std::vector<int> out;
  for (const auto& e : p.embeddings) out.push_back(c.assignments.at(e.object_id));
  return out;
}

}  // namespace

TEST_SUITE("cluster") {

TEST_CASE("aggregate embedding") {
  Eigen::VectorXd v(3);
  v << 3, 0, 4;
  std::vector<Eigen::VectorXd> one{v};
  CHECK(aggregate_embedding(one).isApprox(v / 5.0));
  std::vector<Eigen::VectorXd> twice{v, v};
  CHECK(aggregate_embedding(twice).isApprox(v / 5.0));

  Eigen::VectorXd e1 = Eigen::VectorXd::Unit(3, 0);
  std::vector<Eigen::VectorXd> cancel{e1, -e1};
  CHECK_THROWS_WITH_AS(aggregate_embedding(cancel), doctest::Contains("DegenerateMean"), Error);
  CHECK_THROWS_AS(aggregate_embedding(std::vector<Eigen::VectorXd>{}), Error);
  std::vector<Eigen::VectorXd> mixed{e1, Eigen::VectorXd::Ones(2)};
  CHECK_THROWS_WITH_AS(aggregate_embedding(mixed), doctest::Contains("DimensionMismatch"), Error);
}

TEST_CASE("single cluster centroid is the renormalized mean") {
  std::mt19937_64 rng(21);
  std::vector<ObjectEmbedding> e;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(8);
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd v = testing::random_unit(8, rng).cast<double>();
    v.array() += 0.5;
    v.normalize();
    sum += v;
    e.push_back({"o" + std::to_string(i), v});
  }
  const Clustering c = kmeans_cosine(e, 1, 7);
  for (const auto& [id, a] : c.assignments) CHECK(a == 0);
  CHECK((c.centroids[0] - sum.normalized()).norm() < 1e-12);
}

TEST_CASE("planted populations") {
  const auto p = planted::two_populations(25, 16, 3);
  for (std::size_t i = 0; i < p.embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < p.embeddings.size(); ++j) {
      const double c = p.embeddings[i].vector.dot(p.embeddings[j].vector);
      if (p.labels[i] == p.labels[j]) {
        REQUIRE(c > 0.99);
      } else {
        REQUIRE(c < 0.1);
      }
    }
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Clustering c = kmeans_cosine(p.embeddings, 2, seed);
    CHECK(rand_index(labels_of(c, p), p.labels) == 1.0);
  }
}

TEST_CASE("determinism and monotone objective") {
  std::mt19937_64 rng(22);
  std::vector<ObjectEmbedding> e;
  for (int i = 0; i < 200; ++i) e.push_back({"o" + std::to_string(i), testing::random_unit(6, rng).cast<double>()});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Clustering a = kmeans_cosine(e, 7, seed);
    auto shuffled = e;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const Clustering b = kmeans_cosine(shuffled, 7, seed);
    CHECK(a.assignments == b.assignments);
    for (std::size_t k = 1; k < a.objective_history.size(); ++k) {
      CHECK(a.objective_history[k] <= a.objective_history[k - 1] + 1e-12);
    }
    CHECK(kmeans_objective(e, a) == doctest::Approx(a.objective_history.back()));
  }
  CHECK_THROWS_AS(kmeans_cosine(e, 201, 0), Error);
}

TEST_CASE("medoid") {
  std::vector<ObjectEmbedding> one{{"only", Eigen::VectorXd::Unit(3, 0)}};
  CHECK(medoid(one) == "only");
  std::vector<ObjectEmbedding> two{{"b", Eigen::VectorXd::Unit(3, 0)}, {"a", Eigen::VectorXd::Unit(3, 1)}};
  CHECK(medoid(two) == "a");
  CHECK_THROWS_AS(medoid(std::vector<ObjectEmbedding>{}), Error);

  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ObjectEmbedding> e;
    const int n = 1 + int(rng() % 50);
    for (int i = 0; i < n; ++i) e.push_back({"m" + std::to_string(i), testing::random_unit(4, rng).cast<double>()});
    CHECK(medoid(e) == oracle::brute_medoid(e));
  }
}

TEST_CASE("default cluster count") {
  CHECK(default_cluster_count(0) == 1);
  CHECK(default_cluster_count(100) == 1);
  CHECK(default_cluster_count(101) == 2);
  CHECK(default_cluster_count(14000) == 140);
}

}
