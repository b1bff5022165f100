#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "canon9d/core.hpp"

namespace canon9d {

/// Default number of sampled video frames whose features form an embedding.
inline constexpr int kDefaultEmbeddingFrames = 32;

struct ObjectEmbedding {
  std::string object_id;
  Eigen::VectorXd vector;  // unit norm
};

/// Normalizes every frame feature, averages, and renormalizes the mean.
/// Throws EmptyInput, DimensionMismatch or DegenerateMean (mean norm < 1e-8).
Eigen::VectorXd aggregate_embedding(std::span<const Eigen::VectorXd> frame_features);

/// Fallback embedding for objects without frame features: aggregate of all
/// vertex feature observations of the surface.
Eigen::VectorXd surface_embedding(const FeaturedSurface& surface);

struct Clustering {
  int k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignments;
  std::vector<Eigen::VectorXd> centroids;
  /// Sum of cosine distances to the assigned centroid after each iteration.
  std::vector<double> objective_history;
  int iterations = 0;

  std::vector<std::vector<std::string>> members() const;  // sorted ids per cluster
};

/// Spherical k-means with k-means++ seeding. Inputs are processed in object_id
/// order so the result depends only on (embeddings, k, seed, max_iters).
/// Throws TooFewPoints when k exceeds the number of embeddings.
Clustering kmeans_cosine(std::vector<ObjectEmbedding> embeddings, int k, std::uint64_t seed,
                         int max_iters = 100);

/// Sum over embeddings of 1 - cos(x, assigned centroid).
double kmeans_objective(const std::vector<ObjectEmbedding>& embeddings, const Clustering& clustering);

/// Member with the smallest mean cosine distance to all other members; ties go to
/// the lexicographically smallest id. Throws EmptyCluster.
std::string medoid(std::span<const ObjectEmbedding> cluster);

/// ceil(n / 100), at least 1.
int default_cluster_count(std::size_t n);

double rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace canon9d
