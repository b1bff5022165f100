#include "canon9d/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace canon9d {

Eigen::VectorXd aggregate_embedding(std::span<const Eigen::VectorXd> frame_features) {
  if (frame_features.empty()) throw Error(Errc::EmptyInput, "no frame features to aggregate");
  const Eigen::Index dim = frame_features.front().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (const auto& f : frame_features) {
    if (f.size() != dim) throw Error(Errc::DimensionMismatch, "frame features differ in dimension");
    const double n = f.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw Error(Errc::InvalidFeature, "frame feature with zero norm");
    sum += f / n;
  }
  const Eigen::VectorXd mean = sum / double(frame_features.size());
  const double norm = mean.norm();
  if (norm < 1e-8) throw Error(Errc::DegenerateMean, "frame features cancel out");
  return mean / norm;
}

Eigen::VectorXd surface_embedding(const FeaturedSurface& surface) {
  std::vector<Eigen::VectorXd> columns;
  columns.reserve(static_cast<std::size_t>(surface.features.cols()));
  for (Eigen::Index c = 0; c < surface.features.cols(); ++c) columns.push_back(surface.features.col(c).cast<double>());
  return aggregate_embedding(columns);
}

int default_cluster_count(std::size_t n) { return std::max<int>(1, static_cast<int>((n + 99) / 100)); }

std::vector<std::vector<std::string>> Clustering::members() const {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(k));
  for (const auto& [id, c] : assignments) out[static_cast<std::size_t>(c)].push_back(id);
  return out;
}

namespace {

using Matrix = Eigen::MatrixXd;

// Columns of `points` and `centroids` are unit vectors.
std::vector<int> assign(const Matrix& points, const Matrix& centroids) {
  const Matrix sim = centroids.transpose() * points;  // k x n
  std::vector<int> labels(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    Eigen::Index best = 0;
    sim.col(i).maxCoeff(&best);  // first maximum on ties
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return labels;
}

void repair_empty(const Matrix& points, Matrix& centroids, std::vector<int>& labels) {
  const auto k = centroids.cols();
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  for (Eigen::Index c = 0; c < k; ++c) {
    if (sizes[static_cast<std::size_t>(c)] > 0) continue;
    Eigen::Index far = -1;
    double far_dist = -1.0;
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
      if (sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] < 2) continue;
      const double d = 1.0 - centroids.col(c).dot(points.col(i));
      if (d > far_dist) {
        far_dist = d;
        far = i;
      }
    }
    if (far < 0) throw Error(Errc::TooFewPoints, "cannot repair empty cluster");
    --sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
    labels[static_cast<std::size_t>(far)] = static_cast<int>(c);
    sizes[static_cast<std::size_t>(c)] = 1;
    centroids.col(c) = points.col(far);
  }
}

void update(const Matrix& points, const std::vector<int>& labels, Matrix& centroids) {
  Matrix sums = Matrix::Zero(points.rows(), centroids.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) sums.col(labels[static_cast<std::size_t>(i)]) += points.col(i);
  for (Eigen::Index c = 0; c < centroids.cols(); ++c) {
    const double n = sums.col(c).norm();
    // A cancelling mean keeps the previous centroid, which cannot raise the objective.
    if (n > 1e-12) centroids.col(c) = sums.col(c) / n;
  }
}

double objective(const Matrix& points, const Matrix& centroids, const std::vector<int>& labels) {
  double j = 0.0;
  for (Eigen::Index i = 0; i < points.cols(); ++i)
    j += 1.0 - points.col(i).dot(centroids.col(labels[static_cast<std::size_t>(i)]));
  return j;
}

Matrix seed_centroids(const Matrix& points, int k, std::mt19937_64& rng) {
  const auto n = points.cols();
  Matrix centroids(points.rows(), k);
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::Index first = pick(rng);
  centroids.col(0) = points.col(first);
  chosen[static_cast<std::size_t>(first)] = 1;
  Eigen::VectorXd dist = (1.0 - (points.transpose() * points.col(first)).array()).max(0.0).matrix();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const Eigen::VectorXd weights = dist.array().square().matrix();
    const double total = weights.sum();
    Eigen::Index next = -1;
    if (total > 0.0) {
      const double r = unit(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += weights(i);
        if (weights(i) > 0.0 && acc >= r) {
          next = i;
          break;
        }
      }
      if (next < 0) {  // r landed in floating-point slack at the end
        for (Eigen::Index i = n - 1; i >= 0; --i)
          if (weights(i) > 0.0) {
            next = i;
            break;
          }
      }
    } else {
      // Every remaining point coincides with a centroid: take the first unchosen one.
      for (Eigen::Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) {
          next = i;
          break;
        }
    }
    centroids.col(c) = points.col(next);
    chosen[static_cast<std::size_t>(next)] = 1;
    dist = dist.cwiseMin((1.0 - (points.transpose() * points.col(next)).array()).max(0.0).matrix());
  }
  return centroids;
}

}  // namespace

Clustering kmeans_cosine(std::vector<ObjectEmbedding> embeddings, int k, std::uint64_t seed, int max_iters) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be positive");
  if (static_cast<std::size_t>(k) > embeddings.size()) {
    throw Error(Errc::TooFewPoints, "k = " + std::to_string(k) + " exceeds " + std::to_string(embeddings.size()) +
                                        " embeddings");
  }
  std::sort(embeddings.begin(), embeddings.end(),
            [](const ObjectEmbedding& a, const ObjectEmbedding& b) { return a.object_id < b.object_id; });
  for (std::size_t i = 1; i < embeddings.size(); ++i) {
    if (embeddings[i].object_id == embeddings[i - 1].object_id) {
      throw Error(Errc::DuplicateId, "duplicate embedding id '" + embeddings[i].object_id + "'");
    }
  }
  const Eigen::Index dim = embeddings.front().vector.size();
  Matrix points(dim, static_cast<Eigen::Index>(embeddings.size()));
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].vector.size() != dim) throw Error(Errc::DimensionMismatch, "embedding dimensions differ");
    points.col(static_cast<Eigen::Index>(i)) = embeddings[i].vector;
  }

  std::mt19937_64 rng(seed);
  Matrix centroids = seed_centroids(points, k, rng);
  std::vector<int> labels = assign(points, centroids);
  repair_empty(points, centroids, labels);

  Clustering out;
  out.k = k;
  out.seed = seed;
  bool converged = false;
  for (int it = 0; it < std::max(1, max_iters); ++it) {
    update(points, labels, centroids);
    out.objective_history.push_back(objective(points, centroids, labels));
    ++out.iterations;
    std::vector<int> next = assign(points, centroids);
    repair_empty(points, centroids, next);
    if (next == labels) {
      converged = true;
      break;
    }
    labels = std::move(next);
  }
  if (!converged) {
    update(points, labels, centroids);
    out.objective_history.push_back(objective(points, centroids, labels));
  }

  for (std::size_t i = 0; i < embeddings.size(); ++i) out.assignments[embeddings[i].object_id] = labels[i];
  for (Eigen::Index c = 0; c < k; ++c) out.centroids.push_back(centroids.col(c));
  return out;
}

double kmeans_objective(const std::vector<ObjectEmbedding>& embeddings, const Clustering& clustering) {
  double j = 0.0;
  for (const auto& e : embeddings)
    j += 1.0 - e.vector.dot(clustering.centroids[static_cast<std::size_t>(clustering.assignments.at(e.object_id))]);
  return j;
}

std::string medoid(std::span<const ObjectEmbedding> cluster) {
  if (cluster.empty()) throw Error(Errc::EmptyCluster, "medoid of an empty cluster");
  const std::size_t n = cluster.size();
  if (n == 1) return cluster.front().object_id;
  std::size_t best = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum += 1.0 - cluster[i].vector.dot(cluster[j].vector);
    const double mean = sum / double(n - 1);
    const bool tie = std::abs(mean - best_mean) <= 1e-12;
    if ((!tie && mean < best_mean) || (tie && cluster[i].object_id < cluster[best].object_id)) {
      best = i;
      best_mean = tie ? std::min(mean, best_mean) : mean;
    }
  }
  return cluster[best].object_id;
}

double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "label vectors differ in length");
  if (a.size() < 2) return 1.0;
  std::size_t agree = 0, pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      agree += (a[i] == a[j]) == (b[i] == b[j]);
      ++pairs;
    }
  return double(agree) / double(pairs);
}

}  // namespace canon9d
