#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "canon9d/core.hpp"
#include "canon9d/synthetic.hpp"

namespace testing {

using namespace canon9d;

inline Points random_points(int n, std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> g(0.0, spread);
  Points p(3, n);
  for (int i = 0; i < n; ++i) p.col(i) = Vector3(g(rng), g(rng), g(rng));
  return p;
}

inline Eigen::VectorXf random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  Eigen::VectorXf v(dim);
  for (int d = 0; d < dim; ++d) v(d) = g(rng);
  return v.normalized();
}

/// Surface with 0..max_obs random unit features per vertex.
inline FeaturedSurface random_surface(int n, int dim, int max_obs, std::mt19937_64& rng, bool allow_empty = true) {
  FeaturedSurface s;
  s.feature_dim = dim;
  std::uniform_int_distribution<int> count(allow_empty ? 0 : 1, max_obs);
  std::normal_distribution<float> g;
  for (int i = 0; i < n; ++i) {
    const int c = count(rng);
    Eigen::MatrixXf obs(dim, c);
    for (int k = 0; k < c; ++k) obs.col(k) = random_unit(dim, rng);
    s.add_vertex(Eigen::Vector3f(g(rng), g(rng), g(rng)), obs);
  }
  return s;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("canon9d_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
