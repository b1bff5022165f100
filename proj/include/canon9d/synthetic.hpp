#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "canon9d/core.hpp"
#include "canon9d/ingest.hpp"

namespace canon9d::synthetic {

enum class Dropout { Random, Cap };

struct Options {
  int points = 2048;
  int feature_dim = 16;
  int regions = 16;              // anchors of the smooth feature field
  double noise = 0.01;           // Gaussian sigma, fraction of the largest extent
  double dropout_min = 0.0;
  double dropout_max = 0.3;
  Dropout dropout = Dropout::Random;
  double feature_noise = 0.02;   // per-component sigma before renormalization
  int max_observations = 3;      // 1..max observations per vertex
  double unfeatured_fraction = 0.0;
  double min_scale = 0.5;
  double max_scale = 2.0;
  double translation_range = 2.0;
  int frames = 4;                // camera frames per instance
  double box_quantile = 0.01;
};

/// A shape in its canonical frame (x = LEFT, y = BACK, z = TOP) together with a
/// smooth feature field; the canonical box is centred at the origin.
struct BaseShape {
  std::string category;
  Vector3 body_centre = Vector3::Zero();           // ellipsoid body
  Vector3 radii = Vector3::Ones();
  std::vector<std::pair<Vector3, Vector3>> parts;  // box centre, half sizes
  Eigen::Matrix3Xd anchors;
  Eigen::MatrixXd codes;  // feature_dim x regions
  double bandwidth = 0.3;
  Box9D box;              // canonical box (identity rotation)
};

struct Instance {
  std::string object_id;
  int base = 0;
  FeaturedSurface surface;
  Sim3 planted;   // canonical frame -> instance frame
  Box9D gt_pose;  // canonical box expressed in the instance frame
  std::vector<CameraFrame> trajectory;
};

struct Dataset {
  std::vector<BaseShape> bases;
  std::vector<Instance> instances;
};

BaseShape make_base(std::mt19937_64& rng, const Options& options, std::string category);

/// Unit feature of a canonical-frame point.
Eigen::VectorXd feature_at(const BaseShape& base, const Vector3& p);

/// Noise-free surface samples in the canonical frame.
Points sample_surface(const BaseShape& base, int n, std::mt19937_64& rng);

/// Fresh sample of `base` with dropout, noise and observation noise, placed by
/// `planted` (a random transform when omitted).
Instance make_instance(const BaseShape& base, int base_index, std::string object_id, const Options& options,
                       std::mt19937_64& rng);
Instance make_instance(const BaseShape& base, int base_index, std::string object_id, const Options& options,
                       std::mt19937_64& rng, const Sim3& planted);

Dataset make_dataset(int bases, int per_base, const Options& options, std::uint64_t seed);

Sim3 random_similarity(std::mt19937_64& rng, double min_scale, double max_scale, double translation_range);
Matrix3 random_rotation(std::mt19937_64& rng);

/// Writes <dir>/<id>.fpc, <id>.cameras.json, manifest.jsonl and ground_truth.json
/// ({id: {"category", "pose", "planted"}}). Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace canon9d::synthetic
