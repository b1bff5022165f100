#include "canon9d/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "canon9d/canonical.hpp"
#include "canon9d/json_io.hpp"

namespace canon9d::synthetic {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vector3 gaussian3(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return {n(rng), n(rng), n(rng)};
}

double box_area(const Vector3& h) { return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z()); }

// Knud Thomsen's approximation of the ellipsoid surface area.
double ellipsoid_area(const Vector3& r) {
  constexpr double p = 1.6075;
  const double a = std::pow(r.x(), p), b = std::pow(r.y(), p), c = std::pow(r.z(), p);
  return 4.0 * kPi * std::pow((a * b + a * c + b * c) / 3.0, 1.0 / p);
}

Vector3 sample_box_surface(const Vector3& centre, const Vector3& h, std::mt19937_64& rng) {
  const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  const int axis = std::discrete_distribution<int>(areas, areas + 3)(rng);
  Vector3 p(uniform(rng, -h.x(), h.x()), uniform(rng, -h.y(), h.y()), uniform(rng, -h.z(), h.z()));
  p(axis) = uniform(rng, 0.0, 1.0) < 0.5 ? -h(axis) : h(axis);
  return centre + p;
}

}  // namespace

Matrix3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

Sim3 random_similarity(std::mt19937_64& rng, double min_scale, double max_scale, double translation_range) {
  Sim3 t;
  t.rotation = random_rotation(rng);
  // Log-uniform so that shrinking and growing are equally likely.
  t.scale = std::exp(uniform(rng, std::log(min_scale), std::log(max_scale)));
  for (int i = 0; i < 3; ++i) t.translation(i) = uniform(rng, -translation_range, translation_range);
  return t;
}

BaseShape make_base(std::mt19937_64& rng, const Options& options, std::string category) {
  BaseShape b;
  b.category = std::move(category);
  b.radii = Vector3(uniform(rng, 0.45, 1.0), uniform(rng, 0.45, 1.0), uniform(rng, 0.45, 1.0));
  const int n_parts = 2 + int(rng() % 2);
  for (int i = 0; i < n_parts; ++i) {
    const Vector3 dir = gaussian3(rng).normalized();
    const Vector3 centre = dir.cwiseProduct(b.radii);
    const Vector3 half(uniform(rng, 0.1, 0.35), uniform(rng, 0.1, 0.35), uniform(rng, 0.1, 0.35));
    b.parts.emplace_back(centre, half);
  }
  b.bandwidth = 0.35;
  b.anchors.resize(3, options.regions);
  b.codes.resize(options.feature_dim, options.regions);
  for (int r = 0; r < options.regions; ++r) {
    b.anchors.col(r) = gaussian3(rng).normalized().cwiseProduct(b.radii);
    Eigen::VectorXd code(options.feature_dim);
    std::normal_distribution<double> n;
    for (int d = 0; d < options.feature_dim; ++d) code(d) = n(rng);
    b.codes.col(r) = code.normalized();
  }
  // Centre the canonical box on the origin.
  std::mt19937_64 local(rng());
  const Points dense = sample_surface(b, 20000, local);
  const Box9D box = fit_box(dense, options.box_quantile);
  b.body_centre -= box.translation;
  for (auto& part : b.parts) part.first -= box.translation;
  b.anchors.colwise() -= box.translation;
  b.box = box;
  b.box.translation.setZero();
  return b;
}

Eigen::VectorXd feature_at(const BaseShape& base, const Vector3& p) {
  const Eigen::RowVectorXd sq = (base.anchors.colwise() - p).colwise().squaredNorm();
  const Eigen::VectorXd w = (-sq.array() / (2.0 * base.bandwidth * base.bandwidth)).exp().transpose();
  Eigen::VectorXd f = base.codes * w;
  const double norm = f.norm();
  if (norm < 1e-300) return base.codes.col(0);
  return f / norm;
}

Points sample_surface(const BaseShape& base, int n, std::mt19937_64& rng) {
  const auto& boxes = base.parts;
  std::vector<double> areas{ellipsoid_area(base.radii)};
  for (const auto& b : boxes) areas.push_back(box_area(b.second));
  std::discrete_distribution<int> pick(areas.begin(), areas.end());
  Points out(3, n);
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng);
    if (k == 0) {
      out.col(i) = base.body_centre + gaussian3(rng).normalized().cwiseProduct(base.radii);
    } else {
      out.col(i) = sample_box_surface(boxes[k - 1].first, boxes[k - 1].second, rng);
    }
  }
  return out;
}

Instance make_instance(const BaseShape& base, int base_index, std::string object_id, const Options& options,
                       std::mt19937_64& rng) {
  const Sim3 planted = random_similarity(rng, options.min_scale, options.max_scale, options.translation_range);
  return make_instance(base, base_index, std::move(object_id), options, rng, planted);
}

Instance make_instance(const BaseShape& base, int base_index, std::string object_id, const Options& options,
                       std::mt19937_64& rng, const Sim3& planted) {
  Instance inst;
  inst.object_id = std::move(object_id);
  inst.base = base_index;
  inst.planted = planted;
  inst.gt_pose.rotation = planted.rotation;
  inst.gt_pose.translation = planted.translation;
  inst.gt_pose.extents = planted.scale * base.box.extents;

  const double drop = uniform(rng, options.dropout_min, options.dropout_max);
  const int total = options.points;
  const int kept = std::max(4, int(std::lround(total * (1.0 - drop))));
  Points pts = sample_surface(base, total, rng);
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  if (options.dropout == Dropout::Random) {
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    const Vector3 dir = gaussian3(rng).normalized();
    std::sort(order.begin(), order.end(), [&](int a, int b) { return pts.col(a).dot(dir) < pts.col(b).dot(dir); });
  }
  order.resize(kept);
  std::sort(order.begin(), order.end());

  const double sigma = options.noise * base.box.extents.maxCoeff();
  std::normal_distribution<double> fnoise(0.0, options.feature_noise);
  std::normal_distribution<double> pnoise(0.0, sigma);
  std::uniform_int_distribution<int> n_obs(1, std::max(1, options.max_observations));
  inst.surface.feature_dim = options.feature_dim;
  for (int idx : order) {
    const Vector3 c = pts.col(idx);
    const Vector3 noisy = c + Vector3(pnoise(rng), pnoise(rng), pnoise(rng));
    const Vector3 placed = planted * noisy;
    const Eigen::VectorXd f = feature_at(base, c);
    int count = n_obs(rng);
    if (uniform(rng, 0.0, 1.0) < options.unfeatured_fraction) count = 0;
    Eigen::MatrixXf obs(options.feature_dim, count);
    for (int o = 0; o < count; ++o) {
      Eigen::VectorXd g = f;
      for (int d = 0; d < options.feature_dim; ++d) g(d) += fnoise(rng);
      obs.col(o) = g.normalized().cast<float>();
    }
    inst.surface.add_vertex(placed.cast<float>(), obs);
  }

  // Cameras orbit the object; world_to_camera is rigid.
  const double radius = 3.0 * planted.scale * base.box.extents.maxCoeff();
  for (int k = 0; k < options.frames; ++k) {
    const double theta = 2.0 * kPi * k / std::max(1, options.frames);
    const Vector3 eye = planted.translation + radius * Vector3(std::cos(theta), std::sin(theta), 0.3);
    const Vector3 forward = (planted.translation - eye).normalized();
    const Vector3 right = forward.cross(Vector3::UnitZ()).normalized();
    const Vector3 down = forward.cross(right);
    Matrix3 cam_to_world;
    cam_to_world << right, down, forward;
    CameraFrame frame;
    frame.frame_id = k;
    frame.world_to_camera.rotation = cam_to_world.transpose();
    frame.world_to_camera.translation = -(cam_to_world.transpose() * eye);
    inst.trajectory.push_back(frame);
  }
  return inst;
}

Dataset make_dataset(int bases, int per_base, const Options& options, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  for (int b = 0; b < bases; ++b) d.bases.push_back(make_base(rng, options, "shape" + std::to_string(b)));
  for (int b = 0; b < bases; ++b) {
    for (int i = 0; i < per_base; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "s%02d_%03d", b, i);
      d.instances.push_back(make_instance(d.bases[b], b, id, options, rng));
    }
  }
  return d;
}

std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ObjectRecord> records;
  json truth = json::object();
  for (const auto& inst : dataset.instances) {
    const std::string fpc = inst.object_id + ".fpc";
    const std::string cams = inst.object_id + ".cameras.json";
    write_fpc(inst.surface, dir / fpc);
    write_trajectory(inst.trajectory, dir / cams);
    ObjectRecord r;
    r.object_id = inst.object_id;
    r.surface_path = fpc;
    r.camera_path = cams;
    r.category_hint = dataset.bases[inst.base].category;
    records.push_back(r);
    truth[inst.object_id] = {{"category", dataset.bases[inst.base].category},
                             {"pose", inst.gt_pose},
                             {"planted", inst.planted}};
  }
  const auto manifest = dir / "manifest.jsonl";
  save_manifest(records, manifest);
  write_json(dir / "ground_truth.json", truth);
  return manifest;
}

}  // namespace canon9d::synthetic
