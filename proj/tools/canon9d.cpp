// canon9d command line: format validation, clustering, alignment, pose
// propagation, evaluation, the resumable pipeline and its HTTP service.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>

#include "canon9d/align.hpp"
#include "canon9d/canonical.hpp"
#include "canon9d/cluster.hpp"
#include "canon9d/eval.hpp"
#include "canon9d/ingest.hpp"
#include "canon9d/json_io.hpp"
#include "canon9d/pipeline.hpp"
#include "canon9d/service.hpp"
#include "canon9d/synthetic.hpp"

using namespace canon9d;

namespace {

int cmd_validate(const std::string& manifest_path) {
  int failures = 0;
  std::vector<ObjectRecord> manifest;
  try {
    manifest = load_manifest(manifest_path);
  } catch (const Error& e) {
    std::cerr << manifest_path << ": " << e.what() << '\n';
    return 1;
  }
  for (const auto& r : manifest) {
    try {
      check_valid(read_fpc(r.surface_path));
      if (!r.camera_path.empty()) read_trajectory(r.camera_path);
      if (!r.embedding_path.empty()) aggregate_embedding(read_frame_features(r.embedding_path));
    } catch (const Error& e) {
      std::cerr << r.object_id << ": " << e.what() << '\n';
      ++failures;
    }
  }
  std::cout << manifest.size() << " objects, " << failures << " invalid\n";
  return failures == 0 ? 0 : 1;
}

Eigen::VectorXd embedding_for(const ObjectRecord& r, int frames) {
  if (r.embedding_path.empty()) return surface_embedding(read_fpc(r.surface_path));
  auto all = read_frame_features(r.embedding_path);
  const std::size_t n = all.size();
  const std::size_t m = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, frames)));
  std::vector<Eigen::VectorXd> chosen;
  for (std::size_t i = 0; i < m; ++i) chosen.push_back(all[i * n / m]);
  return aggregate_embedding(chosen);
}

int cmd_cluster(const std::string& manifest_path, int k, std::uint64_t seed, int frames, const std::string& out) {
  const auto manifest = load_manifest(manifest_path);
  std::vector<ObjectEmbedding> embeddings;
  for (const auto& r : manifest) {
    if (r.status == ObjectStatus::Pending) embeddings.push_back({r.object_id, embedding_for(r, frames)});
  }
  if (k <= 0) k = default_cluster_count(embeddings.size());
  const Clustering c = kmeans_cosine(embeddings, k, seed);
  std::map<std::string, const ObjectEmbedding*> by_id;
  for (const auto& e : embeddings) by_id[e.object_id] = &e;
  json clusters = json::array();
  const auto groups = c.members();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    std::vector<ObjectEmbedding> members;
    for (const auto& id : groups[i]) members.push_back(*by_id.at(id));
    clusters.push_back({{"index", i}, {"members", groups[i]}, {"medoid", medoid(members)}});
  }
  write_json(out, json{{"k", c.k},
                       {"seed", c.seed},
                       {"iterations", c.iterations},
                       {"objective_history", c.objective_history},
                       {"clusters", clusters}});
  std::cout << "k=" << c.k << " iterations=" << c.iterations << " -> " << out << '\n';
  return 0;
}

int cmd_align(const std::string& reference, const std::string& instance, const AlignConfig& config,
              std::uint64_t seed, const std::string& out) {
  const AlignResult r = align(read_fpc(instance), read_fpc(reference), config, seed);
  json j = r.transform;
  j["score"] = r.score;
  j["ransac_inliers"] = r.ransac_inliers;
  j["correspondences"] = r.correspondences;
  j["refine_iterations"] = r.refine_iterations;
  write_json(out, j);
  std::printf("score %.6f  scale %.6f  inliers %zu/%zu\n", r.score, r.transform.scale, r.ransac_inliers,
              r.correspondences);
  return 0;
}

int cmd_pose(const std::string& surface, const std::string& transform, const std::string& reference_pose,
             const std::string& cameras, double quantile, const std::string& out) {
  const Sim3 t = read_json(transform).get<Sim3>();
  const json ref = read_json(reference_pose);
  const Box9D annotation = ref.contains("pose") ? ref.at("pose").get<Box9D>() : ref.get<Box9D>();
  Proposal p;
  p.transform = t;
  p.canonical = make_canonical_pose(read_fpc(surface).points(), t, annotation, quantile);
  const auto trajectory = cameras.empty() ? std::vector<CameraFrame>{} : read_trajectory(cameras);
  write_json(out, canonical_record(fs::path(surface).stem().string(), p, trajectory));
  std::cout << trajectory.size() << " frames -> " << out << '\n';
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& symmetry_path,
             std::size_t min_samples, const std::string& out) {
  const PoseTable pred = read_pose_table(pred_path);
  const PoseTable gt = read_pose_table(gt_path);
  std::map<std::string, SymmetrySpec> symmetry;
  if (symmetry_path.empty()) {
    const auto& inv = default_rule_inventory();
    symmetry = compile_symmetry(inv.category_rules(), inv);
  } else {
    symmetry = read_symmetry_table(symmetry_path);
  }
  EvalOptions options;
  options.min_category_samples = min_samples;
  const EvalReport report = evaluate(pred.poses, gt.poses, symmetry, gt.categories, options);
  if (!out.empty()) write_json(out, report_to_json(report));
  std::cout << format_table(report);
  return 0;
}

void print_summary(const VerdictSummary& s) {
  std::printf("%-8s %9s %9s %9s %7s\n", "iter.", "accept", "skipped", "filtered", "N");
  for (const auto& [it, c] : s.per_iteration) {
    std::printf("%-8d %8.1f%% %8.1f%% %8.1f%% %7zu\n", it, c.percent(c.accepted), c.percent(c.skipped),
                c.percent(c.filtered), c.total());
  }
  const auto& o = s.overall;
  std::printf("%-8s %8.1f%% %8.1f%% %8.1f%% %7zu  (pending %zu)\n", "total", o.percent(o.accepted),
              o.percent(o.skipped), o.percent(o.filtered), o.total(), o.pending);
}

void print_step(const StepReport& r) {
  std::cout << "iteration " << r.iteration << (r.finished ? " (finished)" : "") << ": aligned " << r.aligned << '\n';
  if (!r.awaiting_annotation.empty()) {
    std::cout << "awaiting reference annotation:";
    for (const auto& id : r.awaiting_annotation) std::cout << ' ' << id;
    std::cout << '\n';
  }
  if (!r.awaiting_verification.empty()) std::cout << r.awaiting_verification.size() << " objects await verification\n";
}

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Canonical 9D pose annotation pipeline"};
  app.require_subcommand(1);

  std::string manifest, out, state_dir, config_path;
  std::uint64_t seed = 0;

  auto* validate = app.add_subcommand("validate", "Check a manifest and every file it references");
  validate->add_option("manifest", manifest, "Manifest (JSON lines)")->required();

  int k = 0, frames = kDefaultEmbeddingFrames;
  auto* cluster = app.add_subcommand("cluster", "Cluster object embeddings and pick medoids");
  cluster->add_option("--manifest", manifest)->required();
  cluster->add_option("--k", k, "Cluster count (default ceil(n/100))");
  cluster->add_option("--seed", seed);
  cluster->add_option("--frames", frames, "Frames per embedding");
  cluster->add_option("--out", out)->required();

  std::string reference, instance;
  AlignConfig align_config;
  auto* align_cmd = app.add_subcommand("align", "Align an instance surface to a reference surface");
  align_cmd->add_option("--reference", reference)->required();
  align_cmd->add_option("--instance", instance)->required();
  align_cmd->add_option("--alpha", align_config.alpha, "Appearance weight")->check(CLI::Range(0.0, 1.0));
  align_cmd->add_option("--ransac-iters", align_config.ransac_iters);
  align_cmd->add_option("--seed", seed);
  align_cmd->add_option("--out", out)->required();

  std::string surface, transform, reference_pose, cameras;
  double quantile = kDefaultBoxQuantile;
  auto* pose = app.add_subcommand("pose", "Fit the canonical box and propagate it to camera frames");
  pose->add_option("--surface", surface)->required();
  pose->add_option("--transform", transform)->required();
  pose->add_option("--reference-pose", reference_pose)->required();
  pose->add_option("--cameras", cameras);
  pose->add_option("--quantile", quantile);
  pose->add_option("--out", out)->required();

  std::string pred, gt, symmetry;
  std::size_t min_samples = 1;
  auto* eval = app.add_subcommand("eval", "Symmetry-aware rotation accuracy and 3D IoU");
  eval->add_option("--pred", pred)->required();
  eval->add_option("--gt", gt)->required();
  eval->add_option("--symmetry", symmetry, "Rule table (defaults to the shipped inventory)");
  eval->add_option("--min-samples", min_samples, "Drop categories with fewer samples");
  eval->add_option("--out", out);

  bool resume = false, auto_verify = false;
  double auto_threshold = -1.0;
  std::string reference_poses;
  auto* pipeline = app.add_subcommand("pipeline", "Run the resumable canonicalization pipeline");
  pipeline->add_option("--manifest", manifest);
  pipeline->add_option("--state", state_dir, "State directory")->required();
  pipeline->add_option("--config", config_path, "PipelineConfig JSON");
  pipeline->add_flag("--resume", resume, "Continue an existing state directory");
  pipeline->add_flag("--auto-verify", auto_verify, "Accept members whose align score is below the threshold");
  pipeline->add_option("--auto-verify-threshold", auto_threshold);
  pipeline->add_option("--reference-poses", reference_poses, "JSON lines of cross-verified reference poses");

  int port = 8080;
  std::string host = "127.0.0.1";
  auto* serve = app.add_subcommand("serve", "Serve the annotation API for a state directory");
  serve->add_option("--state", state_dir)->required();
  serve->add_option("--port", port);
  serve->add_option("--host", host);

  auto* stats = app.add_subcommand("stats", "Verification statistics per iteration");
  stats->add_option("--state", state_dir)->required();

  std::string object_id, verdict, annotator, reviewer, pose_file;
  auto* annotate = app.add_subcommand("annotate", "Record a reference pose or a verdict");
  annotate->add_option("--state", state_dir)->required();
  annotate->add_option("--object", object_id)->required();
  annotate->add_option("--pose", pose_file, "Pose JSON (rotation, translation, optional extents)");
  annotate->add_option("--verdict", verdict, "Accept, Skip or Filter");
  annotate->add_option("--annotator", annotator);
  annotate->add_option("--reviewer", reviewer);

  int bases = 10, per_base = 20;
  synthetic::Options synth_options;
  auto* synth = app.add_subcommand("synth", "Write a synthetic manifest with planted transforms");
  synth->add_option("--out", out)->required();
  synth->add_option("--bases", bases);
  synth->add_option("--per-base", per_base);
  synth->add_option("--points", synth_options.points);
  synth->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return cmd_validate(manifest);
    if (*cluster) return cmd_cluster(manifest, k, seed, frames, out);
    if (*align_cmd) return cmd_align(reference, instance, align_config, seed, out);
    if (*pose) return cmd_pose(surface, transform, reference_pose, cameras, quantile, out);
    if (*eval) return cmd_eval(pred, gt, symmetry, min_samples, out);
    if (*pipeline) {
      PipelineConfig config;
      if (!config_path.empty()) config = read_json(config_path).get<PipelineConfig>();
      if (auto_verify) config.auto_verify = true;
      if (auto_threshold >= 0.0) config.auto_verify_threshold = auto_threshold;
      const bool exists = fs::exists(fs::path(state_dir) / "pipeline.json");
      if (exists && !resume) {
        std::cerr << state_dir << " already holds a pipeline; pass --resume\n";
        return 2;
      }
      if (!exists && manifest.empty()) {
        std::cerr << "--manifest is required for a new pipeline\n";
        return 2;
      }
      Pipeline p = exists ? Pipeline::open(state_dir) : Pipeline::create(state_dir, manifest, config);
      if (!reference_poses.empty()) {
        if (!fs::exists(reference_poses)) throw Error(Errc::MissingFile, reference_poses + " does not exist");
        for (const auto& [id, rec] : load_pose_records(reference_poses)) p.submit_pose(rec);
      }
      print_step(p.step());
      print_summary(p.summarize());
      return 0;
    }
    if (*serve) {
      Pipeline p = Pipeline::open(state_dir);
      Service service(p);
      const int bound = service.bind(host, port);
      if (bound < 0) {
        std::cerr << "cannot bind " << host << ':' << port << '\n';
        return 1;
      }
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << host << ':' << bound << std::endl;
      service.listen();
      return 0;
    }
    if (*stats) {
      print_summary(Pipeline::open(state_dir).summarize());
      return 0;
    }
    if (*annotate) {
      Pipeline p = Pipeline::open(state_dir);
      if (!pose_file.empty()) {
        const json j = read_json(pose_file);
        const json& body = j.contains("pose") ? j.at("pose") : j;
        PoseRecord rec;
        rec.object_id = object_id;
        rec.pose.rotation = matrix_from_json(body.at("rotation"));
        rec.pose.translation = vector_from_json(body.at("translation"));
        rec.pose.extents = body.contains("extents") ? vector_from_json(body.at("extents")) : Vector3::Zero();
        rec.annotator_id = annotator;
        rec.reviewer_id = reviewer;
        rec.cross_verified = !reviewer.empty() && reviewer != annotator;
        p.submit_pose(rec);
      }
      if (!verdict.empty()) p.submit_verdict(object_id, parse_verdict(verdict), reviewer);
      print_step(p.step());
      return 0;
    }
    if (*synth) {
      const auto ds = synthetic::make_dataset(bases, per_base, synth_options, seed);
      std::cout << ds.instances.size() << " instances -> " << synthetic::write_dataset(ds, out).string() << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
