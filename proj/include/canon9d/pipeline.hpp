#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "canon9d/align.hpp"
#include "canon9d/canonical.hpp"
#include "canon9d/cluster.hpp"
#include "canon9d/ingest.hpp"
#include "canon9d/json_io.hpp"

namespace canon9d {

struct PipelineConfig {
  std::uint64_t seed = 0;
  int k = 0;  // clusters per iteration; 0 picks default_cluster_count(pending)
  int max_iterations = 3;
  int kmeans_max_iters = 100;
  int embedding_frames = kDefaultEmbeddingFrames;
  AlignConfig align;
  double box_quantile = kDefaultBoxQuantile;
  bool auto_verify = false;
  double auto_verify_threshold = 0.2;   // align score below which members are accepted
  std::string auto_reviewer = "auto-verify";
  int threads = 0;  // 0 uses the hardware concurrency
};

void to_json(json& j, const PipelineConfig& c);
void from_json(const json& j, PipelineConfig& c);

/// Alignment of one cluster member to its reference, with the canonical pose
/// it would receive on Accept.
struct Proposal {
  Sim3 transform;  // member frame -> reference frame
  double score = 0.0;
  CanonicalPose canonical;
};

struct ClusterState {
  int index = 0;
  std::string medoid;
  std::vector<std::string> members;  // sorted, includes the medoid
  std::optional<Box9D> reference;    // cross-verified annotation of the medoid
  bool aligned = false;
  std::map<std::string, Proposal> proposals;
  std::map<std::string, std::string> failures;  // member -> alignment error
};

struct PipelineState {
  int iteration = 1;
  std::uint64_t seed = 0;
  bool clustered = false;  // clusters hold the current iteration's partition
  bool finished = false;
  std::map<std::string, ObjectStatus> statuses;
  std::vector<ClusterState> clusters;
};

void to_json(json& j, const PipelineState& s);
void from_json(const json& j, PipelineState& s);

struct StepReport {
  int iteration = 1;
  bool finished = false;
  std::vector<std::string> awaiting_annotation;    // medoids without a cross-verified pose
  std::vector<std::string> awaiting_verification;  // members with a proposal and no verdict
  std::size_t aligned = 0;                         // alignments computed by this call
};

/// Persisted, resumable driver for the cluster / annotate / align / verify loop.
///
/// State directory:
///   pipeline.json   manifest path + config
///   state.json      PipelineState
///   ledger.tsv      verdicts
///   poses.jsonl     manual reference annotations
///   canonical/      one JSON file per Accepted object
///
/// All mutating calls are serialized by an internal mutex and persist state
/// before returning.
class Pipeline {
 public:
  /// Initializes a new state directory (fails if one already exists there).
  static Pipeline create(const fs::path& state_dir, const fs::path& manifest, const PipelineConfig& config);
  static Pipeline open(const fs::path& state_dir);

  Pipeline(Pipeline&& other) noexcept;

  /// Runs every stage that needs no human input: clustering, alignment of clusters
  /// with verified references, auto-verification, verdict application and
  /// iteration turnover, looping until human input is needed or the run
  /// finishes. Throws EmptyPending when a fresh iteration has nothing to cluster.
  StepReport step();

  /// Stores a reference annotation. Extents <= 0 are fitted from the surface.
  /// Throws UnknownObject, IllegalTransition (Filtered object) or InvalidArgument.
  void submit_pose(PoseRecord record);

  /// Appends a verdict for the current iteration. Accept requires a proposal.
  void submit_verdict(const std::string& object_id, Verdict verdict, const std::string& reviewer_id);

  PipelineState state() const;
  const PipelineConfig& config() const { return config_; }
  const std::vector<ObjectRecord>& manifest() const { return manifest_; }
  const fs::path& dir() const { return dir_; }
  VerdictSummary summarize() const;

  const ObjectRecord& record(const std::string& object_id) const;  // UnknownObject
  FeaturedSurface load_surface(const std::string& object_id) const;
  /// Best available pose of the object in its own frame: accepted canonical pose,
  /// then the current proposal, then a manual annotation.
  std::optional<Box9D> current_pose(const std::string& object_id) const;
  std::optional<CanonicalPose> current_canonical(const std::string& object_id) const;
  std::map<std::string, PoseRecord> pose_records() const;

  fs::path state_path() const { return dir_ / "state.json"; }
  fs::path ledger_path() const { return dir_ / "ledger.tsv"; }
  fs::path poses_path() const { return dir_ / "poses.jsonl"; }
  fs::path canonical_path(const std::string& object_id) const { return dir_ / "canonical" / (object_id + ".json"); }

 private:
  Pipeline(fs::path dir, fs::path manifest_path, PipelineConfig config);

  void refresh_statuses();
  std::vector<std::string> queued_objects() const;
  void open_iteration();
  std::size_t align_ready_clusters();
  void auto_verify();
  void sync_canonical_files() const;
  bool iteration_complete() const;
  void persist() const;
  const Proposal* find_proposal(const std::string& id) const;
  StepReport report() const;

  fs::path dir_;
  fs::path manifest_path_;
  PipelineConfig config_;
  std::vector<ObjectRecord> manifest_;
  std::map<std::string, std::size_t> index_;
  PipelineState state_;
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

/// Deterministic per-object seed derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, int iteration, const std::string& object_id);

/// Canonical-pose file content for an accepted object.
json canonical_record(const std::string& object_id, const Proposal& proposal,
                      const std::vector<CameraFrame>& trajectory);

}  // namespace canon9d
