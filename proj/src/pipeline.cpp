#include "canon9d/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <thread>

#include "canon9d/cluster.hpp"

namespace canon9d {

// ---------------------------------------------------------------------------
// Serialization

void to_json(json& j, const PipelineConfig& c) {
  const AlignConfig& a = c.align;
  j = json{{"seed", c.seed},
           {"k", c.k},
           {"max_iterations", c.max_iterations},
           {"kmeans_max_iters", c.kmeans_max_iters},
           {"embedding_frames", c.embedding_frames},
           {"box_quantile", c.box_quantile},
           {"auto_verify", c.auto_verify},
           {"auto_verify_threshold", c.auto_verify_threshold},
           {"auto_reviewer", c.auto_reviewer},
           {"threads", c.threads},
           {"align",
            {{"alpha", a.alpha},
             {"ransac_iters", a.ransac_iters},
             {"inlier_threshold", a.inlier_threshold},
             {"refine_max_iters", a.refine_max_iters},
             {"refine_tol", a.refine_tol},
             {"cycle_tau", a.cycle_tau},
             {"initial_step", a.initial_step},
             {"backtrack_factor", a.backtrack_factor},
             {"max_backtracks", a.max_backtracks},
             {"stall_iterations", a.stall_iterations},
             {"max_step", a.max_step},
             {"min_scale", a.min_scale},
             {"max_scale", a.max_scale},
             {"max_vertices", a.max_vertices}}}};
}

void from_json(const json& j, PipelineConfig& c) {
  const PipelineConfig d;
  c.seed = j.value("seed", d.seed);
  c.k = j.value("k", d.k);
  c.max_iterations = j.value("max_iterations", d.max_iterations);
  c.kmeans_max_iters = j.value("kmeans_max_iters", d.kmeans_max_iters);
  c.embedding_frames = j.value("embedding_frames", d.embedding_frames);
  c.box_quantile = j.value("box_quantile", d.box_quantile);
  c.auto_verify = j.value("auto_verify", d.auto_verify);
  c.auto_verify_threshold = j.value("auto_verify_threshold", d.auto_verify_threshold);
  c.auto_reviewer = j.value("auto_reviewer", d.auto_reviewer);
  c.threads = j.value("threads", d.threads);
  const json a = j.value("align", json::object());
  AlignConfig& x = c.align;
  x.alpha = a.value("alpha", x.alpha);
  x.ransac_iters = a.value("ransac_iters", x.ransac_iters);
  x.inlier_threshold = a.value("inlier_threshold", x.inlier_threshold);
  x.refine_max_iters = a.value("refine_max_iters", x.refine_max_iters);
  x.refine_tol = a.value("refine_tol", x.refine_tol);
  x.cycle_tau = a.value("cycle_tau", x.cycle_tau);
  x.initial_step = a.value("initial_step", x.initial_step);
  x.backtrack_factor = a.value("backtrack_factor", x.backtrack_factor);
  x.max_backtracks = a.value("max_backtracks", x.max_backtracks);
  x.stall_iterations = a.value("stall_iterations", x.stall_iterations);
  x.max_step = a.value("max_step", x.max_step);
  x.min_scale = a.value("min_scale", x.min_scale);
  x.max_scale = a.value("max_scale", x.max_scale);
  x.max_vertices = a.value("max_vertices", x.max_vertices);
  check_valid(c.align);
  if (c.max_iterations < 1) throw Error(Errc::InvalidArgument, "max_iterations must be positive");
  if (c.k < 0) throw Error(Errc::InvalidArgument, "k must be non-negative");
  if (!(c.box_quantile >= 0.0 && c.box_quantile < 0.5)) throw Error(Errc::InvalidArgument, "box_quantile");
}

namespace {

json canonical_to_json(const CanonicalPose& c) {
  return json{{"world_to_canonical", c.world_to_canonical}, {"box", c.box}};
}

CanonicalPose canonical_from_json(const json& j) {
  return {j.at("world_to_canonical").get<Sim3>(), j.at("box").get<Box9D>()};
}

}  // namespace

void to_json(json& j, const PipelineState& s) {
  json statuses = json::object();
  for (const auto& [id, st] : s.statuses) statuses[id] = std::string(to_string(st));
  json clusters = json::array();
  for (const auto& c : s.clusters) {
    json proposals = json::object();
    for (const auto& [id, p] : c.proposals) {
      proposals[id] = {{"transform", p.transform}, {"score", p.score}, {"canonical", canonical_to_json(p.canonical)}};
    }
    clusters.push_back({{"index", c.index},
                        {"medoid", c.medoid},
                        {"members", c.members},
                        {"reference", c.reference ? json(*c.reference) : json(nullptr)},
                        {"aligned", c.aligned},
                        {"proposals", proposals},
                        {"failures", c.failures}});
  }
  j = json{{"iteration", s.iteration}, {"seed", s.seed},     {"clustered", s.clustered},
           {"finished", s.finished},   {"statuses", statuses}, {"clusters", clusters}};
}

void from_json(const json& j, PipelineState& s) {
  s = {};
  s.iteration = j.at("iteration").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.clustered = j.at("clustered").get<bool>();
  s.finished = j.at("finished").get<bool>();
  for (const auto& [id, st] : j.at("statuses").items()) s.statuses[id] = parse_status(st.get<std::string>());
  for (const auto& c : j.at("clusters")) {
    ClusterState cs;
    cs.index = c.at("index").get<int>();
    cs.medoid = c.at("medoid").get<std::string>();
    cs.members = c.at("members").get<std::vector<std::string>>();
    if (!c.at("reference").is_null()) cs.reference = c.at("reference").get<Box9D>();
    cs.aligned = c.at("aligned").get<bool>();
    for (const auto& [id, p] : c.at("proposals").items()) {
      cs.proposals[id] = {p.at("transform").get<Sim3>(), p.at("score").get<double>(),
                          canonical_from_json(p.at("canonical"))};
    }
    cs.failures = c.at("failures").get<std::map<std::string, std::string>>();
    s.clusters.push_back(std::move(cs));
  }
}

std::uint64_t derive_seed(std::uint64_t seed, int iteration, const std::string& object_id) {
  // FNV-1a over the inputs, finished with a splitmix64 round.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ull;
  };
  for (int b = 0; b < 8; ++b) {
    const unsigned char byte = static_cast<unsigned char>(seed >> (8 * b));
    mix(&byte, 1);
  }
  for (int b = 0; b < 4; ++b) {
    const unsigned char byte = static_cast<unsigned char>(static_cast<std::uint32_t>(iteration) >> (8 * b));
    mix(&byte, 1);
  }
  mix(object_id.data(), object_id.size());
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

json canonical_record(const std::string& object_id, const Proposal& proposal,
                      const std::vector<CameraFrame>& trajectory) {
  json frames = json::array();
  const auto poses = propagate(proposal.canonical, trajectory);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    frames.push_back({{"frame_id", trajectory[i].frame_id}, {"pose", pose_to_array(poses[i])}});
  }
  return json{{"object_id", object_id},
              {"transform_to_reference", proposal.transform},
              {"score", proposal.score},
              {"world_to_canonical", proposal.canonical.world_to_canonical},
              {"box", proposal.canonical.box},
              {"world_pose", world_pose(proposal.canonical)},
              {"frames", frames}};
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(fs::path dir, fs::path manifest_path, PipelineConfig config)
    : dir_(std::move(dir)), manifest_path_(std::move(manifest_path)), config_(std::move(config)) {
  manifest_ = load_manifest(manifest_path_);
  for (std::size_t i = 0; i < manifest_.size(); ++i) index_[manifest_[i].object_id] = i;
}

Pipeline::Pipeline(Pipeline&& other) noexcept = default;

Pipeline Pipeline::create(const fs::path& state_dir, const fs::path& manifest, const PipelineConfig& config) {
  if (fs::exists(state_dir / "pipeline.json")) {
    throw Error(Errc::InvalidArgument, state_dir.string() + " already holds a pipeline; resume it instead");
  }
  check_valid(config.align);
  fs::create_directories(state_dir / "canonical");
  Pipeline p(state_dir, fs::absolute(manifest), config);
  write_json(state_dir / "pipeline.json", json{{"manifest", p.manifest_path_.string()}, {"config", config}});
  p.state_.seed = config.seed;
  p.refresh_statuses();
  p.persist();
  return p;
}

Pipeline Pipeline::open(const fs::path& state_dir) {
  const json meta = read_json(state_dir / "pipeline.json");
  Pipeline p(state_dir, meta.at("manifest").get<std::string>(), meta.at("config").get<PipelineConfig>());
  if (fs::exists(p.state_path())) p.state_ = read_json(p.state_path()).get<PipelineState>();
  p.state_.seed = p.config_.seed;
  // The ledger may have advanced while no process held the state.
  p.refresh_statuses();
  p.sync_canonical_files();
  p.persist();
  return p;
}

const ObjectRecord& Pipeline::record(const std::string& object_id) const {
  const auto it = index_.find(object_id);
  if (it == index_.end()) throw Error(Errc::UnknownObject, "unknown object '" + object_id + "'");
  return manifest_[it->second];
}

FeaturedSurface Pipeline::load_surface(const std::string& object_id) const {
  return read_fpc(record(object_id).surface_path);
}

PipelineState Pipeline::state() const {
  std::lock_guard lock(*mutex_);
  return state_;
}

std::map<std::string, PoseRecord> Pipeline::pose_records() const { return load_pose_records(poses_path()); }

VerdictSummary Pipeline::summarize() const {
  std::lock_guard lock(*mutex_);
  return summarize_ledger(manifest_, read_ledger(ledger_path()));
}

const Proposal* Pipeline::find_proposal(const std::string& id) const {
  for (const auto& c : state_.clusters) {
    const auto it = c.proposals.find(id);
    if (it != c.proposals.end()) return &it->second;
  }
  return nullptr;
}

std::optional<CanonicalPose> Pipeline::current_canonical(const std::string& object_id) const {
  std::lock_guard lock(*mutex_);
  record(object_id);
  const fs::path file = canonical_path(object_id);
  if (fs::exists(file)) return canonical_from_json(read_json(file));
  if (const Proposal* p = find_proposal(object_id)) return p->canonical;
  return std::nullopt;
}

std::optional<Box9D> Pipeline::current_pose(const std::string& object_id) const {
  if (auto c = current_canonical(object_id)) return world_pose(*c);
  const auto poses = pose_records();
  const auto it = poses.find(object_id);
  if (it != poses.end()) return it->second.pose;
  return std::nullopt;
}

void Pipeline::refresh_statuses() {
  std::vector<LedgerEntry> entries;
  for (auto& e : read_ledger(ledger_path())) {
    if (e.iteration <= state_.iteration) entries.push_back(std::move(e));
  }
  auto statuses = replay_ledger(manifest_, entries);

  // Objects skipped in an earlier iteration are queued again.
  std::map<std::string, int> last_iteration;
  for (const auto& e : entries) last_iteration[e.object_id] = e.iteration;
  for (auto& [id, st] : statuses) {
    const auto it = last_iteration.find(id);
    if (st == ObjectStatus::Skipped && (it == last_iteration.end() || it->second < state_.iteration)) {
      st = ObjectStatus::Pending;
    }
  }
  // A filtered reference voids its cluster's proposals.
  for (const auto& c : state_.clusters) {
    if (statuses.at(c.medoid) != ObjectStatus::Filtered) continue;
    for (const auto& m : c.members) {
      auto& st = statuses.at(m);
      if (st == ObjectStatus::Pending || st == ObjectStatus::Accepted) st = ObjectStatus::Skipped;
    }
  }
  state_.statuses = std::move(statuses);
}

std::vector<std::string> Pipeline::queued_objects() const {
  std::vector<LedgerEntry> earlier;
  for (auto& e : read_ledger(ledger_path())) {
    if (e.iteration < state_.iteration) earlier.push_back(std::move(e));
  }
  std::vector<std::string> out;
  for (const auto& [id, st] : replay_ledger(manifest_, earlier)) {
    if (st == ObjectStatus::Pending || st == ObjectStatus::Skipped) out.push_back(id);
  }
  return out;
}

void Pipeline::open_iteration() {
  std::vector<ObjectEmbedding> embeddings;
  for (const auto& id : queued_objects()) {
    const ObjectRecord& r = record(id);
    Eigen::VectorXd v;
    if (!r.embedding_path.empty()) {
      auto frames = read_frame_features(r.embedding_path);
      // Uniformly spaced subset of the available frames.
      const std::size_t n = frames.size();
      const std::size_t m = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, config_.embedding_frames)));
      std::vector<Eigen::VectorXd> chosen;
      for (std::size_t i = 0; i < m; ++i) chosen.push_back(frames[i * n / m]);
      v = aggregate_embedding(chosen);
    } else {
      v = surface_embedding(load_surface(id));
    }
    embeddings.push_back({id, std::move(v)});
  }
  if (embeddings.empty()) throw Error(Errc::EmptyPending, "no pending objects to cluster");

  const int n = static_cast<int>(embeddings.size());
  const int k = config_.k > 0 ? std::min(config_.k, n) : default_cluster_count(embeddings.size());
  const Clustering clustering =
      kmeans_cosine(embeddings, k, derive_seed(config_.seed, state_.iteration, "#kmeans"), config_.kmeans_max_iters);

  std::map<std::string, const ObjectEmbedding*> by_id;
  for (const auto& e : embeddings) by_id[e.object_id] = &e;
  state_.clusters.clear();
  const auto groups = clustering.members();
  for (std::size_t c = 0; c < groups.size(); ++c) {
    ClusterState cs;
    cs.index = static_cast<int>(c);
    cs.members = groups[c];
    std::vector<ObjectEmbedding> member_embeddings;
    for (const auto& id : cs.members) member_embeddings.push_back(*by_id.at(id));
    cs.medoid = medoid(member_embeddings);
    state_.clusters.push_back(std::move(cs));
  }
  state_.clustered = true;
}

std::size_t Pipeline::align_ready_clusters() {
  const auto poses = pose_records();
  struct Task {
    std::size_t cluster;
    std::string member;
  };
  std::vector<Task> tasks;
  std::map<std::size_t, FeaturedSurface> references;
  for (std::size_t c = 0; c < state_.clusters.size(); ++c) {
    ClusterState& cs = state_.clusters[c];
    if (cs.aligned || state_.statuses.at(cs.medoid) == ObjectStatus::Filtered) continue;
    const auto it = poses.find(cs.medoid);
    if (it == poses.end() || !it->second.cross_verified) continue;
    cs.reference = it->second.pose;
    references.emplace(c, load_surface(cs.medoid));
    for (const auto& m : cs.members) tasks.push_back({c, m});
  }
  if (references.empty()) return 0;

  struct Outcome {
    std::optional<Proposal> proposal;
    std::string error;
  };
  std::vector<Outcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& t = tasks[i];
      const ClusterState& cs = state_.clusters[t.cluster];
      try {
        const FeaturedSurface member = load_surface(t.member);
        Proposal p;
        if (t.member == cs.medoid) {
          p.transform = Sim3::Identity();
          p.score = 0.0;
        } else {
          const AlignResult r = align(member, references.at(t.cluster), config_.align,
                                      derive_seed(config_.seed, state_.iteration, t.member));
          p.transform = r.transform;
          p.score = r.score;
        }
        p.canonical = make_canonical_pose(member.points(), p.transform, *cs.reference, config_.box_quantile);
        outcomes[i].proposal = std::move(p);
      } catch (const Error& e) {
        outcomes[i].error = e.what();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_threads =
      std::min<std::size_t>(tasks.size(), config_.threads > 0 ? static_cast<std::size_t>(config_.threads) : hw);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    ClusterState& cs = state_.clusters[tasks[i].cluster];
    if (outcomes[i].proposal) {
      cs.proposals[tasks[i].member] = std::move(*outcomes[i].proposal);
    } else {
      cs.failures[tasks[i].member] = outcomes[i].error;
    }
  }
  for (const auto& [c, surface] : references) state_.clusters[c].aligned = true;
  return tasks.size();
}

void Pipeline::auto_verify() {
  if (!config_.auto_verify) return;
  Ledger ledger(ledger_path(), manifest_);
  const std::string stamp = utc_timestamp();
  for (const auto& cs : state_.clusters) {
    if (!cs.aligned) continue;
    for (const auto& m : cs.members) {
      if (state_.statuses.at(m) != ObjectStatus::Pending) continue;
      const auto p = cs.proposals.find(m);
      const bool accept =
          p != cs.proposals.end() && (m == cs.medoid || p->second.score < config_.auto_verify_threshold);
      ledger.append({stamp, state_.iteration, m, accept ? Verdict::Accept : Verdict::Skip, config_.auto_reviewer});
    }
  }
}

void Pipeline::sync_canonical_files() const {
  fs::create_directories(dir_ / "canonical");
  for (const auto& [id, st] : state_.statuses) {
    const fs::path file = canonical_path(id);
    if (st != ObjectStatus::Accepted) {
      if (fs::exists(file)) fs::remove(file);
      continue;
    }
    if (fs::exists(file)) continue;
    const Proposal* p = find_proposal(id);
    if (p == nullptr) continue;
    check_valid(p->canonical.world_to_canonical, "canonical transform");
    const ObjectRecord& r = record(id);
    const auto trajectory = r.camera_path.empty() ? std::vector<CameraFrame>{} : read_trajectory(r.camera_path);
    write_json(file, canonical_record(id, *p, trajectory));
  }
}

bool Pipeline::iteration_complete() const {
  if (!state_.clustered) return false;
  for (const auto& cs : state_.clusters) {
    const bool void_reference = state_.statuses.at(cs.medoid) == ObjectStatus::Filtered;
    if (!cs.aligned && !void_reference) return false;
    for (const auto& m : cs.members) {
      if (state_.statuses.at(m) == ObjectStatus::Pending) return false;
    }
  }
  return true;
}

void Pipeline::persist() const { write_json(state_path(), state_); }

StepReport Pipeline::report() const {
  StepReport r;
  r.iteration = state_.iteration;
  r.finished = state_.finished;
  for (const auto& cs : state_.clusters) {
    const auto medoid_status = state_.statuses.at(cs.medoid);
    if (!cs.aligned && medoid_status != ObjectStatus::Filtered) r.awaiting_annotation.push_back(cs.medoid);
    for (const auto& [id, p] : cs.proposals) {
      if (state_.statuses.at(id) == ObjectStatus::Pending) r.awaiting_verification.push_back(id);
    }
  }
  return r;
}

StepReport Pipeline::step() {
  std::lock_guard lock(*mutex_);
  if (state_.finished) return report();
  if (!state_.clustered) {
    refresh_statuses();
    open_iteration();  // throws EmptyPending before anything is modified on disk
    persist();
  }
  std::size_t aligned = 0;
  while (true) {
    aligned += align_ready_clusters();
    persist();
    auto_verify();
    refresh_statuses();
    sync_canonical_files();
    if (!iteration_complete()) break;
    if (state_.iteration >= config_.max_iterations) {
      state_.finished = true;
      break;
    }
    ++state_.iteration;
    state_.clusters.clear();
    state_.clustered = false;
    refresh_statuses();
    if (queued_objects().empty()) {
      --state_.iteration;
      refresh_statuses();
      state_.finished = true;
      break;
    }
    open_iteration();
    persist();
  }
  persist();
  StepReport r = report();
  r.aligned = aligned;
  return r;
}

void Pipeline::submit_pose(PoseRecord rec) {
  std::lock_guard lock(*mutex_);
  const ObjectRecord& r = record(rec.object_id);
  if (state_.statuses.at(rec.object_id) == ObjectStatus::Filtered) {
    throw Error(Errc::IllegalTransition, "'" + rec.object_id + "' is Filtered");
  }
  if (!is_rotation(rec.pose.rotation)) throw Error(Errc::InvalidArgument, "pose rotation is not orthonormal");
  if (!rec.pose.translation.allFinite()) throw Error(Errc::InvalidArgument, "pose translation is not finite");
  if (rec.cross_verified && (rec.reviewer_id.empty() || rec.reviewer_id == rec.annotator_id)) {
    throw Error(Errc::InvalidArgument, "cross verification needs a reviewer other than the annotator");
  }
  rec.pose.rotation = nearest_rotation(rec.pose.rotation);
  if (!(rec.pose.extents.array() > 0.0).all()) {
    rec.pose = annotate_reference(read_fpc(r.surface_path).points(), rec.pose.rotation, rec.pose.translation,
                                  config_.box_quantile);
  }
  rec.source = PoseSource::Manual;
  append_pose_record(poses_path(), rec);
  persist();
}

void Pipeline::submit_verdict(const std::string& object_id, Verdict verdict, const std::string& reviewer_id) {
  std::lock_guard lock(*mutex_);
  record(object_id);
  const ObjectStatus st = state_.statuses.at(object_id);
  if (st == ObjectStatus::Filtered) {
    throw Error(Errc::IllegalTransition, "'" + object_id + "' is Filtered; verdict " +
                                             std::string(to_string(verdict)) + " rejected");
  }
  if (verdict == Verdict::Accept && find_proposal(object_id) == nullptr) {
    throw Error(Errc::IllegalTransition, "'" + object_id + "' has no proposed pose to accept");
  }
  Ledger ledger(ledger_path(), manifest_);
  ledger.append({utc_timestamp(), state_.iteration, object_id, verdict, reviewer_id});
  refresh_statuses();
  sync_canonical_files();
  persist();
}

}  // namespace canon9d
