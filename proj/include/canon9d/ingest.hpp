#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "canon9d/core.hpp"

namespace canon9d {

namespace fs = std::filesystem;

enum class ObjectStatus { Pending, Accepted, Skipped, Filtered };
enum class Verdict { Accept, Skip, Filter };
enum class PoseSource { Manual, Propagated };

std::string_view to_string(ObjectStatus s);
std::string_view to_string(Verdict v);
std::string_view to_string(PoseSource s);
ObjectStatus parse_status(std::string_view text);  // UnknownStatus
Verdict parse_verdict(std::string_view text);      // UnknownStatus
ObjectStatus status_after(Verdict v);

struct ObjectRecord {
  std::string object_id;
  fs::path surface_path;
  fs::path camera_path;     // empty when absent
  fs::path embedding_path;  // per-frame image features; empty when absent
  std::string category_hint;
  ObjectStatus status = ObjectStatus::Pending;
};

struct CameraFrame {
  std::int64_t frame_id = 0;
  Sim3 world_to_camera;  // scale fixed to 1
};

struct PoseRecord {
  std::string object_id;
  Box9D pose;  // canonical frame expressed in the object's reconstruction frame
  PoseSource source = PoseSource::Manual;
  std::string annotator_id;
  std::string reviewer_id;
  bool cross_verified = false;
};

// ---------------------------------------------------------------------------
// FPC binary format (little-endian):
//   "FPC1" | u32 N | u32 D | N*3 f32 vertices | N u16 feature counts | f32 features

std::string encode_fpc(const FeaturedSurface& surface);
FeaturedSurface decode_fpc(std::string_view bytes);
void write_fpc(const FeaturedSurface& surface, const fs::path& path);
FeaturedSurface read_fpc(const fs::path& path);

// ---------------------------------------------------------------------------
// Manifest: JSON lines, one object per line:
//   {"id": "...", "surface": "a.fpc", "cameras": "a.json", "embedding": "a.emb.json",
//    "category": "...", "status": "Pending"}
// Relative paths resolve against the manifest's directory. '#' lines and blank
// lines are ignored.

std::vector<ObjectRecord> load_manifest(const fs::path& path);
void save_manifest(const std::vector<ObjectRecord>& records, const fs::path& path);

// ---------------------------------------------------------------------------
// Verdict ledger: append-only, one tab-separated line per verdict:
//   timestamp  iteration  object_id  verdict  reviewer_id

struct LedgerEntry {
  std::string timestamp;
  int iteration = 1;
  std::string object_id;
  Verdict verdict = Verdict::Accept;
  std::string reviewer_id;
};

std::string format_ledger_line(const LedgerEntry& e);
/// Parses ledger text. A trailing line without newline is an interrupted write and is dropped.
std::vector<LedgerEntry> parse_ledger(std::string_view text);
std::vector<LedgerEntry> read_ledger(const fs::path& path);

/// Final status per object: manifest status, then every ledger verdict in order
/// (last wins; Filtered is terminal). Throws UnknownObject / IllegalTransition.
std::map<std::string, ObjectStatus> replay_ledger(const std::vector<ObjectRecord>& manifest,
                                                  const std::vector<LedgerEntry>& entries);

/// Single-writer ledger handle. Replays the existing file on open and rejects
/// verdicts that the replay would refuse.
class Ledger {
 public:
  Ledger(fs::path path, const std::vector<ObjectRecord>& manifest);

  void append(const LedgerEntry& entry);
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  const std::map<std::string, ObjectStatus>& statuses() const { return statuses_; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::vector<LedgerEntry> entries_;
  std::map<std::string, ObjectStatus> statuses_;
};

void append_verdict(const fs::path& ledger_path, const std::vector<ObjectRecord>& manifest,
                    const std::string& object_id, Verdict verdict, const std::string& reviewer_id,
                    const std::string& timestamp, int iteration = 1);

std::string utc_timestamp();

struct VerdictCounts {
  std::size_t accepted = 0;
  std::size_t skipped = 0;
  std::size_t filtered = 0;
  std::size_t pending = 0;

  std::size_t total() const { return accepted + skipped + filtered + pending; }
  double percent(std::size_t n) const { return total() == 0 ? 0.0 : 100.0 * double(n) / double(total()); }
};

struct VerdictSummary {
  std::map<int, VerdictCounts> per_iteration;  // objects judged within each iteration
  VerdictCounts overall;                       // final statuses over the manifest
  double accept_fraction() const {
    return overall.total() == 0 ? 0.0 : double(overall.accepted) / double(overall.total());
  }
};

VerdictSummary summarize_ledger(const std::vector<ObjectRecord>& manifest,
                                const std::vector<LedgerEntry>& entries);

// ---------------------------------------------------------------------------
// Camera trajectories: JSON array; each element is either
//   {"frame_id": 3, "world_to_camera": [12 floats, row-major R | t]}
// or a bare array of 12 floats (frame id = position).

std::vector<CameraFrame> read_trajectory(const fs::path& path);
void write_trajectory(const std::vector<CameraFrame>& frames, const fs::path& path);

// ---------------------------------------------------------------------------
// Per-video frame features for embedding aggregation: JSON array of arrays.

std::vector<Eigen::VectorXd> read_frame_features(const fs::path& path);
void write_frame_features(const std::vector<Eigen::VectorXd>& frames, const fs::path& path);

// ---------------------------------------------------------------------------
// Pose store: JSON lines of PoseRecords; the last record for an object wins.

void append_pose_record(const fs::path& path, const PoseRecord& record);
std::map<std::string, PoseRecord> load_pose_records(const fs::path& path);

}  // namespace canon9d
