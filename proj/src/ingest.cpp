#include "canon9d/ingest.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "canon9d/json_io.hpp"

namespace canon9d {

std::string_view to_string(ObjectStatus s) {
  switch (s) {
    case ObjectStatus::Pending: return "Pending";
    case ObjectStatus::Accepted: return "Accepted";
    case ObjectStatus::Skipped: return "Skipped";
    case ObjectStatus::Filtered: return "Filtered";
  }
  return "?";
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Accept: return "Accept";
    case Verdict::Skip: return "Skip";
    case Verdict::Filter: return "Filter";
  }
  return "?";
}

std::string_view to_string(PoseSource s) {
  return s == PoseSource::Manual ? "Manual" : "Propagated";
}

ObjectStatus parse_status(std::string_view text) {
  if (text == "Pending") return ObjectStatus::Pending;
  if (text == "Accepted") return ObjectStatus::Accepted;
  if (text == "Skipped") return ObjectStatus::Skipped;
  if (text == "Filtered") return ObjectStatus::Filtered;
  throw Error(Errc::UnknownStatus, "unknown status '" + std::string(text) + "'");
}

Verdict parse_verdict(std::string_view text) {
  if (text == "Accept") return Verdict::Accept;
  if (text == "Skip") return Verdict::Skip;
  if (text == "Filter") return Verdict::Filter;
  throw Error(Errc::UnknownStatus, "unknown verdict '" + std::string(text) + "'");
}

ObjectStatus status_after(Verdict v) {
  switch (v) {
    case Verdict::Accept: return ObjectStatus::Accepted;
    case Verdict::Skip: return ObjectStatus::Skipped;
    case Verdict::Filter: return ObjectStatus::Filtered;
  }
  return ObjectStatus::Pending;
}

// ---------------------------------------------------------------------------
// FPC

namespace {

constexpr char kMagic[4] = {'F', 'P', 'C', '1'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

std::string encode_fpc(const FeaturedSurface& surface) {
  check_valid(surface);
  const auto n = static_cast<std::uint32_t>(surface.vertex_count());
  std::string out;
  out.reserve(12 + 12 * std::size_t(n) + 2 * std::size_t(n) + 4 * std::size_t(surface.features.size()));
  out.append(kMagic, 4);
  put<std::uint32_t>(out, n);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(surface.feature_dim));
  for (std::uint32_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) put<float>(out, surface.vertices(k, i));
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto c = surface.feature_count(i);
    if (c > 0xFFFF) throw Error(Errc::DimensionMismatch, "more than 65535 features on one vertex");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(c));
  }
  for (Eigen::Index c = 0; c < surface.features.cols(); ++c)
    for (int d = 0; d < surface.feature_dim; ++d) put<float>(out, surface.features(d, c));
  return out;
}

FeaturedSurface decode_fpc(std::string_view bytes) {
  if (bytes.size() < 4) throw Error(Errc::TruncatedFile, "file shorter than magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(Errc::BadMagic, "expected 'FPC1'");
  if (bytes.size() < 12) throw Error(Errc::TruncatedFile, "header truncated");
  const auto n = get<std::uint32_t>(bytes.data() + 4);
  const auto dim = get<std::uint32_t>(bytes.data() + 8);
  if (dim == 0) throw Error(Errc::DimensionMismatch, "feature dimension is zero");

  std::uint64_t pos = 12;
  const std::uint64_t vertex_bytes = 12ull * n;
  const std::uint64_t count_bytes = 2ull * n;
  if (bytes.size() < pos + vertex_bytes + count_bytes) throw Error(Errc::TruncatedFile, "vertex block truncated");

  FeaturedSurface s;
  s.feature_dim = static_cast<int>(dim);
  s.vertices.resize(3, n);
  for (std::uint32_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) s.vertices(k, i) = get<float>(bytes.data() + pos + 12ull * i + 4ull * k);
  pos += vertex_bytes;

  s.offsets.assign(std::size_t(n) + 1, 0);
  for (std::uint32_t i = 0; i < n; ++i)
    s.offsets[i + 1] = s.offsets[i] + get<std::uint16_t>(bytes.data() + pos + 2ull * i);
  pos += count_bytes;

  const std::uint64_t total = s.offsets.back();
  const std::uint64_t feature_bytes = 4ull * total * dim;
  if (bytes.size() < pos + feature_bytes) throw Error(Errc::TruncatedFile, "feature block truncated");
  if (bytes.size() > pos + feature_bytes) {
    throw Error(Errc::DimensionMismatch, "feature block longer than counts x dimension");
  }
  s.features.resize(dim, static_cast<Eigen::Index>(total));
  for (std::uint64_t c = 0; c < total; ++c)
    for (std::uint32_t d = 0; d < dim; ++d)
      s.features(d, c) = get<float>(bytes.data() + pos + 4ull * (c * dim + d));

  // Unit norm is enforced on load; bytes of already-normalised features are untouched.
  for (Eigen::Index c = 0; c < s.features.cols(); ++c) {
    const float norm = s.features.col(c).norm();
    if (!std::isfinite(norm) || norm == 0.0f) {
      throw Error(Errc::InvalidFeature, "feature " + std::to_string(c) + " has zero or non-finite norm");
    }
    if (std::abs(norm - 1.0f) > 1e-4f) {
      if (std::abs(norm - 1.0f) > 1e-3f) {
        std::clog << "[canon9d] warning: feature " << c << " norm " << norm << " renormalized\n";
      }
      s.features.col(c) /= norm;
    }
  }
  return s;
}

void write_fpc(const FeaturedSurface& surface, const fs::path& path) {
  const std::string bytes = encode_fpc(surface);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

FeaturedSurface read_fpc(const fs::path& path) {
  try {
    return decode_fpc(read_text(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.find_first_of("\t\n\r/") == std::string::npos;
}

}  // namespace

std::vector<ObjectRecord> load_manifest(const fs::path& path) {
  std::istringstream in(read_text(path));
  const fs::path base = path.parent_path();
  std::vector<ObjectRecord> records;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("surface")) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(lineno) + ": needs 'id' and 'surface'");
    }
    ObjectRecord r;
    r.object_id = j.at("id").get<std::string>();
    if (!valid_id(r.object_id)) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(lineno) + ": invalid object id");
    }
    if (!seen.insert(r.object_id).second) throw Error(Errc::DuplicateId, "duplicate object id '" + r.object_id + "'");
    r.surface_path = resolve(base, j.at("surface").get<std::string>());
    r.camera_path = resolve(base, j.value("cameras", std::string()));
    r.embedding_path = resolve(base, j.value("embedding", std::string()));
    r.category_hint = j.value("category", std::string());
    r.status = parse_status(j.value("status", std::string("Pending")));
    for (const auto* p : {&r.surface_path, &r.camera_path, &r.embedding_path}) {
      if (!p->empty() && !fs::exists(*p)) throw Error(Errc::MissingFile, "'" + r.object_id + "': " + p->string());
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_manifest(const std::vector<ObjectRecord>& records, const fs::path& path) {
  std::string text;
  for (const auto& r : records) {
    json j{{"id", r.object_id}, {"surface", r.surface_path.string()}, {"status", std::string(to_string(r.status))}};
    if (!r.camera_path.empty()) j["cameras"] = r.camera_path.string();
    if (!r.embedding_path.empty()) j["embedding"] = r.embedding_path.string();
    if (!r.category_hint.empty()) j["category"] = r.category_hint;
    text += j.dump() + "\n";
  }
  write_text_atomic(path, text);
}

// ---------------------------------------------------------------------------
// Ledger

std::string format_ledger_line(const LedgerEntry& e) {
  for (const auto* field : {&e.timestamp, &e.object_id, &e.reviewer_id}) {
    if (field->find_first_of("\t\n\r") != std::string::npos) {
      throw Error(Errc::InvalidArgument, "ledger fields may not contain tabs or newlines");
    }
  }
  return e.timestamp + '\t' + std::to_string(e.iteration) + '\t' + e.object_id + '\t' +
         std::string(to_string(e.verdict)) + '\t' + e.reviewer_id + '\n';
}

std::vector<LedgerEntry> parse_ledger(std::string_view text) {
  std::vector<LedgerEntry> entries;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    if (end == std::string_view::npos) break;  // interrupted append
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) {
      throw Error(Errc::ParseError, "ledger line " + std::to_string(lineno) + ": expected 5 fields");
    }
    LedgerEntry e;
    e.timestamp = fields[0];
    try {
      e.iteration = std::stoi(fields[1]);
    } catch (const std::exception&) {
      throw Error(Errc::ParseError, "ledger line " + std::to_string(lineno) + ": bad iteration");
    }
    e.object_id = fields[2];
    e.verdict = parse_verdict(fields[3]);
    e.reviewer_id = fields[4];
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<LedgerEntry> read_ledger(const fs::path& path) {
  if (!fs::exists(path)) return {};
  return parse_ledger(read_text(path));
}

namespace {

void apply_entry(std::map<std::string, ObjectStatus>& statuses, const LedgerEntry& e) {
  auto it = statuses.find(e.object_id);
  if (it == statuses.end()) throw Error(Errc::UnknownObject, "ledger names unknown object '" + e.object_id + "'");
  if (it->second == ObjectStatus::Filtered) {
    throw Error(Errc::IllegalTransition, "'" + e.object_id + "' is Filtered; verdict " +
                                             std::string(to_string(e.verdict)) + " rejected");
  }
  it->second = status_after(e.verdict);
}

std::map<std::string, ObjectStatus> initial_statuses(const std::vector<ObjectRecord>& manifest) {
  std::map<std::string, ObjectStatus> statuses;
  for (const auto& r : manifest) statuses[r.object_id] = r.status;
  return statuses;
}

}  // namespace

std::map<std::string, ObjectStatus> replay_ledger(const std::vector<ObjectRecord>& manifest,
                                                  const std::vector<LedgerEntry>& entries) {
  auto statuses = initial_statuses(manifest);
  for (const auto& e : entries) apply_entry(statuses, e);
  return statuses;
}

Ledger::Ledger(fs::path path, const std::vector<ObjectRecord>& manifest)
    : path_(std::move(path)), entries_(read_ledger(path_)), statuses_(replay_ledger(manifest, entries_)) {}

void Ledger::append(const LedgerEntry& entry) {
  auto next = statuses_;
  apply_entry(next, entry);
  const std::string line = format_ledger_line(entry);
  // Drop any torn tail left by an interrupted write before appending.
  if (fs::exists(path_)) {
    const std::string text = read_text(path_);
    if (!text.empty() && text.back() != '\n') {
      fs::resize_file(path_, text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
    }
  }
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw Error(Errc::Io, "cannot append to " + path_.string());
  out << line;
  out.flush();
  if (!out) throw Error(Errc::Io, "short write to " + path_.string());
  entries_.push_back(entry);
  statuses_ = std::move(next);
}

void append_verdict(const fs::path& ledger_path, const std::vector<ObjectRecord>& manifest,
                    const std::string& object_id, Verdict verdict, const std::string& reviewer_id,
                    const std::string& timestamp, int iteration) {
  Ledger ledger(ledger_path, manifest);
  ledger.append({timestamp, iteration, object_id, verdict, reviewer_id});
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

VerdictSummary summarize_ledger(const std::vector<ObjectRecord>& manifest,
                                const std::vector<LedgerEntry>& entries) {
  VerdictSummary summary;
  std::map<int, std::map<std::string, Verdict>> last_in_iteration;
  for (const auto& e : entries) last_in_iteration[e.iteration][e.object_id] = e.verdict;
  for (const auto& [iteration, verdicts] : last_in_iteration) {
    auto& counts = summary.per_iteration[iteration];
    for (const auto& [id, v] : verdicts) {
      switch (v) {
        case Verdict::Accept: ++counts.accepted; break;
        case Verdict::Skip: ++counts.skipped; break;
        case Verdict::Filter: ++counts.filtered; break;
      }
    }
  }
  for (const auto& [id, status] : replay_ledger(manifest, entries)) {
    switch (status) {
      case ObjectStatus::Accepted: ++summary.overall.accepted; break;
      case ObjectStatus::Skipped: ++summary.overall.skipped; break;
      case ObjectStatus::Filtered: ++summary.overall.filtered; break;
      case ObjectStatus::Pending: ++summary.overall.pending; break;
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Trajectories, frame features, pose store

std::vector<CameraFrame> read_trajectory(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw Error(Errc::ParseError, path.string() + ": trajectory must be an array");
  std::vector<CameraFrame> frames;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& item = j[i];
    CameraFrame f;
    const json* values = &item;
    f.frame_id = static_cast<std::int64_t>(i);
    if (item.is_object()) {
      f.frame_id = item.at("frame_id").get<std::int64_t>();
      values = &item.at("world_to_camera");
    }
    f.world_to_camera = json{{"matrix", *values}}.get<Sim3>();
    // float32 round-off is tolerated; anything larger is a corrupt trajectory.
    if (!is_rotation(f.world_to_camera.rotation, 1e-4)) {
      throw Error(Errc::ParseError, path.string() + ": frame " + std::to_string(f.frame_id) + " rotation not orthonormal");
    }
    f.world_to_camera.rotation = nearest_rotation(f.world_to_camera.rotation);
    if (!frames.empty() && f.frame_id <= frames.back().frame_id) {
      throw Error(Errc::ParseError, path.string() + ": frame ids must be strictly increasing");
    }
    frames.push_back(f);
  }
  return frames;
}

void write_trajectory(const std::vector<CameraFrame>& frames, const fs::path& path) {
  json j = json::array();
  for (const auto& f : frames) {
    j.push_back({{"frame_id", f.frame_id}, {"world_to_camera", json(f.world_to_camera).at("matrix")}});
  }
  write_json(path, j);
}

std::vector<Eigen::VectorXd> read_frame_features(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw Error(Errc::ParseError, path.string() + ": expected array of feature vectors");
  std::vector<Eigen::VectorXd> frames;
  for (const auto& row : j) {
    if (!row.is_array()) throw Error(Errc::ParseError, path.string() + ": feature vector must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
    for (std::size_t k = 0; k < row.size(); ++k) v(static_cast<Eigen::Index>(k)) = row[k].get<double>();
    frames.push_back(std::move(v));
  }
  return frames;
}

void write_frame_features(const std::vector<Eigen::VectorXd>& frames, const fs::path& path) {
  json j = json::array();
  for (const auto& f : frames) j.push_back(std::vector<double>(f.data(), f.data() + f.size()));
  write_json(path, j, -1);
}

void append_pose_record(const fs::path& path, const PoseRecord& record) {
  check_valid(record.pose, "pose record");
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(Errc::Io, "cannot append to " + path.string());
  out << json(record).dump() << '\n';
  out.flush();
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

std::map<std::string, PoseRecord> load_pose_records(const fs::path& path) {
  std::map<std::string, PoseRecord> records;
  if (!fs::exists(path)) return records;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto r = json::parse(line).get<PoseRecord>();
      records[r.object_id] = std::move(r);
    } catch (const json::exception& e) {
      if (in.eof()) break;  // torn final line
      throw Error(Errc::ParseError, path.string() + ": " + e.what());
    }
  }
  return records;
}

}  // namespace canon9d
