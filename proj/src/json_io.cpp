#include "canon9d/json_io.hpp"

#include <fstream>
#include <sstream>

namespace canon9d {

namespace {

std::vector<double> doubles(const json& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n) {
    throw Error(Errc::ParseError, std::string(what) + ": expected array of " + std::to_string(n));
  }
  std::vector<double> out;
  out.reserve(n);
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(Errc::ParseError, std::string(what) + ": non-numeric entry");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

json matrix_to_json(const Matrix3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

Matrix3 matrix_from_json(const json& j) {
  const auto v = doubles(j, 9, "rotation");
  Matrix3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = v[3 * r + c];
  return m;
}

json vector_to_json(const Vector3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vector3 vector_from_json(const json& j) {
  const auto v = doubles(j, 3, "vector");
  return {v[0], v[1], v[2]};
}

void to_json(json& j, const Sim3& t) {
  json m = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m.push_back(t.rotation(r, c));
    m.push_back(t.translation(r));
  }
  j = json{{"matrix", m}, {"scale", t.scale}};
}

void from_json(const json& j, Sim3& t) {
  if (!j.is_object() || !j.contains("matrix")) throw Error(Errc::ParseError, "transform: missing 'matrix'");
  const auto m = doubles(j.at("matrix"), 12, "transform matrix");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = m[4 * r + c];
    t.translation(r) = m[4 * r + 3];
  }
  t.scale = j.value("scale", 1.0);
}

void to_json(json& j, const Box9D& p) {
  j = json{{"rotation", matrix_to_json(p.rotation)},
           {"translation", vector_to_json(p.translation)},
           {"extents", vector_to_json(p.extents)}};
}

void from_json(const json& j, Box9D& p) {
  if (!j.is_object()) throw Error(Errc::ParseError, "pose: expected object");
  p.rotation = matrix_from_json(j.at("rotation"));
  p.translation = vector_from_json(j.at("translation"));
  p.extents = vector_from_json(j.at("extents"));
}

void to_json(json& j, const PoseRecord& r) {
  j = json{{"object_id", r.object_id},
           {"pose", r.pose},
           {"source", std::string(to_string(r.source))},
           {"annotator_id", r.annotator_id},
           {"reviewer_id", r.reviewer_id},
           {"cross_verified", r.cross_verified}};
}

void from_json(const json& j, PoseRecord& r) {
  r.object_id = j.at("object_id").get<std::string>();
  r.pose = j.at("pose").get<Box9D>();
  const auto source = j.value("source", std::string("Manual"));
  if (source == "Manual") {
    r.source = PoseSource::Manual;
  } else if (source == "Propagated") {
    r.source = PoseSource::Propagated;
  } else {
    throw Error(Errc::ParseError, "unknown pose source '" + source + "'");
  }
  r.annotator_id = j.value("annotator_id", std::string());
  r.reviewer_id = j.value("reviewer_id", std::string());
  r.cross_verified = j.value("cross_verified", false);
}

json pose_to_array(const Box9D& p) {
  json a = matrix_to_json(p.rotation);
  for (int i = 0; i < 3; ++i) a.push_back(p.translation(i));
  for (int i = 0; i < 3; ++i) a.push_back(p.extents(i));
  return a;
}

Box9D pose_from_array(const json& j) {
  const auto v = doubles(j, 15, "pose array");
  Box9D p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[3 * r + c];
  p.translation = Vector3(v[9], v[10], v[11]);
  p.extents = Vector3(v[12], v[13], v[14]);
  return p;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error(Errc::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_json(const std::filesystem::path& path, const json& j, int indent) {
  write_text_atomic(path, j.dump(indent) + "\n");
}

}  // namespace canon9d
