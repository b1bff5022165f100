#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "canon9d/core.hpp"
#include "canon9d/ingest.hpp"

namespace canon9d {

using json = nlohmann::json;

// Sim3  <-> {"matrix": [12 floats, row-major R | t], "scale": s}
// Box9D <-> {"rotation": [9], "translation": [3], "extents": [3]}
void to_json(json& j, const Sim3& t);
void from_json(const json& j, Sim3& t);
void to_json(json& j, const Box9D& p);
void from_json(const json& j, Box9D& p);
void to_json(json& j, const PoseRecord& r);
void from_json(const json& j, PoseRecord& r);

json matrix_to_json(const Matrix3& m);  // 9 floats, row-major
Matrix3 matrix_from_json(const json& j);
json vector_to_json(const Vector3& v);
Vector3 vector_from_json(const json& j);

/// Per-frame pose as 15 floats: rotation (row-major) | translation | extents.
json pose_to_array(const Box9D& p);
Box9D pose_from_array(const json& j);

json read_json(const std::filesystem::path& path);
/// Writes through a temporary file and rename so readers never see partial output.
void write_json(const std::filesystem::path& path, const json& j, int indent = 2);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace canon9d
