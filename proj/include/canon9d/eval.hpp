#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "canon9d/core.hpp"
#include "canon9d/json_io.hpp"

namespace canon9d {

inline constexpr int kContinuousSamples = 720;

// Canonical frame axes: x = LEFT, y = BACK, z = TOP.
enum class SymmetryKind { None, Discrete, Continuous, Full };

std::string_view to_string(SymmetryKind k);

struct SymmetrySpec {
  std::string category;
  SymmetryKind kind = SymmetryKind::None;
  Vector3 axis = Vector3::UnitZ();
  int order = 1;                   // Discrete only
  std::optional<Vector3> flip;     // extra half-turn about an axis perpendicular to `axis`
};

void check_valid(const SymmetrySpec& spec);

enum class SlotKind { Free, Direction, Axis };

struct RuleTriple {
  std::string left = "-";
  std::string back = "-";
  std::string top = "-";
  friend bool operator==(const RuleTriple&, const RuleTriple&) = default;
};

struct RuleGroup {
  RuleTriple rule;
  std::vector<std::string> categories;
};

/// Named orientation rules (direction or axis) plus the category groups that use them.
struct RuleInventory {
  std::map<std::string, SlotKind, std::less<>> rules;
  std::vector<RuleGroup> groups;

  SlotKind slot_kind(std::string_view text) const;  // throws UnknownRule
  std::map<std::string, RuleTriple> category_rules() const;
};

RuleInventory load_rule_inventory(const std::filesystem::path& path);
/// The inventory shipped in the data directory.
const RuleInventory& default_rule_inventory();

/// Parses "LEFT a, BACK b, TOP c".
RuleTriple parse_rule(std::string_view text);

SymmetrySpec compile_rule(const RuleTriple& rule, const RuleInventory& inventory, std::string category = {});
std::map<std::string, SymmetrySpec> compile_symmetry(const std::map<std::string, RuleTriple>& table,
                                                     const RuleInventory& inventory);

/// Group elements acting on the canonical frame. Full returns an empty list.
std::vector<Matrix3> symmetry_rotations(const SymmetrySpec& spec, int continuous_samples = kContinuousSamples);

/// min over g of geodesic_distance(pred, gt * g); zero for Full symmetry.
double sym_error(const Matrix3& pred, const Matrix3& gt, const SymmetrySpec& spec,
                 int continuous_samples = kContinuousSamples);

/// Fraction of errors strictly below the threshold. Throws EmptyInput.
double acc_at(std::span<const double> errors, double threshold);

double box_volume(const Box9D& box);
/// Exact intersection-over-union of two oriented boxes.
double iou3d(const Box9D& a, const Box9D& b);

struct EvalOptions {
  double threshold = deg2rad(30.0);
  int continuous_samples = kContinuousSamples;
  std::size_t min_category_samples = 1;  // categories with fewer ground-truth samples are dropped
};

struct SampleScore {
  std::string id;
  std::string category;
  double error_aware = 0.0;
  double error_unaware = 0.0;
  double iou = 0.0;
  bool missing = false;
};

struct CategoryScore {
  std::size_t samples = 0;
  std::size_t missing = 0;
  double acc_aware = 0.0;
  double acc_unaware = 0.0;
  double mean_iou = 0.0;
};

struct EvalReport {
  double threshold = 0.0;
  std::map<std::string, CategoryScore> categories;
  CategoryScore macro;  // unweighted mean over categories
  std::vector<SampleScore> samples;  // sorted by id
  std::vector<std::string> dropped_categories;
};

/// Ground-truth ids define the sample set; ids absent from `pred` score error pi
/// and IoU 0. Categories without a symmetry entry are treated as asymmetric.
EvalReport evaluate(const std::map<std::string, Box9D>& pred, const std::map<std::string, Box9D>& gt,
                    const std::map<std::string, SymmetrySpec>& symmetry,
                    const std::map<std::string, std::string>& category_of, const EvalOptions& options = {});

json report_to_json(const EvalReport& report);

/// Pose files map ids to {"pose": {...}, "category": "..."}, to a bare pose
/// object, or to a 15-float array.
struct PoseTable {
  std::map<std::string, Box9D> poses;
  std::map<std::string, std::string> categories;
};
PoseTable read_pose_table(const std::filesystem::path& path);

/// Either a rule inventory file (with "directions" and "groups") or a map from
/// category to "LEFT a, BACK b, TOP c" strings resolved against the default
/// inventory.
std::map<std::string, SymmetrySpec> read_symmetry_table(const std::filesystem::path& path);

/// Plain-text table: category | N | Acc@30 (no sym) | Acc@30 (sym) | 3D IoU.
std::string format_table(const EvalReport& report);

}  // namespace canon9d
