#include "canon9d/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "canon9d/json_io.hpp"

#ifndef CANON9D_DATA_DIR
#define CANON9D_DATA_DIR "data"
#endif

namespace canon9d {

std::string_view to_string(SymmetryKind k) {
  switch (k) {
    case SymmetryKind::None: return "none";
    case SymmetryKind::Discrete: return "discrete";
    case SymmetryKind::Continuous: return "continuous";
    case SymmetryKind::Full: return "full";
  }
  return "?";
}

void check_valid(const SymmetrySpec& spec) {
  if (spec.kind == SymmetryKind::None || spec.kind == SymmetryKind::Full) return;
  if (std::abs(spec.axis.norm() - 1.0) > 1e-9) throw Error(Errc::InvalidArgument, "symmetry axis must be unit length");
  if (spec.kind == SymmetryKind::Discrete && spec.order < 2) {
    throw Error(Errc::InvalidArgument, "discrete symmetry order must be at least 2");
  }
  if (spec.flip && (std::abs(spec.flip->norm() - 1.0) > 1e-9 || std::abs(spec.flip->dot(spec.axis)) > 1e-9)) {
    throw Error(Errc::InvalidArgument, "flip axis must be a unit vector perpendicular to the symmetry axis");
  }
}

// ---------------------------------------------------------------------------
// Rule inventory

SlotKind RuleInventory::slot_kind(std::string_view text) const {
  if (text == "-") return SlotKind::Free;
  const auto it = rules.find(text);
  if (it == rules.end()) throw Error(Errc::UnknownRule, "unknown orientation rule '" + std::string(text) + "'");
  return it->second;
}

std::map<std::string, RuleTriple> RuleInventory::category_rules() const {
  std::map<std::string, RuleTriple> out;
  for (const auto& g : groups) {
    for (const auto& c : g.categories) out.emplace(c, g.rule);
  }
  return out;
}

RuleInventory load_rule_inventory(const std::filesystem::path& path) {
  const json j = read_json(path);
  RuleInventory inv;
  try {
    for (const auto& d : j.at("directions")) {
      const auto kind = d.at("kind").get<std::string>();
      if (kind != "direction" && kind != "axis") {
        throw Error(Errc::ParseError, path.string() + ": rule kind must be 'direction' or 'axis'");
      }
      inv.rules[d.at("name").get<std::string>()] = kind == "axis" ? SlotKind::Axis : SlotKind::Direction;
    }
    for (const auto& g : j.value("groups", json::array())) {
      RuleGroup group;
      group.rule = {g.at("left").get<std::string>(), g.at("back").get<std::string>(), g.at("top").get<std::string>()};
      group.categories = g.at("categories").get<std::vector<std::string>>();
      inv.groups.push_back(std::move(group));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
  for (const auto& g : inv.groups) {
    inv.slot_kind(g.rule.left);
    inv.slot_kind(g.rule.back);
    inv.slot_kind(g.rule.top);
  }
  return inv;
}

const RuleInventory& default_rule_inventory() {
  static const RuleInventory inv =
      load_rule_inventory(std::filesystem::path(CANON9D_DATA_DIR) / "orientation_rules.json");
  return inv;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

RuleTriple parse_rule(std::string_view text) {
  // Rule names never contain commas, so the three slots split cleanly.
  std::array<std::string, 3> slots;
  constexpr std::array<std::string_view, 3> keys{"LEFT", "BACK", "TOP"};
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t end = i < 2 ? text.find(',', pos) : text.size();
    if (end == std::string_view::npos) throw Error(Errc::ParseError, "rule needs LEFT, BACK and TOP slots");
    std::string_view part = trim(text.substr(pos, end - pos));
    if (!part.starts_with(keys[i])) {
      throw Error(Errc::ParseError, "expected slot " + std::string(keys[i]) + " in rule '" + std::string(text) + "'");
    }
    part = trim(part.substr(keys[i].size()));
    if (part.empty()) throw Error(Errc::ParseError, "empty slot in rule '" + std::string(text) + "'");
    slots[i] = std::string(part);
    pos = end + 1;
  }
  return {slots[0], slots[1], slots[2]};
}

SymmetrySpec compile_rule(const RuleTriple& rule, const RuleInventory& inventory, std::string category) {
  const std::array<SlotKind, 3> kinds{inventory.slot_kind(rule.left), inventory.slot_kind(rule.back),
                                      inventory.slot_kind(rule.top)};
  SymmetrySpec spec;
  spec.category = std::move(category);

  int constrained = 0;
  for (auto k : kinds) constrained += k != SlotKind::Free;
  if (constrained == 0) {
    spec.kind = SymmetryKind::Full;
    return spec;
  }
  if (constrained == 1) {
    // A single constrained slot leaves every rotation about it free; an axis-type
    // slot additionally allows flipping that axis.
    const int i = int(std::find_if(kinds.begin(), kinds.end(), [](SlotKind k) { return k != SlotKind::Free; }) -
                      kinds.begin());
    spec.kind = SymmetryKind::Continuous;
    spec.axis = Vector3::Unit(i);
    if (kinds[i] == SlotKind::Axis) spec.flip = Vector3::Unit((i + 1) % 3);
    return spec;
  }

  // Two or three constrained slots fix the frame up to sign flips of axis-type
  // slots; the proper rotations among those are half-turns about canonical axes.
  std::vector<int> half_turns;
  for (int i = 0; i < 3; ++i) {
    // A half-turn about axis i negates the other two axes.
    bool ok = true;
    for (int j = 0; j < 3; ++j) {
      if (j != i && kinds[j] == SlotKind::Direction) ok = false;
    }
    if (ok) half_turns.push_back(i);
  }
  if (half_turns.empty()) {
    spec.kind = SymmetryKind::None;
  } else {
    spec.kind = SymmetryKind::Discrete;
    spec.order = 2;
    spec.axis = Vector3::Unit(half_turns[0]);
    if (half_turns.size() > 1) spec.flip = Vector3::Unit(half_turns[1]);
  }
  return spec;
}

std::map<std::string, SymmetrySpec> compile_symmetry(const std::map<std::string, RuleTriple>& table,
                                                     const RuleInventory& inventory) {
  std::map<std::string, SymmetrySpec> out;
  for (const auto& [category, rule] : table) out.emplace(category, compile_rule(rule, inventory, category));
  return out;
}

std::vector<Matrix3> symmetry_rotations(const SymmetrySpec& spec, int continuous_samples) {
  check_valid(spec);
  std::vector<Matrix3> out;
  switch (spec.kind) {
    case SymmetryKind::Full: return out;
    case SymmetryKind::None: out.push_back(Matrix3::Identity()); return out;
    case SymmetryKind::Discrete:
      for (int k = 0; k < spec.order; ++k) out.push_back(rotation_about(spec.axis, 2.0 * kPi * k / spec.order));
      break;
    case SymmetryKind::Continuous:
      if (continuous_samples < 1) throw Error(Errc::InvalidArgument, "continuous_samples must be positive");
      for (int k = 0; k < continuous_samples; ++k) {
        out.push_back(rotation_about(spec.axis, 2.0 * kPi * k / continuous_samples));
      }
      break;
  }
  if (spec.flip) {
    const Matrix3 f = rotation_about(*spec.flip, kPi);
    const std::size_t n = out.size();
    for (std::size_t k = 0; k < n; ++k) out.push_back(out[k] * f);
  }
  return out;
}

double sym_error(const Matrix3& pred, const Matrix3& gt, const SymmetrySpec& spec, int continuous_samples) {
  if (spec.kind == SymmetryKind::Full) return 0.0;
  double best = kPi;
  for (const auto& g : symmetry_rotations(spec, continuous_samples)) {
    best = std::min(best, geodesic_distance<double>(pred, gt * g));
  }
  return best;
}

double acc_at(std::span<const double> errors, double threshold) {
  if (errors.empty()) throw Error(Errc::EmptyInput, "accuracy of an empty error list");
  const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e < threshold; });
  return double(hits) / double(errors.size());
}

// ---------------------------------------------------------------------------
// Oriented box intersection

namespace {

using Polygon = std::vector<Vector3>;

struct Plane {
  Vector3 normal;  // outward
  double offset;   // inside: normal . x <= offset
};

std::array<Vector3, 8> box_corners(const Box9D& b) {
  std::array<Vector3, 8> c;
  for (int i = 0; i < 8; ++i) {
    const Vector3 sign((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    c[i] = b.rotation * (0.5 * sign.cwiseProduct(b.extents)) + b.translation;
  }
  return c;
}

std::vector<Polygon> box_faces(const Box9D& b) {
  const auto c = box_corners(b);
  constexpr int quads[6][4] = {{0, 2, 6, 4}, {1, 5, 7, 3}, {0, 4, 5, 1}, {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 6, 7, 5}};
  std::vector<Polygon> faces;
  for (const auto& q : quads) faces.push_back({c[q[0]], c[q[1]], c[q[2]], c[q[3]]});
  return faces;
}

std::array<Plane, 6> box_planes(const Box9D& b) {
  std::array<Plane, 6> planes;
  for (int axis = 0; axis < 3; ++axis) {
    const Vector3 n = b.rotation.col(axis);
    const double h = 0.5 * b.extents(axis);
    planes[2 * axis] = {n, n.dot(b.translation) + h};
    planes[2 * axis + 1] = {-n, -n.dot(b.translation) + h};
  }
  return planes;
}

// Orders coplanar points around their centroid.
Polygon order_cap(std::vector<Vector3> pts, const Vector3& normal) {
  if (pts.size() < 3) return {};
  Vector3 c = Vector3::Zero();
  for (const auto& p : pts) c += p;
  c /= double(pts.size());
  const Vector3 u = normal.unitOrthogonal();
  const Vector3 v = normal.cross(u);
  std::sort(pts.begin(), pts.end(), [&](const Vector3& a, const Vector3& b) {
    return std::atan2((a - c).dot(v), (a - c).dot(u)) < std::atan2((b - c).dot(v), (b - c).dot(u));
  });
  return pts;
}

std::vector<Polygon> clip(const std::vector<Polygon>& faces, const Plane& plane, double eps) {
  std::vector<Polygon> out;
  std::vector<Vector3> cap;
  bool face_on_plane = false;
  for (const auto& face : faces) {
    face_on_plane = face_on_plane || std::all_of(face.begin(), face.end(), [&](const Vector3& p) {
                      return std::abs(plane.normal.dot(p) - plane.offset) <= eps;
                    });
    Polygon kept;
    const std::size_t n = face.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vector3& a = face[i];
      const Vector3& b = face[(i + 1) % n];
      const double da = plane.normal.dot(a) - plane.offset;
      const double db = plane.normal.dot(b) - plane.offset;
      if (da <= eps) {
        kept.push_back(a);
        if (std::abs(da) <= eps) cap.push_back(a);
      }
      if ((da < -eps && db > eps) || (da > eps && db < -eps)) {
        const Vector3 x = a + (da / (da - db)) * (b - a);
        kept.push_back(x);
        cap.push_back(x);
      }
    }
    if (kept.size() >= 3) out.push_back(std::move(kept));
  }
  if (face_on_plane) return out;  // the existing face already closes the cut
  Polygon lid = order_cap(std::move(cap), plane.normal);
  if (!lid.empty()) out.push_back(std::move(lid));
  return out;
}

double polygon_area_vector_norm(const Polygon& p) {
  Vector3 s = Vector3::Zero();
  for (std::size_t i = 1; i + 1 < p.size(); ++i) s += (p[i] - p[0]).cross(p[i + 1] - p[0]);
  return 0.5 * s.norm();
}

// Volume of a convex polyhedron given by its faces: sum of pyramids from an
// interior point.
double convex_volume(const std::vector<Polygon>& faces) {
  Vector3 c = Vector3::Zero();
  std::size_t n = 0;
  for (const auto& f : faces) {
    for (const auto& p : f) {
      c += p;
      ++n;
    }
  }
  if (n == 0) return 0.0;
  c /= double(n);
  double volume = 0.0;
  for (const auto& f : faces) {
    Vector3 normal = Vector3::Zero();
    for (std::size_t i = 1; i + 1 < f.size(); ++i) normal += (f[i] - f[0]).cross(f[i + 1] - f[0]);
    const double norm = normal.norm();
    if (norm <= 0.0) continue;
    const double height = std::abs((f[0] - c).dot(normal / norm));
    volume += polygon_area_vector_norm(f) * height / 3.0;
  }
  return volume;
}

}  // namespace

double box_volume(const Box9D& box) { return box.extents.prod(); }

double iou3d(const Box9D& a, const Box9D& b) {
  check_valid(a, "box a");
  check_valid(b, "box b");
  const double scale = std::max(a.extents.maxCoeff(), b.extents.maxCoeff()) +
                       std::max(a.translation.cwiseAbs().maxCoeff(), b.translation.cwiseAbs().maxCoeff());
  const double eps = 1e-12 * scale;
  std::vector<Polygon> poly = box_faces(a);
  for (const auto& plane : box_planes(b)) {
    poly = clip(poly, plane, eps);
    if (poly.size() < 4) return 0.0;
  }
  const double inter = convex_volume(poly);
  const double va = box_volume(a), vb = box_volume(b);
  const double uni = va + vb - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(const std::map<std::string, Box9D>& pred, const std::map<std::string, Box9D>& gt,
                    const std::map<std::string, SymmetrySpec>& symmetry,
                    const std::map<std::string, std::string>& category_of, const EvalOptions& options) {
  if (gt.empty()) throw Error(Errc::EmptyInput, "no ground-truth poses");
  EvalReport report;
  report.threshold = options.threshold;
  const SymmetrySpec none;

  std::map<std::string, std::vector<const SampleScore*>> by_category;
  report.samples.reserve(gt.size());
  for (const auto& [id, truth] : gt) {
    SampleScore s;
    s.id = id;
    const auto c = category_of.find(id);
    s.category = c == category_of.end() ? std::string("unknown") : c->second;
    const auto p = pred.find(id);
    if (p == pred.end()) {
      s.missing = true;
      s.error_aware = s.error_unaware = kPi;
      s.iou = 0.0;
    } else {
      const auto sym = symmetry.find(s.category);
      s.error_unaware = geodesic_distance<double>(p->second.rotation, truth.rotation);
      s.error_aware = sym_error(p->second.rotation, truth.rotation, sym == symmetry.end() ? none : sym->second,
                                options.continuous_samples);
      s.iou = iou3d(p->second, truth);
    }
    report.samples.push_back(std::move(s));
  }
  for (const auto& s : report.samples) by_category[s.category].push_back(&s);

  for (const auto& [category, members] : by_category) {
    if (members.size() < options.min_category_samples) {
      report.dropped_categories.push_back(category);
      continue;
    }
    std::vector<double> aware, unaware;
    CategoryScore score;
    score.samples = members.size();
    double iou_sum = 0.0;
    for (const auto* s : members) {
      aware.push_back(s->error_aware);
      unaware.push_back(s->error_unaware);
      iou_sum += s->iou;
      score.missing += s->missing;
    }
    score.acc_aware = acc_at(aware, options.threshold);
    score.acc_unaware = acc_at(unaware, options.threshold);
    score.mean_iou = iou_sum / double(members.size());
    report.categories.emplace(category, score);
  }
  if (report.categories.empty()) throw Error(Errc::EmptyInput, "no category passes the sample filter");

  for (const auto& [category, score] : report.categories) {
    report.macro.samples += score.samples;
    report.macro.missing += score.missing;
    report.macro.acc_aware += score.acc_aware;
    report.macro.acc_unaware += score.acc_unaware;
    report.macro.mean_iou += score.mean_iou;
  }
  const double n = double(report.categories.size());
  report.macro.acc_aware /= n;
  report.macro.acc_unaware /= n;
  report.macro.mean_iou /= n;
  return report;
}

json report_to_json(const EvalReport& report) {
  auto score = [](const CategoryScore& s) {
    return json{{"samples", s.samples},
                {"missing", s.missing},
                {"acc30_sym_aware", s.acc_aware},
                {"acc30_sym_unaware", s.acc_unaware},
                {"mean_iou3d", s.mean_iou}};
  };
  json categories = json::object();
  for (const auto& [name, s] : report.categories) categories[name] = score(s);
  json samples = json::array();
  for (const auto& s : report.samples) {
    samples.push_back({{"id", s.id},
                       {"category", s.category},
                       {"error_sym_aware_deg", rad2deg(s.error_aware)},
                       {"error_sym_unaware_deg", rad2deg(s.error_unaware)},
                       {"iou3d", s.iou},
                       {"missing", s.missing}});
  }
  return json{{"threshold_deg", rad2deg(report.threshold)},
              {"aggregation", "macro"},
              {"macro", score(report.macro)},
              {"categories", categories},
              {"dropped_categories", report.dropped_categories},
              {"samples", samples}};
}

PoseTable read_pose_table(const std::filesystem::path& path) {
  const json j = read_json(path);
  if (!j.is_object()) throw Error(Errc::ParseError, path.string() + ": expected an object keyed by sample id");
  PoseTable table;
  for (const auto& [id, v] : j.items()) {
    try {
      if (v.is_array()) {
        table.poses[id] = pose_from_array(v);
      } else if (v.contains("pose")) {
        const json& p = v.at("pose");
        table.poses[id] = p.is_array() ? pose_from_array(p) : p.get<Box9D>();
      } else {
        table.poses[id] = v.get<Box9D>();
      }
      if (v.is_object() && v.contains("category")) table.categories[id] = v.at("category").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, path.string() + ": sample '" + id + "': " + e.what());
    }
    check_valid(table.poses[id], "pose");
  }
  return table;
}

std::map<std::string, SymmetrySpec> read_symmetry_table(const std::filesystem::path& path) {
  const json j = read_json(path);
  if (j.is_object() && j.contains("directions")) {
    const RuleInventory inv = load_rule_inventory(path);
    return compile_symmetry(inv.category_rules(), inv);
  }
  if (!j.is_object()) throw Error(Errc::ParseError, path.string() + ": expected an object");
  std::map<std::string, RuleTriple> table;
  for (const auto& [category, v] : j.items()) {
    if (v.is_string()) {
      table[category] = parse_rule(v.get<std::string>());
    } else if (v.is_object()) {
      table[category] = {v.value("left", std::string("-")), v.value("back", std::string("-")),
                         v.value("top", std::string("-"))};
    } else {
      throw Error(Errc::ParseError, path.string() + ": rule for '" + category + "' must be a string or object");
    }
  }
  return compile_symmetry(table, default_rule_inventory());
}

std::string format_table(const EvalReport& report) {
  std::ostringstream os;
  const int deg = int(std::lround(rad2deg(report.threshold)));
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %8s %14s %14s %8s\n", "category", "N",
                ("Acc@" + std::to_string(deg) + " sym-").c_str(), ("Acc@" + std::to_string(deg) + " sym+").c_str(),
                "3D IoU");
  os << line;
  auto row = [&](const std::string& name, const CategoryScore& s) {
    std::snprintf(line, sizeof line, "%-28s %8zu %14.1f %14.1f %8.3f\n", name.substr(0, 28).c_str(), s.samples,
                  100.0 * s.acc_unaware, 100.0 * s.acc_aware, s.mean_iou);
    os << line;
  };
  for (const auto& [name, score] : report.categories) row(name, score);
  os << std::string(76, '-') << '\n';
  row("macro", report.macro);
  return os.str();
}

}  // namespace canon9d
