#include <doctest.h>

#include <set>

#include "canon9d/error.hpp"
#include "canon9d/pipeline.hpp"
#include "helpers.hpp"
#include "scenario.hpp"

using namespace canon9d;

namespace {

synthetic::Options small_options() {
  synthetic::Options o;
  o.points = 800;
  o.frames = 2;
  return o;
}

PipelineConfig auto_config(int k) {
  PipelineConfig c;
  c.seed = 5;
  c.k = k;
  c.auto_verify = true;
  c.align.ransac_iters = 512;
  return c;
}

/// Base 0 contributes `a` instances, base 1 contributes `b`.
synthetic::Dataset two_bases(int a, int b, std::uint64_t seed) {
  const auto o = small_options();
  std::mt19937_64 rng(seed);
  synthetic::Dataset d;
  d.bases.push_back(synthetic::make_base(rng, o, "shapeA"));
  d.bases.push_back(synthetic::make_base(rng, o, "shapeB"));
  for (int i = 0; i < a; ++i) d.instances.push_back(synthetic::make_instance(d.bases[0], 0, "a" + std::to_string(i), o, rng));
  for (int i = 0; i < b; ++i) d.instances.push_back(synthetic::make_instance(d.bases[1], 1, "b" + std::to_string(i), o, rng));
  return d;
}

void check_partition(const Pipeline& p) {
  const auto st = p.state();
  std::set<std::string> ids;
  for (const auto& r : p.manifest()) ids.insert(r.object_id);
  std::set<std::string> seen;
  for (const auto& [id, s] : st.statuses) seen.insert(id);
  CHECK(seen == ids);
  CHECK(st.statuses.size() == p.manifest().size());
}

std::string snapshot(const fs::path& dir) {
  std::string out = read_text(dir / "state.json");
  if (fs::exists(dir / "canonical")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "canonical")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out += f.filename().string() + read_text(f);
  }
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("clone cluster is accepted in one iteration") {
  const auto dir = testing::scratch_dir("clones");
  auto d = two_bases(1, 0, 71);
  for (int i = 1; i < 5; ++i) {
    auto copy = d.instances[0];
    copy.object_id = "a" + std::to_string(i);
    d.instances.push_back(copy);
  }
  const auto manifest = synthetic::write_dataset(d, dir / "data");
  Pipeline p = Pipeline::create(dir / "state", manifest, auto_config(1));
  CHECK(scenario::run(p, d) == 1);
  const auto st = p.state();
  CHECK(st.finished);
  CHECK(st.iteration == 1);
  for (const auto& [id, s] : st.statuses) CHECK(s == ObjectStatus::Accepted);
  const Box9D first = *p.current_pose("a0");
  for (const auto& inst : d.instances) {
    const auto c = p.current_canonical(inst.object_id);
    REQUIRE(c.has_value());
    const Box9D b = *p.current_pose(inst.object_id);
    CHECK((b.extents - first.extents).norm() < 1e-6);
    CHECK((b.rotation - first.rotation).norm() < 1e-6);
    CHECK((b.translation - first.translation).norm() < 1e-6);
    CHECK(fs::exists(p.canonical_path(inst.object_id)));
  }
  check_partition(p);
}

TEST_CASE("mismatched population is skipped then recovered") {
  const auto dir = testing::scratch_dir("two_pop");
  const auto d = two_bases(6, 3, 72);
  const auto manifest = synthetic::write_dataset(d, dir / "data");
  Pipeline p = Pipeline::create(dir / "state", manifest, auto_config(1));

  StepReport r = p.step();
  REQUIRE(r.awaiting_annotation.size() == 1);
  CHECK(r.awaiting_annotation[0][0] == 'a');
  const auto by_id = scenario::index(d);
  p.submit_pose(scenario::planted_reference(*by_id.at(r.awaiting_annotation[0])));
  r = p.step();
  CHECK(r.iteration == 2);
  const auto entries = read_ledger(p.ledger_path());
  for (const auto& e : entries) {
    CHECK(e.iteration == 1);
    CHECK(e.verdict == (e.object_id[0] == 'a' ? Verdict::Accept : Verdict::Skip));
  }
  {
    const auto st = p.state();
    REQUIRE(st.clusters.size() == 1);
    CHECK(st.clusters[0].members == std::vector<std::string>{"b0", "b1", "b2"});
  }
  check_partition(p);

  scenario::run(p, d);
  const auto st = p.state();
  CHECK(st.finished);
  for (const auto& [id, s] : st.statuses) CHECK(s == ObjectStatus::Accepted);
  const auto summary = p.summarize();
  CHECK(summary.per_iteration.at(1).accepted == 6);
  CHECK(summary.per_iteration.at(1).skipped == 3);
  CHECK(summary.per_iteration.at(2).accepted == 3);
  CHECK(summary.accept_fraction() == 1.0);

  for (const auto& inst : d.instances) {
    const Box9D b = *p.current_pose(inst.object_id);
    CHECK(rad2deg(geodesic_distance(b.rotation, inst.gt_pose.rotation)) < 10.0);
  }
}

TEST_CASE("replay is byte identical") {
  const auto d = two_bases(4, 2, 73);
  const auto base = testing::scratch_dir("replay");
  const auto manifest = synthetic::write_dataset(d, base / "data");
  Pipeline p1 = Pipeline::create(base / "one", manifest, auto_config(2));
  scenario::run(p1, d);
  Pipeline p2 = Pipeline::create(base / "two", manifest, auto_config(2));
  scenario::run(p2, d);
  CHECK(snapshot(base / "one") == snapshot(base / "two"));

  // Reopening and stepping a finished run changes nothing.
  const std::string before = snapshot(base / "one");
  Pipeline again = Pipeline::open(base / "one");
  again.step();
  CHECK(snapshot(base / "one") == before);
}

TEST_CASE("manual verification and resume") {
  const auto dir = testing::scratch_dir("manual");
  const auto d = two_bases(4, 0, 74);
  const auto manifest = synthetic::write_dataset(d, dir / "data");
  PipelineConfig cfg = auto_config(1);
  cfg.auto_verify = false;
  std::string medoid;
  {
    Pipeline p = Pipeline::create(dir / "state", manifest, cfg);
    CHECK_THROWS_AS(Pipeline::create(dir / "state", manifest, cfg), Error);
    const auto r = p.step();
    REQUIRE(r.awaiting_annotation.size() == 1);
    medoid = r.awaiting_annotation[0];
    p.submit_pose(scenario::planted_reference(*scenario::index(d).at(medoid)));
  }
  Pipeline p = Pipeline::open(dir / "state");
  auto r = p.step();
  CHECK(r.awaiting_verification.size() == 4);
  CHECK_FALSE(fs::exists(p.canonical_path(medoid)));

  std::vector<std::string> members = r.awaiting_verification;
  p.submit_verdict(members[0], Verdict::Accept, "rev");
  p.submit_verdict(members[1], Verdict::Filter, "rev");
  CHECK_THROWS_WITH_AS(p.submit_verdict(members[1], Verdict::Accept, "rev"), doctest::Contains("IllegalTransition"),
                       Error);
  p.submit_verdict(members[2], Verdict::Skip, "rev");
  p.submit_verdict(members[3], Verdict::Accept, "rev");
  r = p.step();
  CHECK(fs::exists(p.canonical_path(members[0])));
  CHECK_FALSE(fs::exists(p.canonical_path(members[1])));
  check_partition(p);
  const json rec = read_json(p.canonical_path(members[0]));
  CHECK(rec.at("frames").size() == 2);
  CHECK(rec.at("frames")[0].at("pose").size() == 15);
}

TEST_CASE("pose and verdict validation") {
  const auto dir = testing::scratch_dir("validation");
  const auto d = two_bases(3, 0, 75);
  const auto manifest = synthetic::write_dataset(d, dir / "data");
  PipelineConfig cfg = auto_config(1);
  cfg.auto_verify = false;
  Pipeline p = Pipeline::create(dir / "state", manifest, cfg);
  p.step();

  PoseRecord rec = scenario::planted_reference(d.instances[0]);
  rec.object_id = "nope";
  CHECK_THROWS_WITH_AS(p.submit_pose(rec), doctest::Contains("UnknownObject"), Error);
  rec = scenario::planted_reference(d.instances[0]);
  rec.pose.rotation(0, 0) += 0.5;
  CHECK_THROWS_WITH_AS(p.submit_pose(rec), doctest::Contains("InvalidArgument"), Error);
  rec = scenario::planted_reference(d.instances[0]);
  rec.reviewer_id = rec.annotator_id;
  CHECK_THROWS_WITH_AS(p.submit_pose(rec), doctest::Contains("InvalidArgument"), Error);
  CHECK_THROWS_WITH_AS(p.submit_verdict("a1", Verdict::Accept, "rev"), doctest::Contains("IllegalTransition"), Error);

  rec = scenario::planted_reference(d.instances[1]);
  rec.cross_verified = false;
  p.submit_pose(rec);
  const auto r = p.step();
  CHECK(r.awaiting_verification.empty());
  CHECK(p.pose_records().at("a1").pose.extents.minCoeff() > 0.0);
}

TEST_CASE("empty pending set") {
  const auto dir = testing::scratch_dir("empty");
  const auto d = two_bases(2, 0, 76);
  auto manifest_path = synthetic::write_dataset(d, dir / "data");
  auto records = load_manifest(manifest_path);
  for (auto& r : records) r.status = ObjectStatus::Filtered;
  save_manifest(records, manifest_path);
  Pipeline p = Pipeline::create(dir / "state", manifest_path, auto_config(1));
  const std::string before = read_text(p.state_path());
  CHECK_THROWS_WITH_AS(p.step(), doctest::Contains("EmptyPending"), Error);
  CHECK(read_text(p.state_path()) == before);
}

TEST_CASE("config round trip") {
  PipelineConfig c = auto_config(3);
  c.align.alpha = 0.4;
  const PipelineConfig back = json(c).get<PipelineConfig>();
  CHECK(back.k == 3);
  CHECK(back.align.alpha == 0.4);
  CHECK(back.auto_verify);
  json bad = c;
  bad["max_iterations"] = 0;
  CHECK_THROWS_AS(bad.get<PipelineConfig>(), Error);
}

TEST_CASE("derived seeds") {
  CHECK(derive_seed(1, 1, "a") == derive_seed(1, 1, "a"));
  CHECK(derive_seed(1, 1, "a") != derive_seed(1, 2, "a"));
  CHECK(derive_seed(1, 1, "a") != derive_seed(1, 1, "b"));
  CHECK(derive_seed(1, 1, "a") != derive_seed(2, 1, "a"));
}

}
