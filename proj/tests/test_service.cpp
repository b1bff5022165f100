#include <doctest.h>

#include <thread>

#include "canon9d/service.hpp"
// After Eigen: <resolv.h> defines _res, an Eigen parameter name.
#include <httplib.h>
#include "helpers.hpp"
#include "scenario.hpp"

using namespace canon9d;

namespace {

struct Fixture {
  fs::path dir;
  synthetic::Dataset data;
  Pipeline pipeline;

  static Fixture make(const std::string& name) {
    const auto dir = testing::scratch_dir(name);
    synthetic::Options o;
    o.points = 600;
    o.frames = 2;
    std::mt19937_64 rng(81);
    synthetic::Dataset d;
    d.bases.push_back(synthetic::make_base(rng, o, "shape0"));
    for (int i = 0; i < 3; ++i) d.instances.push_back(synthetic::make_instance(d.bases[0], 0, "o" + std::to_string(i), o, rng));
    const auto manifest = synthetic::write_dataset(d, dir / "data");
    PipelineConfig cfg;
    cfg.k = 1;
    cfg.align.ransac_iters = 256;
    Pipeline p = Pipeline::create(dir / "state", manifest, cfg);
    p.step();
    return {dir, std::move(d), std::move(p)};
  }
};

std::string pose_body(const synthetic::Instance& inst) {
  json pose{{"rotation", matrix_to_json(inst.gt_pose.rotation)}, {"translation", vector_to_json(inst.gt_pose.translation)}};
  return json{{"pose", pose}, {"annotator_id", "ann"}, {"reviewer_id", "rev"}, {"cross_verified", true}}.dump();
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("routes") {
  Fixture f = Fixture::make("service_routes");
  Service s(f.pipeline, {100, false});

  auto r = s.handle("GET", "/clusters", "");
  CHECK(r.status == 200);
  REQUIRE(r.body.at("clusters").size() == 1);
  const std::string medoid = r.body["clusters"][0]["medoid"];
  CHECK(r.body["clusters"][0]["status"] == "awaiting_annotation");

  r = s.handle("GET", "/objects/o1/surface", "");
  CHECK(r.status == 200);
  CHECK(r.body.at("vertices").size() == 100);
  CHECK(r.body.at("vertex_count").get<int>() > 100);
  CHECK(r.body.at("pose").is_null());

  CHECK(s.handle("GET", "/objects/zzz/surface", "").status == 404);
  CHECK(s.handle("GET", "/nowhere", "").status == 404);
  CHECK(s.handle("DELETE", "/objects/o1/pose", "").status == 405);
  CHECK(s.handle("GET", "/objects/o1/views", "").status == 409);
  CHECK(s.handle("POST", "/objects/o1/pose", "{broken").status == 400);

  const auto& by_id = scenario::index(f.data);
  json bad = json::parse(pose_body(*by_id.at(medoid)));
  bad["pose"]["rotation"][0] = 3.0;
  CHECK(s.handle("POST", "/objects/" + medoid + "/pose", bad.dump()).status == 400);

  r = s.handle("POST", "/objects/" + medoid + "/pose", pose_body(*by_id.at(medoid)));
  CHECK(r.status == 200);
  CHECK(r.body.at("pose").at("extents").size() == 3);
  f.pipeline.step();

  r = s.handle("GET", "/objects/" + medoid + "/views", "");
  CHECK(r.status == 200);
  for (const char* v : {"front", "top", "right"}) CHECK(r.body.at(v).at("box").size() == 4);

  CHECK(s.handle("POST", "/objects/o1/verdict", R"({"verdict": "Accept"})").status == 400);
  CHECK(s.handle("POST", "/objects/o1/verdict", R"({"verdict": "Maybe", "reviewer_id": "r"})").status == 400);
  r = s.handle("POST", "/objects/o1/verdict", R"({"verdict": "Filter", "reviewer_id": "r"})");
  CHECK(r.status == 200);
  CHECK(r.body.at("status") == "Filtered");
  r = s.handle("POST", "/objects/o1/verdict", R"({"verdict": "Accept", "reviewer_id": "r"})");
  CHECK(r.status == 409);
  CHECK(r.body.at("error") == "IllegalTransition");

  r = s.handle("GET", "/stats", "");
  CHECK(r.status == 200);
  CHECK(r.body.at("overall").at("filtered") == 1);
}

TEST_CASE("http round trip with background steps") {
  Fixture f = Fixture::make("service_http");
  Service s(f.pipeline);
  const int port = s.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread server([&] { s.listen(); });

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/clusters");
  REQUIRE(res);
  CHECK(res->status == 200);
  const std::string medoid = json::parse(res->body)["clusters"][0]["medoid"];

  res = client.Post("/objects/" + medoid + "/pose", pose_body(*scenario::index(f.data).at(medoid)), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  s.drain();

  res = client.Get("/clusters");
  REQUIRE(res);
  const json c = json::parse(res->body);
  CHECK(c["clusters"][0]["status"] == "aligned");
  for (const auto& m : c["clusters"][0]["members"]) CHECK(m["has_proposal"] == true);

  res = client.Post("/objects/" + medoid + "/verdict", R"({"verdict": "Accept", "reviewer_id": "r"})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  s.drain();
  CHECK(fs::exists(f.pipeline.canonical_path(medoid)));

  res = client.Get("/missing");
  REQUIRE(res);
  CHECK(res->status == 404);

  s.stop();
  server.join();
}

}
