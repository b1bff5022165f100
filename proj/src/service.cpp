#include "canon9d/service.hpp"

#include <httplib.h>

#include <iostream>
#include <regex>

namespace canon9d {

namespace {

int http_status(Errc code) {
  switch (code) {
    case Errc::UnknownObject:
    case Errc::MissingFile: return 404;
    case Errc::IllegalTransition:
    case Errc::EmptyPending: return 409;
    case Errc::InvalidArgument:
    case Errc::ParseError:
    case Errc::UnknownStatus:
    case Errc::DegenerateExtent:
    case Errc::TooFewPoints: return 400;
    default: return 500;
  }
}

json error_body(int status, std::string_view code, const std::string& message) {
  return json{{"status", status}, {"error", code}, {"message", message}};
}

json counts_to_json(const VerdictCounts& c) {
  return json{{"accepted", c.accepted},
              {"skipped", c.skipped},
              {"filtered", c.filtered},
              {"pending", c.pending},
              {"total", c.total()},
              {"accept_pct", c.percent(c.accepted)},
              {"skip_pct", c.percent(c.skipped)},
              {"filter_pct", c.percent(c.filtered)}};
}

}  // namespace

json summary_to_json(const VerdictSummary& s) {
  json per = json::object();
  for (const auto& [it, counts] : s.per_iteration) per[std::to_string(it)] = counts_to_json(counts);
  return json{{"per_iteration", per}, {"overall", counts_to_json(s.overall)}, {"accept_fraction", s.accept_fraction()}};
}

Service::Service(Pipeline& pipeline, ServiceOptions options)
    : pipeline_(pipeline), options_(options), server_(std::make_unique<httplib::Server>()) {
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const Response r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server_->Get(R"(/.*)", forward);
  server_->Post(R"(/.*)", forward);
  if (options_.background_steps) worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

void Service::listen() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

void Service::schedule_step() const {
  if (!options_.background_steps) return;
  {
    std::lock_guard lock(queue_mutex_);
    ++queued_steps_;
  }
  queue_cv_.notify_all();
}

void Service::worker_loop() {
  std::unique_lock lock(queue_mutex_);
  while (true) {
    queue_cv_.wait(lock, [this] { return stopping_ || queued_steps_ > 0; });
    if (stopping_) return;
    queued_steps_ = 0;
    busy_ = true;
    lock.unlock();
    try {
      pipeline_.step();
    } catch (const Error& e) {
      if (e.code() != Errc::EmptyPending) std::clog << "pipeline step failed: " << e.what() << '\n';
    }
    lock.lock();
    busy_ = false;
    queue_cv_.notify_all();
  }
}

void Service::drain() {
  std::unique_lock lock(queue_mutex_);
  queue_cv_.wait(lock, [this] { return stopping_ || (queued_steps_ == 0 && !busy_); });
}

Service::Response Service::handle(const std::string& method, const std::string& path,
                                  const std::string& body) const {
  static const std::regex object_route(R"(^/objects/([^/]+)/(surface|views|pose|verdict)/?$)");
  try {
    std::smatch m;
    if (method == "GET" && (path == "/clusters" || path == "/clusters/")) return {200, clusters_json()};
    if (method == "GET" && (path == "/stats" || path == "/stats/")) return {200, stats_json()};
    if (std::regex_match(path, m, object_route)) {
      const std::string id = m[1];
      const std::string what = m[2];
      if (method == "GET" && what == "surface") return {200, surface_json(id)};
      if (method == "GET" && what == "views") {
        pipeline_.record(id);
        if (!pipeline_.current_canonical(id)) {
          return {409, error_body(409, "NoPose", "'" + id + "' has no canonical pose yet")};
        }
        return {200, views_json(id)};
      }
      if (method == "POST" && (what == "pose" || what == "verdict")) {
        json j;
        try {
          j = json::parse(body);
        } catch (const json::parse_error& e) {
          return {400, error_body(400, "ParseError", e.what())};
        }
        if (!j.is_object()) return {400, error_body(400, "ParseError", "request body must be a JSON object")};
        pipeline_.record(id);
        if (what == "pose") {
          PoseRecord rec;
          rec.object_id = id;
          try {
            const json& p = j.contains("pose") ? j.at("pose") : j;
            rec.pose.rotation = matrix_from_json(p.at("rotation"));
            rec.pose.translation = vector_from_json(p.at("translation"));
            rec.pose.extents = p.contains("extents") ? vector_from_json(p.at("extents")) : Vector3::Zero();
            rec.annotator_id = j.value("annotator_id", std::string());
            rec.reviewer_id = j.value("reviewer_id", std::string());
            rec.cross_verified = j.value("cross_verified", false);
          } catch (const json::exception& e) {
            return {400, error_body(400, "ParseError", e.what())};
          }
          pipeline_.submit_pose(rec);
          schedule_step();
          return {200, json{{"object_id", id}, {"pose", *pipeline_.current_pose(id)}}};
        }
        Verdict v;
        std::string reviewer;
        try {
          v = parse_verdict(j.at("verdict").get<std::string>());
          reviewer = j.value("reviewer_id", std::string());
        } catch (const json::exception& e) {
          return {400, error_body(400, "ParseError", e.what())};
        }
        if (reviewer.empty()) return {400, error_body(400, "InvalidArgument", "reviewer_id is required")};
        pipeline_.submit_verdict(id, v, reviewer);
        schedule_step();
        const auto st = pipeline_.state().statuses.at(id);
        return {200, json{{"object_id", id}, {"status", to_string(st)}}};
      }
      return {405, error_body(405, "MethodNotAllowed", method + " " + path)};
    }
    return {404, error_body(404, "NotFound", path)};
  } catch (const Error& e) {
    const int status = http_status(e.code());
    return {status, error_body(status, to_string(e.code()), e.what())};
  } catch (const std::exception& e) {
    return {500, error_body(500, "Internal", e.what())};
  }
}

json Service::clusters_json() const {
  const PipelineState s = pipeline_.state();
  json out = json::array();
  for (const auto& c : s.clusters) {
    json members = json::array();
    for (const auto& id : c.members) {
      const auto p = c.proposals.find(id);
      members.push_back({{"object_id", id},
                         {"status", to_string(s.statuses.at(id))},
                         {"has_proposal", p != c.proposals.end()},
                         {"score", p != c.proposals.end() ? json(p->second.score) : json(nullptr)}});
    }
    const bool filtered = s.statuses.at(c.medoid) == ObjectStatus::Filtered;
    out.push_back({{"index", c.index},
                   {"iteration", s.iteration},
                   {"medoid", c.medoid},
                   {"status", c.aligned ? "aligned" : filtered ? "void" : "awaiting_annotation"},
                   {"reference_annotated", c.reference.has_value()},
                   {"members", members}});
  }
  return json{{"iteration", s.iteration}, {"finished", s.finished}, {"clusters", out}};
}

json Service::surface_json(const std::string& id) const {
  const FeaturedSurface surface = pipeline_.load_surface(id);
  const Eigen::Index n = surface.vertex_count();
  const auto keep = static_cast<Eigen::Index>(std::min<std::size_t>(options_.max_points, std::size_t(n)));
  json vertices = json::array();
  for (Eigen::Index i = 0; i < keep; ++i) {
    const Eigen::Index src = keep == n ? i : i * n / keep;
    const Eigen::Vector3f v = surface.vertices.col(src);
    vertices.push_back({v.x(), v.y(), v.z()});
  }
  const auto pose = pipeline_.current_pose(id);
  return json{{"object_id", id},
              {"status", to_string(pipeline_.state().statuses.at(id))},
              {"vertex_count", n},
              {"vertices", vertices},
              {"pose", pose ? json(*pose) : json(nullptr)}};
}

json Service::views_json(const std::string& id) const {
  const CanonicalPose canonical = *pipeline_.current_canonical(id);
  const FeaturedSurface surface = pipeline_.load_surface(id);
  const Points pts = canonical.world_to_canonical * surface.points();
  const Eigen::Index n = pts.cols();
  const auto keep = static_cast<Eigen::Index>(std::min<std::size_t>(options_.max_points, std::size_t(n)));

  // Screen axes (right, up) in canonical coordinates; x = LEFT, y = BACK, z = TOP.
  struct View {
    const char* name;
    Vector3 right, up;
  };
  const View views[] = {{"front", Vector3::UnitX(), Vector3::UnitZ()},
                        {"top", Vector3::UnitX(), Vector3::UnitY()},
                        {"right", -Vector3::UnitY(), Vector3::UnitZ()}};
  const Vector3 half = 0.5 * canonical.box.extents;
  json out = json::object();
  for (const auto& v : views) {
    json points = json::array();
    for (Eigen::Index i = 0; i < keep; ++i) {
      const Vector3 p = pts.col(keep == n ? i : i * n / keep);
      points.push_back({p.dot(v.right), p.dot(v.up)});
    }
    const double hu = v.right.cwiseAbs().dot(half), hv = v.up.cwiseAbs().dot(half);
    const Vector3& c = canonical.box.translation;
    const double cu = c.dot(v.right), cv = c.dot(v.up);
    out[v.name] = {{"points", points},
                   {"box", {{cu - hu, cv - hv}, {cu + hu, cv - hv}, {cu + hu, cv + hv}, {cu - hu, cv + hv}}}};
  }
  out["object_id"] = id;
  out["extents"] = vector_to_json(canonical.box.extents);
  return out;
}

json Service::stats_json() const { return summary_to_json(pipeline_.summarize()); }

}  // namespace canon9d
