#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "canon9d/pipeline.hpp"

namespace httplib {
class Server;
}

namespace canon9d {

struct ServiceOptions {
  std::size_t max_points = 50000;  // surface decimation budget
  bool background_steps = true;    // run Pipeline::step after every mutation
};

/// HTTP/JSON front end of a Pipeline:
///   GET  /clusters
///   GET  /objects/{id}/surface
///   GET  /objects/{id}/views
///   POST /objects/{id}/pose      {"pose": {...}, "annotator_id", "reviewer_id", "cross_verified"}
///   POST /objects/{id}/verdict   {"verdict": "Accept" | "Skip" | "Filter", "reviewer_id"}
///   GET  /stats
class Service {
 public:
  struct Response {
    int status = 200;
    json body;
  };

  Service(Pipeline& pipeline, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request without any socket; the HTTP server forwards here.
  Response handle(const std::string& method, const std::string& path, const std::string& body) const;

  /// Binds to an ephemeral port when port == 0; returns the bound port or -1.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

  /// Blocks until queued background steps have run.
  void drain();

 private:
  json clusters_json() const;
  json surface_json(const std::string& id) const;
  json views_json(const std::string& id) const;
  json stats_json() const;
  void schedule_step() const;
  void worker_loop();

  Pipeline& pipeline_;
  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;

  mutable std::mutex queue_mutex_;
  mutable std::condition_variable queue_cv_;
  mutable int queued_steps_ = 0;
  bool stopping_ = false;
  bool busy_ = false;
  std::thread worker_;
};

json summary_to_json(const VerdictSummary& s);

}  // namespace canon9d
