#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pipnet/data/artifact.hpp"
#include "pipnet/data/dataset.hpp"
#include "pipnet/debug/debugger.hpp"
#include "pipnet/model/proto_model.hpp"

namespace pipnet::api {

// A JSON response: HTTP status plus body.
struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

struct SessionOptions {
  std::filesystem::path assets_dir;  // patch crops; empty means a temp dir
  std::optional<std::filesystem::path> log_path;  // JSON-lines intervention log
  std::size_t positive_class = 1;
  std::size_t target_class = 1;  // class the artifact is confounded with
  data::ArtifactDescriptor artifact;
  std::size_t workers = 2;  // evaluation job threads; 0 queues jobs until wait_for_jobs()
};

// One model, one dataset, an intervention log and a metrics cache keyed by
// model version. Every endpoint of the HTTP service maps to one method, so
// the whole contract is testable without sockets. Thread-safe: reads share
// a lock, sheet mutations take it exclusively, evaluations run on worker
// threads against a snapshot of the sheet.
class Session {
 public:
  Session(model::ProtoModel model, data::Dataset dataset, SessionOptions options = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  // Loads a checkpoint directory and a generated dataset directory; the
  // artifact descriptor is read from <dataset>/spec.cfg when present.
  static std::unique_ptr<Session> open(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                                       SessionOptions options = {});

  std::uint64_t version() const;
  std::filesystem::path assets_dir() const;

  Response prototypes() const;                                           // GET /prototypes
  Response patches(std::size_t id, std::size_t k, const std::string& split);  // GET /prototypes/{id}/patches
  Response disable(std::size_t id, const std::string& actor);            // POST /prototypes/{id}/disable
  Response enable(std::size_t id, const std::string& actor);             // POST /prototypes/{id}/enable
  Response metrics(const std::string& subset);                           // GET /metrics?subset=
  Response evaluate(const std::string& body);                            // POST /evaluate
  Response job(const std::string& id) const;                             // GET /jobs/{id}
  Response predict(const std::string& png_bytes) const;                  // POST /predict
  Response shortcuts(double presence_thr, double overlap_thr);           // GET /shortcuts
  Response counterfactual(const std::string& body);                      // POST /counterfactual
  Response log() const;                                                  // GET /log

  // Blocks until every queued evaluation job has finished (runs them on the
  // calling thread when the session has no workers).
  void wait_for_jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

// HTTP front end for a Session (JSON over HTTP, patch crops under /assets/).
class WorkbenchServer {
 public:
  WorkbenchServer(Session& session, ServerOptions options = {});
  ~WorkbenchServer();
  WorkbenchServer(const WorkbenchServer&) = delete;
  WorkbenchServer& operator=(const WorkbenchServer&) = delete;

  // Binds the socket and returns the port; throws Error if binding fails.
  int bind();
  // Serves until stop(); call bind() first.
  void listen();
  void stop();
  // Waits until the server accepts connections.
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pipnet::api
