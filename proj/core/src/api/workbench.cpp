#include "pipnet/api/workbench.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <thread>

#include "httplib.h"
#include "json_codec.hpp"
#include "pipnet/data/image_io.hpp"
#include "pipnet/data/synthetic.hpp"
#include "pipnet/error.hpp"
#include "pipnet/explain/explanation.hpp"
#include "pipnet/model/checkpoint.hpp"

namespace pipnet::api {

using codec::json;

namespace {

Response reply(int status, const json& body) { return Response{status, body.dump()}; }
Response error_reply(int status, const std::string& message) { return reply(status, json{{"error", message}}); }

bool valid_split(const std::string& name) { return name == "train" || name == "test" || name == "counterfactual"; }

std::string version_ref(std::uint64_t version) { return "v" + std::to_string(version); }

struct Snapshot {
  model::ScoringSheet sheet;
  std::uint64_t version = 0;
};

}  // namespace

struct Session::Impl {
  struct Job {
    std::string id;
    std::string subset;
    std::string status;  // queued, running, done, failed
    Snapshot snapshot;
    std::string result;  // metrics payload when done
    std::string error;
  };

  Impl(model::ProtoModel m, data::Dataset d, SessionOptions o)
      : model(std::move(m)), dataset(std::move(d)), options(std::move(o)) {}

  mutable std::shared_mutex model_mutex;
  model::ProtoModel model;
  data::Dataset dataset;
  SessionOptions options;
  debug::InterventionLog log;
  std::uint64_t version = 0;
  std::filesystem::path assets;
  bool owns_assets = false;

  // Presence depends only on the backbone, which a session never changes.
  std::mutex presence_mutex;
  std::map<std::string, std::vector<model::PresenceVector>> presence;

  std::mutex cache_mutex;
  std::map<std::pair<std::uint64_t, std::string>, std::string> metrics_cache;
  std::map<std::pair<double, double>, debug::ShortcutReport> shortcut_cache;

  std::mutex assets_mutex;

  std::mutex jobs_mutex;
  std::condition_variable jobs_cv;
  std::condition_variable idle_cv;
  std::map<std::string, Job> jobs;
  std::deque<std::string> queue;
  std::size_t busy = 0;
  std::size_t next_job = 1;
  bool stopping = false;
  std::vector<std::thread> workers;

  Snapshot snapshot() const {
    std::shared_lock lock(model_mutex);
    return Snapshot{model.sheet(), version};
  }

  const std::vector<model::PresenceVector>& presence_for(const std::string& split) {
    std::lock_guard lock(presence_mutex);
    auto it = presence.find(split);
    if (it == presence.end())
      it = presence.emplace(split, model.presence_batch(data::images_of(dataset.split(split)))).first;
    return it->second;
  }

  std::string metrics_payload(const std::string& subset, const Snapshot& snap) {
    {
      std::lock_guard lock(cache_mutex);
      auto it = metrics_cache.find({snap.version, subset});
      if (it != metrics_cache.end()) return it->second;
    }
    const auto& items = dataset.split(subset);
    if (items.empty()) throw InvalidArgument("subset '" + subset + "' is empty");
    const auto& pres = presence_for(subset);
    std::vector<model::Prediction> preds;
    preds.reserve(pres.size());
    for (const auto& p : pres) preds.push_back(model::classify(p, snap.sheet, model.config().abstain_epsilon));
    const auto report = explain::summarize(preds, data::labels_of(items), snap.sheet, options.positive_class);
    std::string body = json{{"version", snap.version}, {"subset", subset}, {"metrics", codec::metrics_json(report)}}.dump();
    std::lock_guard lock(cache_mutex);
    return metrics_cache.emplace(std::make_pair(snap.version, subset), std::move(body)).first->second;
  }

  const debug::ShortcutReport& shortcut_report(double presence_thr, double overlap_thr) {
    {
      std::lock_guard lock(cache_mutex);
      auto it = shortcut_cache.find({presence_thr, overlap_thr});
      if (it != shortcut_cache.end()) return it->second;
    }
    auto report = debug::detect_shortcuts(model, presence_for("train"), dataset.train, presence_thr, overlap_thr);
    std::lock_guard lock(cache_mutex);
    return shortcut_cache.emplace(std::make_pair(presence_thr, overlap_thr), std::move(report)).first->second;
  }

  bool has_masks() const {
    for (const auto& item : dataset.train)
      if (item.has_artifact()) return true;
    return false;
  }

  Response set_status(std::size_t id, debug::Action action, const std::string& actor) {
    std::unique_lock lock(model_mutex);
    if (id >= model.sheet().num_prototypes()) return error_reply(404, "unknown prototype " + std::to_string(id));
    const std::uint64_t before = version;
    if (action == debug::Action::Disable) {
      model.sheet().disable(id);
    } else {
      model.sheet().enable(id);
    }
    version += 1;
    log.append(debug::InterventionEntry{debug::utc_timestamp(), id, action, actor, version_ref(before),
                                        version_ref(version)});
    {
      std::lock_guard cache_lock(cache_mutex);
      std::erase_if(metrics_cache, [&](const auto& kv) { return kv.first.first < version; });
    }
    const auto& disabled = model.sheet().disabled();
    return reply(200, json{{"version", version},
                           {"id", id},
                           {"status", model.sheet().is_disabled(id) ? "disabled" : "active"},
                           {"disabled", std::vector<std::size_t>(disabled.begin(), disabled.end())},
                           {"global_size", explain::global_size(model.sheet())}});
  }

  // Takes the next queued job and runs it; false when the queue is empty
  // (or, with `block`, once the session is stopping).
  bool run_one(bool block) {
    std::string id;
    Snapshot snap;
    std::string subset;
    {
      std::unique_lock lock(jobs_mutex);
      if (block) jobs_cv.wait(lock, [&] { return stopping || !queue.empty(); });
      if (queue.empty()) return false;
      id = queue.front();
      queue.pop_front();
      auto& job = jobs.at(id);
      job.status = "running";
      snap = job.snapshot;
      subset = job.subset;
      busy += 1;
    }
    std::string result, error;
    try {
      result = metrics_payload(subset, snap);
    } catch (const std::exception& e) {
      error = e.what();
    }
    {
      std::lock_guard lock(jobs_mutex);
      auto& job = jobs.at(id);
      job.status = error.empty() ? "done" : "failed";
      job.result = std::move(result);
      job.error = std::move(error);
      busy -= 1;
    }
    idle_cv.notify_all();
    return true;
  }

  void worker_loop() {
    while (run_one(true)) {
    }
  }
};

Session::Session(model::ProtoModel model, data::Dataset dataset, SessionOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(dataset), std::move(options))) {
  auto& s = *impl_;
  const std::size_t size = s.model.config().image_size;
  for (const auto* split : {&s.dataset.train, &s.dataset.test, &s.dataset.counterfactual})
    for (const auto& item : *split)
      if (item.image.height != size || item.image.width != size)
        throw InvalidArgument("dataset image " + item.relpath + " does not match the model input size " +
                              std::to_string(size));
  if (s.options.log_path) {
    s.log = debug::InterventionLog::open(*s.options.log_path);
    s.model = debug::replay(s.model, s.log);
    s.version = s.log.size();
  }
  if (s.options.assets_dir.empty()) {
    std::random_device rd;
    s.assets = std::filesystem::temp_directory_path() / ("pipnet-assets-" + std::to_string(rd()) + std::to_string(rd()));
    s.owns_assets = true;
  } else {
    s.assets = s.options.assets_dir;
  }
  std::filesystem::create_directories(s.assets);
  for (std::size_t w = 0; w < s.options.workers; ++w)
    s.workers.emplace_back([this] { impl_->worker_loop(); });
}

Session::~Session() {
  {
    std::lock_guard lock(impl_->jobs_mutex);
    impl_->stopping = true;
  }
  impl_->jobs_cv.notify_all();
  for (auto& t : impl_->workers) t.join();
  if (impl_->owns_assets) {
    std::error_code ec;
    std::filesystem::remove_all(impl_->assets, ec);
  }
}

std::unique_ptr<Session> Session::open(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                                       SessionOptions options) {
  if (!std::filesystem::is_directory(checkpoint)) throw IoError("checkpoint directory not found: " + checkpoint.string());
  if (!std::filesystem::is_directory(dataset)) throw IoError("dataset directory not found: " + dataset.string());
  auto ckpt = model::load_checkpoint(checkpoint);
  auto data = data::load_dataset(dataset);
  if (std::filesystem::exists(dataset / "spec.cfg")) {
    data::SyntheticSpec spec;
    spec.apply(KeyValueConfig::load(dataset / "spec.cfg"));
    options.artifact = spec.artifact;
  }
  return std::make_unique<Session>(std::move(ckpt.model), std::move(data), std::move(options));
}

std::uint64_t Session::version() const {
  std::shared_lock lock(impl_->model_mutex);
  return impl_->version;
}

std::filesystem::path Session::assets_dir() const { return impl_->assets; }

Response Session::prototypes() const {
  auto& s = *impl_;
  const debug::ShortcutReport* shortcuts = s.has_masks() ? &s.shortcut_report(0.1, 0.2) : nullptr;
  std::shared_lock lock(s.model_mutex);
  json list = json::array();
  for (std::size_t id = 0; id < s.model.sheet().num_prototypes(); ++id) {
    json entry = codec::card_json(explain::prototype_card(s.model, id));
    entry.erase("patches");
    entry["relevant"] = s.model.sheet().is_relevant(id);
    entry["max_weight"] = s.model.sheet().max_effective_weight(id);
    if (shortcuts) {
      const auto& p = shortcuts->prototypes[id];
      entry["shortcut"] = {{"flagged", p.flagged}, {"overlap_fraction", p.overlap_fraction}, {"activations", p.activations}};
    } else {
      entry["shortcut"] = nullptr;
    }
    list.push_back(std::move(entry));
  }
  return reply(200, json{{"version", s.version},
                         {"global_size", explain::global_size(s.model.sheet())},
                         {"num_classes", s.model.sheet().num_classes()},
                         {"prototypes", list}});
}

Response Session::patches(std::size_t id, std::size_t k, const std::string& split) {
  auto& s = *impl_;
  if (id >= s.model.config().num_prototypes) return error_reply(404, "unknown prototype " + std::to_string(id));
  if (!valid_split(split)) return error_reply(422, "unknown split '" + split + "'");
  const auto& items = s.dataset.split(split);
  if (items.empty()) return error_reply(422, "split '" + split + "' is empty");
  const auto& pres = s.presence_for(split);
  explain::PrototypeCard card;
  std::uint64_t version = 0;
  {
    std::shared_lock lock(s.model_mutex);
    card = explain::top_patches(s.model, pres, items, id, k);
    version = s.version;
  }
  json j = codec::card_json(card);
  for (std::size_t r = 0; r < card.patches.size(); ++r) {
    const auto& patch = card.patches[r];
    const std::string name = split + "/img" + std::to_string(patch.image_index) + "_r" +
                             std::to_string(patch.rect.row_begin) + "_c" + std::to_string(patch.rect.col_begin) + ".png";
    const auto file = s.assets / name;
    {
      std::lock_guard lock(s.assets_mutex);
      if (!std::filesystem::exists(file)) {
        std::filesystem::create_directories(file.parent_path());
        data::write_png(file, crop(items[patch.image_index].image, patch.rect));
      }
    }
    j["patches"][r]["asset"] = "/assets/" + name;
  }
  j["version"] = version;
  j["split"] = split;
  return reply(200, j);
}

Response Session::disable(std::size_t id, const std::string& actor) {
  return impl_->set_status(id, debug::Action::Disable, actor);
}

Response Session::enable(std::size_t id, const std::string& actor) {
  return impl_->set_status(id, debug::Action::Enable, actor);
}

Response Session::metrics(const std::string& subset) {
  if (!valid_split(subset)) return error_reply(422, "unknown subset '" + subset + "'");
  if (impl_->dataset.split(subset).empty()) return error_reply(422, "subset '" + subset + "' is empty");
  return Response{200, impl_->metrics_payload(subset, impl_->snapshot())};
}

Response Session::evaluate(const std::string& body) {
  auto& s = *impl_;
  std::string subset;
  try {
    const auto j = json::parse(body);
    subset = j.at("subset").get<std::string>();
  } catch (const json::exception& e) {
    return error_reply(422, std::string("expected a JSON body {\"subset\": ...}: ") + e.what());
  }
  if (!valid_split(subset)) return error_reply(422, "unknown subset '" + subset + "'");
  if (s.dataset.split(subset).empty()) return error_reply(422, "subset '" + subset + "' is empty");
  Snapshot snap = s.snapshot();
  std::lock_guard lock(s.jobs_mutex);
  for (const auto& [id, job] : s.jobs)
    if (job.subset == subset && job.snapshot.version == snap.version && (job.status == "queued" || job.status == "running"))
      return reply(409, json{{"error", "an evaluation of this subset and version is already pending"}, {"job", id}});
  const std::string id = "job-" + std::to_string(s.next_job++);
  const std::uint64_t version = snap.version;
  s.jobs.emplace(id, Impl::Job{id, subset, "queued", std::move(snap), "", ""});
  s.queue.push_back(id);
  s.jobs_cv.notify_one();
  return reply(202, json{{"job", id}, {"status", "queued"}, {"subset", subset}, {"version", version}});
}

Response Session::job(const std::string& id) const {
  auto& s = *impl_;
  std::lock_guard lock(s.jobs_mutex);
  auto it = s.jobs.find(id);
  if (it == s.jobs.end()) return error_reply(404, "unknown job '" + id + "'");
  const auto& job = it->second;
  json j{{"job", job.id}, {"status", job.status}, {"subset", job.subset}, {"version", job.snapshot.version}};
  if (job.status == "done") j["result"] = json::parse(job.result);
  if (job.status == "failed") j["error"] = job.error;
  return reply(200, j);
}

Response Session::predict(const std::string& png_bytes) const {
  auto& s = *impl_;
  Image image;
  try {
    image = data::decode_png(std::vector<std::uint8_t>(png_bytes.begin(), png_bytes.end()));
  } catch (const Error& e) {
    return error_reply(422, std::string("body is not a PNG image: ") + e.what());
  }
  std::shared_lock lock(s.model_mutex);
  try {
    const auto prediction = s.model.predict(image);
    const auto explanation = explain::explain_prediction(prediction, s.model);
    return reply(200, json{{"version", s.version},
                           {"label", prediction.label ? json(*prediction.label) : json(nullptr)},
                           {"abstained", prediction.abstained()},
                           {"scores", prediction.scores},
                           {"explanation", codec::explanation_json(explanation)}});
  } catch (const InvalidArgument& e) {
    return error_reply(422, e.what());
  }
}

Response Session::shortcuts(double presence_thr, double overlap_thr) {
  auto& s = *impl_;
  if (!(presence_thr >= 0.0 && presence_thr <= 1.0) || !(overlap_thr >= 0.0 && overlap_thr <= 1.0))
    return error_reply(422, "thresholds must lie in [0,1]");
  if (!s.has_masks())
    return error_reply(422, "the train split has no artifact masks; generate data with data.confound_rate > 0");
  json j = codec::shortcut_json(s.shortcut_report(presence_thr, overlap_thr));
  std::shared_lock lock(s.model_mutex);
  j["version"] = s.version;
  return reply(200, j);
}

Response Session::counterfactual(const std::string& body) {
  auto& s = *impl_;
  json request = json::object();
  std::vector<std::size_t> adapt;
  double presence_thr = 0.1, overlap_thr = 0.2;
  std::uint64_t seed = 0;
  data::ArtifactDescriptor artifact = s.options.artifact;
  try {
    if (!body.empty()) request = json::parse(body);
    if (!request.is_object()) return error_reply(422, "counterfactual body must be a JSON object");
    presence_thr = request.value("presence_thr", presence_thr);
    overlap_thr = request.value("overlap_thr", overlap_thr);
    seed = request.value("seed", seed);
    artifact.size_fraction = request.value("size_fraction", artifact.size_fraction);
    const json spec = request.value("adapt", json("flagged"));
    if (spec.is_string()) {
      if (spec.get<std::string>() != "flagged") return error_reply(422, "adapt must be \"flagged\" or a list of ids");
      if (!s.has_masks()) return error_reply(422, "no artifact masks to flag prototypes with; pass explicit ids");
      adapt = s.shortcut_report(presence_thr, overlap_thr).flagged();
    } else {
      adapt = spec.get<std::vector<std::size_t>>();
    }
  } catch (const json::exception& e) {
    return error_reply(422, std::string("malformed counterfactual request: ") + e.what());
  }
  for (std::size_t id : adapt)
    if (id >= s.model.config().num_prototypes) return error_reply(404, "unknown prototype " + std::to_string(id));
  if (s.dataset.test.empty()) return error_reply(422, "the test split is empty");
  std::uint64_t version = 0;
  model::ProtoModel current = [&] {
    std::shared_lock lock(s.model_mutex);
    version = s.version;
    return s.model;
  }();
  try {
    const auto report = debug::counterfactual_eval(current, s.dataset.test, artifact, s.options.target_class, adapt,
                                                   seed, s.options.positive_class);
    json j = codec::counterfactual_json(report);
    j["version"] = version;
    return reply(200, j);
  } catch (const InvalidArgument& e) {
    return error_reply(422, e.what());
  }
}

Response Session::log() const {
  json entries = json::array();
  for (const auto& e : impl_->log.entries()) entries.push_back(codec::intervention_json(e));
  return reply(200, json{{"entries", entries}});
}

void Session::wait_for_jobs() {
  auto& s = *impl_;
  if (s.workers.empty()) {
    while (s.run_one(false)) {
    }
    return;
  }
  std::unique_lock lock(s.jobs_mutex);
  s.idle_cv.wait(lock, [&] { return s.queue.empty() && s.busy == 0; });
}

struct WorkbenchServer::Impl {
  Session& session;
  ServerOptions options;
  httplib::Server server;
  int port = -1;

  Impl(Session& s, ServerOptions o) : session(s), options(std::move(o)) {}

  static void send(httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  }

  static std::optional<std::size_t> parse_id(const std::string& text) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(text, &pos);
      if (pos != text.size()) return std::nullopt;
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  static std::string actor_of(const httplib::Request& req) {
    if (req.has_header("X-Actor")) return req.get_header_value("X-Actor");
    if (!req.body.empty()) {
      const auto j = json::parse(req.body, nullptr, false);
      if (j.is_object() && j.contains("actor") && j["actor"].is_string()) return j["actor"];
    }
    return "api";
  }

  void routes() {
    using httplib::Request;
    using httplib::Response;
    server.Get("/prototypes", [this](const Request&, Response& res) { send(res, session.prototypes()); });
    server.Get(R"(/prototypes/(\d+)/patches)", [this](const Request& req, Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return send(res, error_reply(404, "unknown prototype"));
      std::size_t k = 10;
      if (req.has_param("k")) {
        const auto parsed = parse_id(req.get_param_value("k"));
        if (!parsed) return send(res, error_reply(422, "k must be a non-negative integer"));
        k = *parsed;
      }
      const std::string split = req.has_param("split") ? req.get_param_value("split") : "train";
      send(res, session.patches(*id, k, split));
    });
    server.Post(R"(/prototypes/(\d+)/disable)", [this](const Request& req, Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return send(res, error_reply(404, "unknown prototype"));
      send(res, session.disable(*id, actor_of(req)));
    });
    server.Post(R"(/prototypes/(\d+)/enable)", [this](const Request& req, Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return send(res, error_reply(404, "unknown prototype"));
      send(res, session.enable(*id, actor_of(req)));
    });
    server.Get("/metrics", [this](const Request& req, Response& res) {
      send(res, session.metrics(req.has_param("subset") ? req.get_param_value("subset") : "test"));
    });
    server.Post("/evaluate", [this](const Request& req, Response& res) { send(res, session.evaluate(req.body)); });
    server.Get(R"(/jobs/([A-Za-z0-9_-]+))", [this](const Request& req, Response& res) { send(res, session.job(req.matches[1])); });
    server.Post("/predict", [this](const Request& req, Response& res) {
      if (req.is_multipart_form_data()) {
        if (req.files.empty()) return send(res, error_reply(422, "multipart body carries no file"));
        return send(res, session.predict(req.files.begin()->second.content));
      }
      send(res, session.predict(req.body));
    });
    server.Get("/shortcuts", [this](const Request& req, Response& res) {
      double p = 0.1, o = 0.2;
      try {
        if (req.has_param("presence_thr")) p = std::stod(req.get_param_value("presence_thr"));
        if (req.has_param("overlap_thr")) o = std::stod(req.get_param_value("overlap_thr"));
      } catch (const std::exception&) {
        return send(res, error_reply(422, "thresholds must be numbers"));
      }
      send(res, session.shortcuts(p, o));
    });
    server.Post("/counterfactual", [this](const Request& req, Response& res) { send(res, session.counterfactual(req.body)); });
    server.Get("/log", [this](const Request&, Response& res) { send(res, session.log()); });
    server.set_mount_point("/assets", session.assets_dir().string());
    server.set_exception_handler([](const Request&, Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(res, error_reply(500, what));
    });
  }
};

WorkbenchServer::WorkbenchServer(Session& session, ServerOptions options)
    : impl_(std::make_unique<Impl>(session, std::move(options))) {
  impl_->routes();
}

WorkbenchServer::~WorkbenchServer() { stop(); }

int WorkbenchServer::bind() {
  auto& s = *impl_;
  if (s.options.port == 0) {
    s.port = s.server.bind_to_any_port(s.options.host);
  } else {
    s.port = s.server.bind_to_port(s.options.host, s.options.port) ? s.options.port : -1;
  }
  if (s.port < 0) throw Error("cannot bind " + s.options.host + ":" + std::to_string(s.options.port));
  return s.port;
}

void WorkbenchServer::listen() { impl_->server.listen_after_bind(); }

void WorkbenchServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void WorkbenchServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace pipnet::api
