#include "pipnet/debug/debugger.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "json_codec.hpp"
#include "pipnet/error.hpp"
#include "pipnet/random.hpp"

namespace pipnet::debug {

namespace {

constexpr std::uint32_t kCounterfactualCorner = 21;

}  // namespace

std::vector<std::size_t> ShortcutReport::flagged() const {
  std::vector<std::size_t> out;
  for (const auto& p : prototypes)
    if (p.flagged) out.push_back(p.prototype);
  return out;
}

ShortcutReport detect_shortcuts(const model::ProtoModel& model, std::span<const model::PresenceVector> presence,
                                std::span<const data::DatasetItem> items, double presence_threshold,
                                double overlap_threshold) {
  if (presence.size() != items.size()) throw InvalidArgument("presence and items differ in length");
  if (std::none_of(items.begin(), items.end(), [](const data::DatasetItem& it) { return it.has_artifact(); })) {
    throw InvalidArgument(
        "no artifact masks in this dataset; generate data with data.confound_rate > 0 and scan the train split");
  }
  ShortcutReport report;
  report.presence_threshold = presence_threshold;
  report.overlap_threshold = overlap_threshold;
  const std::size_t protos = model.sheet().num_prototypes();
  report.prototypes.resize(protos);
  for (std::size_t i = 0; i < protos; ++i) report.prototypes[i].prototype = i;
  for (std::size_t n = 0; n < items.size(); ++n) {
    if (presence[n].size() != protos) throw InvalidArgument("presence does not match the model");
    for (std::size_t i = 0; i < protos; ++i) {
      if (!(presence[n].scores[i] > presence_threshold)) continue;
      auto& p = report.prototypes[i];
      p.activations += 1;
      if (items[n].mask &&
          mask_pixels_in(*items[n].mask, model::patch_rectangle(presence[n].locations[i], model.config())) > 0)
        p.overlaps += 1;
    }
  }
  for (auto& p : report.prototypes) {
    p.overlap_fraction = p.activations > 0 ? double(p.overlaps) / double(p.activations) : 0.0;
    p.flagged = p.activations > 0 && p.overlap_fraction >= overlap_threshold;
  }
  return report;
}

ShortcutReport detect_shortcuts(const model::ProtoModel& model, std::span<const data::DatasetItem> items,
                                double presence_threshold, double overlap_threshold) {
  if (std::none_of(items.begin(), items.end(), [](const data::DatasetItem& it) { return it.has_artifact(); })) {
    return detect_shortcuts(model, {}, {}, presence_threshold, overlap_threshold);
  }
  const auto presence = model.presence_batch(data::images_of(items));
  return detect_shortcuts(model, presence, items, presence_threshold, overlap_threshold);
}

std::string to_string(Action action) { return action == Action::Disable ? "disable" : "enable"; }

Action action_from_string(const std::string& name) {
  if (name == "disable") return Action::Disable;
  if (name == "enable") return Action::Enable;
  throw InvalidArgument("unknown intervention action '" + name + "'");
}

InterventionLog::InterventionLog(const InterventionLog& other) {
  std::lock_guard lock(other.mutex_);
  entries_ = other.entries_;
  path_ = other.path_;
}

InterventionLog& InterventionLog::operator=(const InterventionLog& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  entries_ = other.entries_;
  path_ = other.path_;
  return *this;
}

InterventionLog InterventionLog::parse_jsonl(const std::string& text) {
  InterventionLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      log.entries_.push_back(codec::intervention_from_json(codec::json::parse(line)));
    } catch (const codec::json::exception& e) {
      throw IoError("intervention log line " + std::to_string(number) + ": " + e.what());
    }
  }
  return log;
}

InterventionLog InterventionLog::open(const std::filesystem::path& path) {
  InterventionLog log;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    log = parse_jsonl(buffer.str());
  }
  log.path_ = path;
  return log;
}

void InterventionLog::append(InterventionEntry entry) {
  std::lock_guard lock(mutex_);
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    if (!out) throw IoError("cannot append to " + path_->string());
    out << codec::intervention_json(entry).dump() << '\n';
  }
  entries_.push_back(std::move(entry));
}

std::vector<InterventionEntry> InterventionLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t InterventionLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string InterventionLog::to_jsonl() const {
  std::lock_guard lock(mutex_);
  std::string out;
  for (const auto& e : entries_) out += codec::intervention_json(e).dump() + "\n";
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

void apply(model::ProtoModel& model, std::span<const std::size_t> ids, Action action, InterventionLog& log,
           const std::string& actor, const std::string& before, const std::string& after) {
  for (std::size_t id : ids)
    if (id >= model.sheet().num_prototypes())
      throw InvalidArgument("prototype " + std::to_string(id) + " out of range");
  for (std::size_t id : ids) {
    if (action == Action::Disable) {
      model.sheet().disable(id);
    } else {
      model.sheet().enable(id);
    }
    log.append(InterventionEntry{utc_timestamp(), id, action, actor, before, after});
  }
}

}  // namespace

void disable(model::ProtoModel& model, std::span<const std::size_t> ids, InterventionLog& log, const std::string& actor,
             const std::string& metrics_before, const std::string& metrics_after) {
  apply(model, ids, Action::Disable, log, actor, metrics_before, metrics_after);
}

void enable(model::ProtoModel& model, std::span<const std::size_t> ids, InterventionLog& log, const std::string& actor,
            const std::string& metrics_before, const std::string& metrics_after) {
  apply(model, ids, Action::Enable, log, actor, metrics_before, metrics_after);
}

model::ProtoModel replay(const model::ProtoModel& base, const InterventionLog& log) {
  model::ProtoModel out = base;
  for (const auto& e : log.entries()) {
    if (e.prototype >= out.sheet().num_prototypes())
      throw InvalidArgument("log entry refers to prototype " + std::to_string(e.prototype) + " outside the model");
    if (e.action == Action::Disable) {
      out.sheet().disable(e.prototype);
    } else {
      out.sheet().enable(e.prototype);
    }
  }
  return out;
}

const CounterfactualRow& CounterfactualReport::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw InvalidArgument("no counterfactual row '" + name + "'");
}

namespace {

CounterfactualRow evaluate_row(std::string name, const std::vector<Image>& images,
                               const std::vector<std::size_t>& labels, const model::ProtoModel& original,
                               const model::ProtoModel& adapted, std::size_t positive_class) {
  CounterfactualRow row;
  row.name = std::move(name);
  row.count = images.size();
  if (images.empty()) return row;
  // Both models share the backbone, so one presence scan serves both sheets.
  const auto presence = original.presence_batch(images);
  std::vector<model::Prediction> a, b;
  for (const auto& p : presence) {
    a.push_back(model::classify(p, original.sheet(), original.config().abstain_epsilon));
    b.push_back(model::classify(p, adapted.sheet(), adapted.config().abstain_epsilon));
  }
  row.original = explain::summarize(a, labels, original.sheet(), positive_class);
  row.adapted = explain::summarize(b, labels, adapted.sheet(), positive_class);
  return row;
}

}  // namespace

CounterfactualReport counterfactual_eval(const model::ProtoModel& model, std::span<const data::DatasetItem> test,
                                         const data::ArtifactDescriptor& artifact, std::size_t target_class,
                                         std::span<const std::size_t> adapt_ids, std::uint64_t seed,
                                         std::size_t positive_class) {
  if (test.empty()) throw InvalidArgument("counterfactual_eval needs test items");
  if (target_class >= model.sheet().num_classes()) throw InvalidArgument("target class out of range");
  model::ProtoModel adapted = model;
  for (std::size_t id : adapt_ids) adapted.sheet().disable(id);

  CounterfactualReport report;
  report.target_class = target_class;
  report.disabled.assign(adapt_ids.begin(), adapt_ids.end());
  std::sort(report.disabled.begin(), report.disabled.end());
  report.disabled.erase(std::unique(report.disabled.begin(), report.disabled.end()), report.disabled.end());
  report.artifact = artifact;

  std::vector<Image> all, clean, target, other;
  std::vector<std::size_t> all_l, clean_l, target_l, other_l;
  for (std::size_t n = 0; n < test.size(); ++n) {
    const auto& item = test[n];
    all.push_back(item.image);
    all_l.push_back(item.label);
    if (!item.has_artifact()) {
      clean.push_back(item.image);
      clean_l.push_back(item.label);
    }
    Image with = item.image;
    if (!item.has_artifact()) {
      const auto placement =
          data::place_artifact(artifact, item.image.height, stream_rng(seed, n, kCounterfactualCorner)());
      with = data::insert_artifact(item.image, placement).image;
    }
    auto& dst = item.label == target_class ? target : other;
    auto& dst_l = item.label == target_class ? target_l : other_l;
    dst.push_back(std::move(with));
    dst_l.push_back(item.label);
  }
  report.rows.push_back(evaluate_row("test", all, all_l, model, adapted, positive_class));
  report.rows.push_back(evaluate_row("test_without_artifact", clean, clean_l, model, adapted, positive_class));
  report.rows.push_back(evaluate_row("target_with_artifact", target, target_l, model, adapted, positive_class));
  report.rows.push_back(evaluate_row("other_with_artifact", other, other_l, model, adapted, positive_class));
  return report;
}

AbstentionReport abstention_report(const model::ProtoModel& model, std::span<const data::DatasetItem> items) {
  AbstentionReport report;
  report.count = items.size();
  const auto predictions = model.predict_batch(data::images_of(items));
  for (std::size_t n = 0; n < items.size(); ++n) {
    if (!predictions[n].abstained()) continue;
    report.indices.push_back(n);
    report.refs.push_back(items[n].relpath);
  }
  report.fraction = items.empty() ? 0.0 : double(report.indices.size()) / double(items.size());
  return report;
}

std::string to_json(const ShortcutReport& report) { return codec::shortcut_json(report).dump(); }
std::string to_json(const CounterfactualReport& report) { return codec::counterfactual_json(report).dump(); }
std::string to_json(const AbstentionReport& report) { return codec::abstention_json(report).dump(); }

}  // namespace pipnet::debug
