#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <thread>

#include "pipnet/api/workbench.hpp"
#include "pipnet/data/synthetic.hpp"
#include "pipnet/debug/debugger.hpp"
#include "pipnet/error.hpp"
#include "pipnet/explain/explanation.hpp"
#include "pipnet/explain/metrics.hpp"
#include "pipnet/model/checkpoint.hpp"
#include "pipnet/train/trainer.hpp"

namespace pipnet::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kStageKey = "stage";
constexpr const char* kResolvedName = "resolved.cfg";

// Settings of the debugging subcommands.
struct DebugConfig {
  double presence_thr = 0.1;
  double overlap_thr = 0.2;
  std::size_t target_class = 1;  // class the artifact is confounded with
  std::size_t positive_class = 1;
  std::size_t top_k = 10;
  std::string scan_split = "train";  // split scanned for patches and shortcuts
  std::uint64_t seed = 0;            // counterfactual artifact placement

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    kv.set("debug.presence_thr", format_double(presence_thr));
    kv.set("debug.overlap_thr", format_double(overlap_thr));
    kv.set("debug.target_class", std::to_string(target_class));
    kv.set("debug.positive_class", std::to_string(positive_class));
    kv.set("debug.top_k", std::to_string(top_k));
    kv.set("debug.scan_split", scan_split);
    kv.set("debug.seed", std::to_string(seed));
    return kv;
  }

  void apply(const KeyValueConfig& kv) {
    for (const auto& [key, value] : kv.entries()) {
      if (key.rfind("debug.", 0) != 0) continue;
      const std::string name = key.substr(6);
      if (name == "presence_thr") presence_thr = parse_double(key, value);
      else if (name == "overlap_thr") overlap_thr = parse_double(key, value);
      else if (name == "target_class") target_class = parse_size(key, value);
      else if (name == "positive_class") positive_class = parse_size(key, value);
      else if (name == "top_k") top_k = parse_size(key, value);
      else if (name == "scan_split") scan_split = value;
      else if (name == "seed") seed = parse_u64(key, value);
      else throw InvalidArgument("unknown config key '" + key + "'");
    }
    if (scan_split != "train" && scan_split != "test" && scan_split != "counterfactual") {
      throw InvalidArgument("debug.scan_split must be train, test or counterfactual");
    }
    if (top_k == 0) throw InvalidArgument("debug.top_k must be >= 1");
  }
};

struct Settings {
  data::SyntheticSpec data;
  model::ModelConfig model;
  train::TrainConfig train;
  DebugConfig debug;

  static Settings from(const KeyValueConfig& kv) {
    Settings s;
    s.data.apply(kv);
    s.model.apply(kv);
    s.train.apply(kv);
    s.debug.apply(kv);
    s.data.validate();
    s.model.validate();
    s.train.validate();
    return s;
  }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv = data.to_kv();
    kv.merge(model.to_kv());
    kv.merge(train.to_kv());
    kv.merge(debug.to_kv());
    return kv;
  }
};

// Flags shared by every subcommand; unused ones are simply not registered.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::string checkpoint;
  std::string dataset;
  bool force = false;
  std::optional<double> presence_thr;
  std::optional<double> overlap_thr;
  std::string prototypes;
  std::string spec = "default";
  std::string subset = "test";
  std::string actor = "cli";
  std::string host = "127.0.0.1";
  int port = 8080;
};

class Failure : public Error {
 public:
  Failure(std::string kind, const std::string& message) : Error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Claims the output directory: refuses a non-empty one unless --force, in
// which case its contents are removed first.
void claim_output(const Flags& flags) {
  if (flags.output.empty()) throw Failure("usage", "--output is required");
  const fs::path out = flags.output;
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw Failure("output_exists", out.string() + " exists and is not a directory");
    if (!fs::is_empty(out)) {
      if (!flags.force) {
        throw Failure("output_exists", out.string() + " is not empty; pass --force to overwrite");
      }
      fs::remove_all(out);
    }
  }
  fs::create_directories(out);
}

KeyValueConfig load_overrides(const Flags& flags) {
  if (flags.config.empty()) return {};
  if (!fs::exists(flags.config)) throw IoError("config file not found: " + flags.config);
  return KeyValueConfig::load(flags.config);
}

data::Dataset open_dataset(const Flags& flags) {
  if (flags.dataset.empty()) throw Failure("usage", "--dataset is required");
  if (!fs::is_directory(flags.dataset)) throw IoError("dataset directory not found: " + flags.dataset);
  return data::load_dataset(flags.dataset);
}

model::Checkpoint open_checkpoint(const Flags& flags, const std::string& needed_for) {
  if (flags.checkpoint.empty()) throw Failure("usage", "--checkpoint is required");
  if (!fs::is_directory(flags.checkpoint)) {
    throw Failure("missing_checkpoint", needed_for + " needs a checkpoint; " + flags.checkpoint + " does not exist");
  }
  return model::load_checkpoint(flags.checkpoint);
}

// Artifact of the generated dataset, read back from its spec.cfg.
data::ArtifactDescriptor dataset_artifact(const Flags& flags, const Settings& settings) {
  const fs::path spec = fs::path(flags.dataset) / "spec.cfg";
  if (!fs::exists(spec)) return settings.data.artifact;
  data::SyntheticSpec s;
  s.apply(KeyValueConfig::load(spec));
  return s.artifact;
}

// Resolved config with the checkpoint's model section, saved next to outputs.
void save_resolved(const Flags& flags, Settings settings, const model::ModelConfig* model_config = nullptr) {
  if (model_config) settings.model = *model_config;
  settings.to_kv().save(fs::path(flags.output) / kResolvedName);
}

Settings settings_for(const Flags& flags, const std::string& seed_key) {
  KeyValueConfig kv = resolve_config(load_overrides(flags));
  if (flags.seed) kv.set(seed_key, std::to_string(*flags.seed));
  if (flags.presence_thr) kv.set("debug.presence_thr", format_double(*flags.presence_thr));
  if (flags.overlap_thr) kv.set("debug.overlap_thr", format_double(*flags.overlap_thr));
  return Settings::from(kv);
}

std::vector<std::size_t> parse_ids(const std::string& text) {
  if (text.empty()) return {};
  return parse_size_list("--prototypes", text);
}

void progress_printer(std::ostream& out, const train::Progress& p) {
  const std::size_t every = std::max<std::size_t>(1, p.total / 20);
  if (p.step % every != 0 && p.step != p.total) return;
  out << p.stage << " " << p.step << "/" << p.total << " loss " << format_double(p.loss) << "\n" << std::flush;
}

int cmd_gen_data(const Flags& flags, std::ostream& out) {
  KeyValueConfig kv = resolve_config(load_overrides(flags));
  if (flags.spec == "tiny") {
    // The tiny preset only shrinks the counts; explicit overrides still win.
    const auto tiny = data::SyntheticSpec::tiny().to_kv();
    const auto overrides = load_overrides(flags);
    for (const auto& [k, v] : tiny.entries())
      if (!overrides.contains(k)) kv.set(k, v);
  } else if (flags.spec != "default") {
    throw Failure("usage", "--spec must be default or tiny");
  }
  if (flags.seed) kv.set("data.seed", std::to_string(*flags.seed));
  const Settings settings = Settings::from(kv);
  claim_output(flags);
  const auto ds = data::generate(settings.data, flags.output);
  save_resolved(flags, settings);
  out << "generated " << ds.train.size() << " train, " << ds.test.size() << " test, " << ds.counterfactual.size()
      << " counterfactual images in " << flags.output << "\n";
  return kExitOk;
}

int cmd_pretrain(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "train.seed");
  const auto ds = open_dataset(flags);
  claim_output(flags);
  model::ModelConfig config = settings.model;
  config.num_classes = ds.num_classes;
  model::ProtoModel model(config, settings.train.seed);
  const auto images = data::images_of(ds.train);
  train::pretrain_prototypes(model, images, settings.train,
                             [&](const train::Progress& p) { progress_printer(out, p); });
  KeyValueConfig meta;
  meta.set(kStageKey, "pretrained");
  model::save_checkpoint(flags.output, model, meta);
  save_resolved(flags, settings, &config);
  const auto held_out = data::images_of(ds.test);
  out << "alignment agreement " << format_double(train::alignment_agreement(model, held_out, settings.train, 99))
      << "\n";
  return kExitOk;
}

int cmd_train(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "train.seed");
  if (flags.checkpoint.empty()) {
    throw Failure("missing_checkpoint", "train needs a pretrained checkpoint; run 'pipnet pretrain' and pass --checkpoint");
  }
  auto ckpt = open_checkpoint(flags, "train");
  const auto stage = ckpt.metadata.get(kStageKey);
  if (!stage || (*stage != "pretrained" && *stage != "trained")) {
    throw Failure("missing_checkpoint", flags.checkpoint + " was not written by 'pipnet pretrain'");
  }
  const auto ds = open_dataset(flags);
  claim_output(flags);
  auto& model = ckpt.model;
  const auto images = data::images_of(ds.train);
  const auto labels = data::labels_of(ds.train);
  const auto test_images = data::images_of(ds.test);
  const auto test_labels = data::labels_of(ds.test);
  const auto curve = train::train_classifier(model, images, labels, settings.train, test_images, test_labels,
                                             [&](const train::Progress& p) { progress_printer(out, p); });
  KeyValueConfig meta;
  meta.set(kStageKey, "trained");
  model::save_checkpoint(flags.output, model, meta);
  write_text(fs::path(flags.output) / "curve.csv", curve.to_csv());
  const auto report =
      explain::compute_metrics(model, test_images, test_labels, settings.train.positive_class);
  write_text(fs::path(flags.output) / "metrics.json", explain::to_json(report));
  save_resolved(flags, settings, &model.config());
  out << "test accuracy " << format_double(report.accuracy) << " sparsity " << format_double(report.sparsity)
      << "\n";
  return kExitOk;
}

int cmd_eval(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "train.seed");
  const auto ckpt = open_checkpoint(flags, "eval");
  const auto ds = open_dataset(flags);
  const auto& items = ds.split(flags.subset);
  claim_output(flags);
  const auto images = data::images_of(items);
  const auto report =
      explain::compute_metrics(ckpt.model, images, data::labels_of(items), settings.debug.positive_class);
  write_text(fs::path(flags.output) / "metrics.json", explain::to_json(report));
  write_text(fs::path(flags.output) / "abstention.json",
             debug::to_json(debug::abstention_report(ckpt.model, items)));
  save_resolved(flags, settings, &ckpt.model.config());
  out << explain::to_json(report) << "\n";
  return kExitOk;
}

int cmd_explain(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "train.seed");
  const auto ckpt = open_checkpoint(flags, "explain");
  const auto ds = open_dataset(flags);
  claim_output(flags);
  const auto& model = ckpt.model;
  const auto& scanned = ds.split(settings.debug.scan_split);
  const auto global = explain::global_explanation(model);
  json global_json = json::array();
  for (const auto& card : global) global_json.push_back(json::parse(explain::to_json(card)));
  write_text(fs::path(flags.output) / "global.json", global_json.dump(2));

  const auto cards = explain::all_top_patches(model, scanned, settings.debug.top_k);
  std::vector<explain::PrototypeCard> relevant;
  for (const auto& card : cards)
    if (model.sheet().is_relevant(card.id)) relevant.push_back(card);
  explain::export_patches(relevant, scanned, fs::path(flags.output) / "patches");

  std::ofstream local(fs::path(flags.output) / "local.jsonl");
  for (const auto& item : ds.test) {
    json line = json::parse(explain::to_json(explain::local_explanation(model, item.image)));
    line["image"] = item.relpath;
    line["true_label"] = item.label;
    local << line.dump() << "\n";
  }
  if (!local) throw IoError("cannot write local.jsonl");
  save_resolved(flags, settings, &model.config());
  out << "global explanation size " << global.size() << ", patches for " << relevant.size() << " prototypes\n";
  return kExitOk;
}

debug::ShortcutReport scan_shortcuts(const model::ProtoModel& model, const data::Dataset& ds, const Settings& s) {
  return debug::detect_shortcuts(model, ds.split(s.debug.scan_split), s.debug.presence_thr, s.debug.overlap_thr);
}

int cmd_detect_shortcuts(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "train.seed");
  const auto ckpt = open_checkpoint(flags, "detect-shortcuts");
  const auto ds = open_dataset(flags);
  claim_output(flags);
  const auto report = scan_shortcuts(ckpt.model, ds, settings);
  write_text(fs::path(flags.output) / "shortcuts.json", debug::to_json(report));
  save_resolved(flags, settings, &ckpt.model.config());
  out << "flagged";
  for (std::size_t id : report.flagged()) out << " " << id;
  out << "\n";
  return kExitOk;
}

int cmd_disable(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "train.seed");
  auto ckpt = open_checkpoint(flags, "disable");
  const auto ids = parse_ids(flags.prototypes);
  if (ids.empty()) throw Failure("usage", "--prototypes needs at least one id");
  std::optional<data::Dataset> ds;
  if (!flags.dataset.empty()) ds = open_dataset(flags);
  claim_output(flags);
  auto metrics_of = [&](const model::ProtoModel& m) -> std::string {
    if (!ds) return "";
    return explain::to_json(explain::compute_metrics(m, data::images_of(ds->test), data::labels_of(ds->test),
                                                     settings.debug.positive_class));
  };
  model::ProtoModel after = ckpt.model;
  for (std::size_t id : ids)
    if (id >= after.sheet().num_prototypes())
      throw InvalidArgument("prototype " + std::to_string(id) + " out of range");
  for (std::size_t id : ids) after.sheet().disable(id);
  const std::string before_json = metrics_of(ckpt.model);
  const std::string after_json = metrics_of(after);

  // The new checkpoint carries the source's log plus the new entries.
  const fs::path log_path = fs::path(flags.output) / "interventions.jsonl";
  const fs::path source_log = fs::path(flags.checkpoint) / "interventions.jsonl";
  if (fs::exists(source_log)) fs::copy_file(source_log, log_path);
  auto log = debug::InterventionLog::open(log_path);
  debug::disable(ckpt.model, ids, log, flags.actor, before_json, after_json);
  model::save_checkpoint(flags.output, ckpt.model, ckpt.metadata);
  save_resolved(flags, settings, &ckpt.model.config());
  out << "disabled " << ids.size() << " prototypes; global explanation size "
      << explain::global_size(ckpt.model.sheet()) << "\n";
  return kExitOk;
}

int cmd_counterfactual(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "debug.seed");
  const auto ckpt = open_checkpoint(flags, "counterfactual");
  const auto ds = open_dataset(flags);
  claim_output(flags);
  std::vector<std::size_t> adapt;
  if (flags.prototypes.empty() || flags.prototypes == "flagged") {
    const auto shortcuts = scan_shortcuts(ckpt.model, ds, settings);
    write_text(fs::path(flags.output) / "shortcuts.json", debug::to_json(shortcuts));
    adapt = shortcuts.flagged();
  } else {
    adapt = parse_ids(flags.prototypes);
  }
  const auto report = debug::counterfactual_eval(ckpt.model, ds.test, dataset_artifact(flags, settings),
                                                 settings.debug.target_class, adapt, settings.debug.seed,
                                                 settings.debug.positive_class);
  write_text(fs::path(flags.output) / "counterfactual.json", debug::to_json(report));
  save_resolved(flags, settings, &ckpt.model.config());
  out << "subset,count,original_accuracy,adapted_accuracy\n";
  for (const auto& row : report.rows) {
    out << row.name << "," << row.count << "," << format_double(row.original.accuracy) << ","
        << format_double(row.adapted.accuracy) << "\n";
  }
  return kExitOk;
}

int cmd_serve(const Flags& flags, std::ostream& out) {
  const Settings settings = settings_for(flags, "train.seed");
  if (flags.checkpoint.empty()) throw Failure("usage", "--checkpoint is required");
  if (flags.dataset.empty()) throw Failure("usage", "--dataset is required");
  api::SessionOptions options;
  options.positive_class = settings.debug.positive_class;
  options.target_class = settings.debug.target_class;
  if (!flags.output.empty()) {
    fs::create_directories(flags.output);
    options.assets_dir = fs::path(flags.output) / "assets";
    options.log_path = fs::path(flags.output) / "interventions.jsonl";
  }
  auto session = api::Session::open(flags.checkpoint, flags.dataset, options);
  api::WorkbenchServer server(*session, {flags.host, flags.port});

  // SIGINT/SIGTERM are taken by a waiter thread that stops the server.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const int port = server.bind();
  out << "serving on http://" << flags.host << ":" << port << "\n" << std::flush;
  std::thread waiter([&] {
    int received = 0;
    sigwait(&signals, &received);
    server.stop();
  });
  server.listen();
  // listen() can also return on its own; wake the waiter if so.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  session->wait_for_jobs();
  return kExitOk;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value file overriding defaults");
  cmd->add_option("--seed", f.seed, "seed for this step");
  cmd->add_option("--output", f.output, "output directory");
  cmd->add_flag("--force", f.force, "overwrite a non-empty output directory");
}

void add_model_inputs(CLI::App* cmd, Flags& f, bool dataset_required) {
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint directory");
  auto* opt = cmd->add_option("--dataset", f.dataset, "generated dataset directory");
  if (dataset_required) opt->required();
}

void add_thresholds(CLI::App* cmd, Flags& f) {
  cmd->add_option("--presence-thr", f.presence_thr, "presence threshold for shortcut detection");
  cmd->add_option("--overlap-thr", f.overlap_thr, "overlap fraction threshold for shortcut detection");
}

std::string error_line(const std::string& kind, const std::string& message) {
  return json{{"error", kind}, {"message", message}}.dump();
}

}  // namespace

KeyValueConfig default_config() { return Settings{}.to_kv(); }

KeyValueConfig resolve_config(const KeyValueConfig& overrides) {
  const KeyValueConfig defaults = default_config();
  for (const auto& [key, value] : overrides.entries()) {
    if (!defaults.contains(key)) throw InvalidArgument("unknown config key '" + key + "'");
  }
  KeyValueConfig merged = defaults;
  merged.merge(overrides);
  Settings::from(merged);  // value checks
  return merged;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pipnet: prototype classifier training, explanation and debugging"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic confounded dataset");
  add_common(gen, f);
  gen->add_option("--spec", f.spec, "preset: default or tiny");

  auto* pre = app.add_subcommand("pretrain", "self-supervised prototype pretraining");
  add_common(pre, f);
  pre->add_option("--dataset", f.dataset, "generated dataset directory")->required();

  auto* trn = app.add_subcommand("train", "train the scoring sheet from a pretrained checkpoint");
  add_common(trn, f);
  add_model_inputs(trn, f, true);

  auto* evl = app.add_subcommand("eval", "metrics and abstentions on one split");
  add_common(evl, f);
  add_model_inputs(evl, f, true);
  evl->add_option("--subset", f.subset, "train, test or counterfactual");

  auto* exp = app.add_subcommand("explain", "export global, local and patch explanations");
  add_common(exp, f);
  add_model_inputs(exp, f, true);

  auto* det = app.add_subcommand("detect-shortcuts", "flag prototypes whose patches overlap artifact masks");
  add_common(det, f);
  add_model_inputs(det, f, true);
  add_thresholds(det, f);

  auto* dis = app.add_subcommand("disable", "disable prototypes and write an adapted checkpoint");
  add_common(dis, f);
  add_model_inputs(dis, f, false);
  dis->add_option("--prototypes", f.prototypes, "comma separated prototype ids")->required();
  dis->add_option("--actor", f.actor, "name recorded in the intervention log");

  auto* cf = app.add_subcommand("counterfactual", "original vs adapted accuracy with inserted artifacts");
  add_common(cf, f);
  add_model_inputs(cf, f, true);
  add_thresholds(cf, f);
  cf->add_option("--prototypes", f.prototypes, "ids to disable, or 'flagged' (default)");

  auto* srv = app.add_subcommand("serve", "serve the workbench HTTP API");
  srv->add_option("--config", f.config, "key=value file overriding defaults");
  srv->add_option("--output", f.output, "directory for patch assets and the intervention log");
  add_model_inputs(srv, f, true);
  srv->add_option("--host", f.host, "bind address");
  srv->add_option("--port", f.port, "port, 0 picks a free one");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()) << "\n";
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out);
    if (pre->parsed()) return cmd_pretrain(f, out);
    if (trn->parsed()) return cmd_train(f, out);
    if (evl->parsed()) return cmd_eval(f, out);
    if (exp->parsed()) return cmd_explain(f, out);
    if (det->parsed()) return cmd_detect_shortcuts(f, out);
    if (dis->parsed()) return cmd_disable(f, out);
    if (cf->parsed()) return cmd_counterfactual(f, out);
    if (srv->parsed()) return cmd_serve(f, out);
  } catch (const Failure& e) {
    err << error_line(e.kind(), e.what()) << "\n";
    return e.kind() == "usage" ? kExitUsage : kExitFailure;
  } catch (const InvalidArgument& e) {
    err << error_line("invalid_argument", e.what()) << "\n";
    return kExitFailure;
  } catch (const IoError& e) {
    err << error_line("io", e.what()) << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << error_line("error", e.what()) << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace pipnet::cli
