#include "json_codec.hpp"

namespace pipnet::codec {

json rect_json(const Rect& r) {
  return json{{"row_begin", r.row_begin}, {"col_begin", r.col_begin}, {"row_end", r.row_end}, {"col_end", r.col_end}};
}

json metrics_json(const explain::MetricsReport& r) {
  return json{{"count", r.count},
              {"positive_class", r.positive_class},
              {"accuracy", r.accuracy},
              {"f1", r.f1},
              {"sensitivity", r.sensitivity},
              {"specificity", r.specificity},
              {"sparsity", r.sparsity},
              {"global_size", r.global_size},
              {"mean_local_size", r.mean_local_size},
              {"abstain_fraction", r.abstain_fraction},
              {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}}}};
}

explain::MetricsReport metrics_from_json(const json& j) {
  explain::MetricsReport r;
  r.count = j.at("count");
  r.positive_class = j.at("positive_class");
  r.accuracy = j.at("accuracy");
  r.f1 = j.at("f1");
  r.sensitivity = j.at("sensitivity");
  r.specificity = j.at("specificity");
  r.sparsity = j.at("sparsity");
  r.global_size = j.at("global_size");
  r.mean_local_size = j.at("mean_local_size");
  r.abstain_fraction = j.at("abstain_fraction");
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp"), c.at("fp"), c.at("fn"), c.at("tn")};
  return r;
}

json card_json(const explain::PrototypeCard& card) {
  json patches = json::array();
  for (const auto& p : card.patches)
    patches.push_back({{"image_index", p.image_index}, {"image", p.image_ref}, {"rect", rect_json(p.rect)}, {"score", p.score}});
  return json{{"id", card.id}, {"weights", card.weights}, {"status", explain::to_string(card.status)}, {"patches", patches}};
}

json explanation_json(const explain::Explanation& e) {
  json listed = json::array();
  for (const auto& c : e.listed)
    listed.push_back({{"prototype", c.prototype},
                      {"presence", c.presence},
                      {"cell", {c.cell.row, c.cell.col}},
                      {"rect", rect_json(c.rect)},
                      {"contribution", c.per_class}});
  return json{{"label", e.label ? json(*e.label) : json(nullptr)},
              {"abstained", e.abstained()},
              {"scores", e.scores},
              {"listed", listed},
              {"omitted", e.omitted}};
}

json shortcut_json(const debug::ShortcutReport& report) {
  json protos = json::array();
  for (const auto& p : report.prototypes)
    protos.push_back({{"prototype", p.prototype},
                      {"activations", p.activations},
                      {"overlaps", p.overlaps},
                      {"overlap_fraction", p.overlap_fraction},
                      {"flagged", p.flagged}});
  return json{{"presence_threshold", report.presence_threshold},
              {"overlap_threshold", report.overlap_threshold},
              {"flagged", report.flagged()},
              {"prototypes", protos}};
}

json counterfactual_json(const debug::CounterfactualReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"name", r.name}, {"count", r.count}, {"original", metrics_json(r.original)}, {"adapted", metrics_json(r.adapted)}});
  const auto& a = report.artifact;
  return json{{"target_class", report.target_class},
              {"disabled", report.disabled},
              {"artifact",
               {{"size_fraction", a.size_fraction},
                {"color", a.color},
                {"corner", data::to_string(a.corner)},
                {"margin", a.margin}}},
              {"rows", rows}};
}

json intervention_json(const debug::InterventionEntry& e) {
  return json{{"timestamp", e.timestamp},
              {"prototype", e.prototype},
              {"action", debug::to_string(e.action)},
              {"actor", e.actor},
              {"metrics_before", e.metrics_before},
              {"metrics_after", e.metrics_after}};
}

debug::InterventionEntry intervention_from_json(const json& j) {
  debug::InterventionEntry e;
  e.timestamp = j.at("timestamp");
  e.prototype = j.at("prototype");
  e.action = debug::action_from_string(j.at("action"));
  e.actor = j.value("actor", "");
  e.metrics_before = j.value("metrics_before", "");
  e.metrics_after = j.value("metrics_after", "");
  return e;
}

json abstention_json(const debug::AbstentionReport& report) {
  return json{{"count", report.count}, {"fraction", report.fraction}, {"indices", report.indices}, {"refs", report.refs}};
}

}  // namespace pipnet::codec
