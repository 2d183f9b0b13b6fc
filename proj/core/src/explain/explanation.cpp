#include "pipnet/explain/explanation.hpp"

#include <algorithm>
#include <fstream>

#include "json_codec.hpp"
#include "pipnet/data/image_io.hpp"
#include "pipnet/error.hpp"

namespace pipnet::explain {

std::string to_string(PrototypeStatus status) { return status == PrototypeStatus::Active ? "active" : "disabled"; }

double PrototypeCard::max_weight() const {
  return weights.empty() ? 0.0 : *std::max_element(weights.begin(), weights.end());
}

PrototypeCard prototype_card(const model::ProtoModel& model, std::size_t id) {
  const auto& sheet = model.sheet();
  if (id >= sheet.num_prototypes()) {
    throw InvalidArgument("prototype " + std::to_string(id) + " out of range (P=" +
                          std::to_string(sheet.num_prototypes()) + ")");
  }
  PrototypeCard card;
  card.id = id;
  for (std::size_t c = 0; c < sheet.num_classes(); ++c) card.weights.push_back(sheet.effective_weight(id, c));
  card.status = sheet.is_disabled(id) ? PrototypeStatus::Disabled : PrototypeStatus::Active;
  return card;
}

PrototypeCard top_patches(const model::ProtoModel& model, std::span<const model::PresenceVector> presence,
                          std::span<const data::DatasetItem> items, std::size_t id, std::size_t k) {
  if (items.empty()) throw InvalidArgument("top_patches needs a nonempty dataset");
  if (presence.size() != items.size()) throw InvalidArgument("presence and items differ in length");
  PrototypeCard card = prototype_card(model, id);
  std::vector<std::size_t> order(items.size());
  for (std::size_t n = 0; n < order.size(); ++n) order[n] = n;
  const std::size_t keep = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = presence[a].scores[id], sb = presence[b].scores[id];
    return sa != sb ? sa > sb : a < b;
  });
  for (std::size_t r = 0; r < keep; ++r) {
    const std::size_t n = order[r];
    card.patches.push_back(PatchRef{n, items[n].relpath, model::patch_rectangle(presence[n].locations[id], model.config()),
                                    presence[n].scores[id]});
  }
  return card;
}

PrototypeCard top_patches(const model::ProtoModel& model, std::span<const data::DatasetItem> items, std::size_t id,
                          std::size_t k) {
  if (items.empty()) throw InvalidArgument("top_patches needs a nonempty dataset");
  prototype_card(model, id);  // validates id before the scan
  const auto presence = model.presence_batch(data::images_of(items));
  return top_patches(model, presence, items, id, k);
}

std::vector<PrototypeCard> all_top_patches(const model::ProtoModel& model, std::span<const data::DatasetItem> items,
                                           std::size_t k) {
  if (items.empty()) throw InvalidArgument("top_patches needs a nonempty dataset");
  const auto presence = model.presence_batch(data::images_of(items));
  std::vector<PrototypeCard> cards;
  for (std::size_t id = 0; id < model.sheet().num_prototypes(); ++id)
    cards.push_back(top_patches(model, presence, items, id, k));
  return cards;
}

std::vector<PrototypeCard> global_explanation(const model::ProtoModel& model) {
  std::vector<PrototypeCard> cards;
  for (std::size_t id = 0; id < model.sheet().num_prototypes(); ++id)
    if (model.sheet().is_relevant(id)) cards.push_back(prototype_card(model, id));
  std::stable_sort(cards.begin(), cards.end(),
                   [](const PrototypeCard& a, const PrototypeCard& b) { return a.max_weight() > b.max_weight(); });
  return cards;
}

Explanation explain_prediction(const model::Prediction& prediction, const model::ProtoModel& model) {
  const auto& sheet = model.sheet();
  const auto& presence = prediction.presence;
  if (presence.size() != sheet.num_prototypes()) throw InvalidArgument("prediction does not match the model");
  Explanation out;
  out.label = prediction.label;
  out.scores = prediction.scores;
  out.omitted.assign(sheet.num_classes(), 0.0);
  for (std::size_t i = 0; i < presence.size(); ++i) {
    std::vector<double> per_class(sheet.num_classes());
    for (std::size_t c = 0; c < per_class.size(); ++c) per_class[c] = presence.scores[i] * sheet.effective_weight(i, c);
    const bool listed = !prediction.abstained() && presence.scores[i] > kFoundThreshold && sheet.is_relevant(i);
    if (listed) {
      out.listed.push_back(Contribution{i, presence.scores[i], presence.locations[i],
                                        model::patch_rectangle(presence.locations[i], model.config()),
                                        std::move(per_class)});
    } else {
      for (std::size_t c = 0; c < per_class.size(); ++c) out.omitted[c] += per_class[c];
    }
  }
  std::stable_sort(out.listed.begin(), out.listed.end(), [&](const Contribution& a, const Contribution& b) {
    const double wa = out.label ? a.per_class[*out.label] : 0.0, wb = out.label ? b.per_class[*out.label] : 0.0;
    return wa > wb;
  });
  return out;
}

Explanation local_explanation(const model::ProtoModel& model, const Image& image) {
  return explain_prediction(model.predict(image), model);
}

std::filesystem::path export_patches(std::span<const PrototypeCard> cards, std::span<const data::DatasetItem> items,
                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  codec::json index = codec::json::array();
  for (const auto& card : cards) {
    codec::json entry = codec::card_json(card);
    const auto sub = dir / ("proto_" + std::to_string(card.id));
    std::filesystem::create_directories(sub);
    for (std::size_t r = 0; r < card.patches.size(); ++r) {
      const auto& patch = card.patches[r];
      if (patch.image_index >= items.size()) throw InvalidArgument("patch refers to an image outside the dataset");
      const auto file = sub / (std::to_string(r) + ".png");
      data::write_png(file, crop(items[patch.image_index].image, patch.rect));
      entry["patches"][r]["file"] = std::filesystem::relative(file, dir).generic_string();
    }
    index.push_back(std::move(entry));
  }
  const auto path = dir / "index.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << index.dump(2) << '\n';
  return path;
}

std::string to_json(const MetricsReport& report) { return codec::metrics_json(report).dump(); }
std::string to_json(const PrototypeCard& card) { return codec::card_json(card).dump(); }
std::string to_json(const Explanation& explanation) { return codec::explanation_json(explanation).dump(); }

}  // namespace pipnet::explain
