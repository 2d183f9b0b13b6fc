#pragma once

// nlohmann::json converters shared by the explainer, debugger and HTTP
// service. Private to the library so the installed headers stay free of the
// vendored JSON header.

#include "json.hpp"
#include "pipnet/debug/debugger.hpp"
#include "pipnet/explain/explanation.hpp"

namespace pipnet::codec {

using nlohmann::json;

json rect_json(const Rect& rect);
json metrics_json(const explain::MetricsReport& report);
explain::MetricsReport metrics_from_json(const json& j);
json card_json(const explain::PrototypeCard& card);
json explanation_json(const explain::Explanation& explanation);
json shortcut_json(const debug::ShortcutReport& report);
json counterfactual_json(const debug::CounterfactualReport& report);
json intervention_json(const debug::InterventionEntry& entry);
debug::InterventionEntry intervention_from_json(const json& j);
json abstention_json(const debug::AbstentionReport& report);

}  // namespace pipnet::codec
