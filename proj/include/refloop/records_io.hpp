#pragma once

#include <json.hpp>

#include "refloop/learning.hpp"

namespace refloop {

using Json = nlohmann::ordered_json;

Json context_to_json(const Context& ctx);
Context context_from_json(const Json& j);

/// Interaction log line. `text` holds the surface form of the tokens for
/// log readers and language analysis.
Json record_to_json(const InteractionRecord& rec, const Vocabulary& vocab);
InteractionRecord record_from_json(const Json& j);

Json train_report_to_json(const TrainReport& report);
TrainReport train_report_from_json(const Json& j);

}  // namespace refloop
