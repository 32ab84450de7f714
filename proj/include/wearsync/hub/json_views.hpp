#pragma once

// Text-object views of hub state, shared by the control API and the CLI.
// Field names follow the wire protocol: snake_case, nanoseconds and
// milliseconds as integers, absent values as null.

#include <json.hpp>

#include "wearsync/hub/hub_core.hpp"
#include "wearsync/store/store.hpp"

namespace wearsync::hub {

nlohmann::ordered_json status_json(const LiveStatus& status);
nlohmann::ordered_json session_json(const store::SessionMeta& meta);
// Session plus stored row counts per stream.
nlohmann::ordered_json session_detail_json(const store::Store& store, store::SessionId id);

nlohmann::ordered_json bundle_json(store::SessionId id, const store::CsvBundle& bundle);
// Throws std::invalid_argument when the object is not a bundle.
store::CsvBundle bundle_from_json(const nlohmann::json& j);

}  // namespace wearsync::hub
