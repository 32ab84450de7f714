#include "wearsync/hub/json_views.hpp"

#include <stdexcept>

namespace wearsync::hub {

namespace {

using nlohmann::ordered_json;

template <class T>
ordered_json opt(const std::optional<T>& v)
{
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json device_json(const DeviceStatus& d)
{
    ordered_json j;
    j["link"] = std::string(to_string(d.link));
    j["device_id"] = d.device_id.empty() ? ordered_json(nullptr) : ordered_json(d.device_id);
    j["latest_bpm"] = opt(d.latest_bpm);
    j["quality"] = d.low_quality ? "low" : "ok";
    j["sync_rounds_used"] = opt(d.sync_rounds_used);
    j["sync_error"] = d.sync_error.empty() ? ordered_json(nullptr) : ordered_json(d.sync_error);
    return j;
}

ordered_json anchor_json(const std::optional<TimeAnchor>& a)
{
    if (!a)
        return nullptr;
    return ordered_json{{"boot_ns", a->boot_ns.value}, {"unix_ms", a->unix_ms.value}};
}

}  // namespace

ordered_json status_json(const LiveStatus& s)
{
    ordered_json j;
    j["state"] = std::string(to_string(s.state));
    j["session_id"] = opt(s.session_id);
    j["elapsed_ms"] = s.elapsed_ms;
    j["chest_strap"] = device_json(s.chest);
    j["watch"] = device_json(s.watch);
    return j;
}

ordered_json session_json(const store::SessionMeta& m)
{
    ordered_json j;
    j["id"] = m.id;
    j["title"] = m.title;
    j["description"] = m.description;
    j["status"] = std::string(store::to_string(m.status));
    j["created_unix_ms"] = m.created.value;
    j["start"] = anchor_json(m.start);
    j["end"] = anchor_json(m.end);
    j["duration_ms"] = opt(m.duration_ms());
    j["mean_offset_ns"] = opt(m.mean_offset_ns);
    j["sync_rounds_used"] = opt(m.sync_rounds_used);
    j["estimator"] = m.estimator ? ordered_json(std::string(to_string(*m.estimator))) : ordered_json(nullptr);
    j["config_text"] = m.config_text;
    return j;
}

ordered_json session_detail_json(const store::Store& store, store::SessionId id)
{
    auto j = session_json(store.get_session(id));
    ordered_json rows;
    for (auto s : store::kAllStreams)
        rows[std::string(store::to_string(s))] = store.row_count(id, s);
    j["rows"] = rows;
    return j;
}

ordered_json bundle_json(store::SessionId id, const store::CsvBundle& bundle)
{
    ordered_json files = ordered_json::array();
    for (const auto& [name, content] : bundle)
        files.push_back(ordered_json{{"name", name}, {"content", content}});
    return ordered_json{{"session_id", id}, {"files", files}};
}

store::CsvBundle bundle_from_json(const nlohmann::json& j)
{
    if (!j.is_object() || !j.contains("files") || !j["files"].is_array())
        throw std::invalid_argument("not a CSV bundle");
    store::CsvBundle out;
    for (const auto& f : j["files"]) {
        if (!f.is_object() || !f.contains("name") || !f.contains("content") || !f["name"].is_string()
            || !f["content"].is_string())
            throw std::invalid_argument("malformed bundle entry");
        out.emplace_back(f["name"].get<std::string>(), f["content"].get<std::string>());
    }
    return out;
}

}  // namespace wearsync::hub
