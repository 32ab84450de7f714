#include "api_client.hpp"

namespace wearsync::cli {

ApiClient::ApiClient(const std::string& url)
    : url_(url)
    , client_(url)
{
    if (!client_.is_valid())
        throw ApiError(0, "bad_url", "invalid hub url '" + url + "'");
    client_.set_connection_timeout(2, 0);
    client_.set_read_timeout(30, 0);
}

nlohmann::ordered_json ApiClient::get(const std::string& path)
{
    return check(client_.Get(path), "GET " + path);
}

nlohmann::ordered_json ApiClient::post(const std::string& path, const nlohmann::ordered_json& body)
{
    return check(client_.Post(path, body.dump(), "application/json"), "POST " + path);
}

nlohmann::ordered_json ApiClient::check(const httplib::Result& r, const std::string& what)
{
    if (!r)
        throw ApiError(0, "unreachable", "hub unreachable at " + url_ + " (" + httplib::to_string(r.error()) + ")");
    nlohmann::ordered_json body = nlohmann::ordered_json::parse(r->body, nullptr, false);
    if (r->status >= 200 && r->status < 300) {
        if (body.is_discarded())
            throw ApiError(r->status, "bad_response", what + ": response is not JSON");
        return body;
    }
    std::string code = "http_" + std::to_string(r->status);
    std::string detail = r->body;
    if (!body.is_discarded() && body.is_object()) {
        code = body.value("error", code);
        detail = body.value("detail", detail);
    }
    throw ApiError(r->status, code, what + ": " + code + ": " + detail);
}

}  // namespace wearsync::cli
