#pragma once

#include <httplib.h>

#include <json.hpp>
#include <stdexcept>
#include <string>

namespace wearsync::cli {

// A refused request (HTTP 4xx/5xx) or an unreachable hub.
class ApiError : public std::runtime_error {
public:
    ApiError(int status, std::string code, const std::string& what)
        : std::runtime_error(what)
        , status_(status)
        , code_(std::move(code))
    {
    }
    int status() const { return status_; }  // 0 when the hub could not be reached
    const std::string& code() const { return code_; }

private:
    int status_;
    std::string code_;
};

class ApiClient {
public:
    // "http://host:port"
    explicit ApiClient(const std::string& url);

    nlohmann::ordered_json get(const std::string& path);
    nlohmann::ordered_json post(const std::string& path, const nlohmann::ordered_json& body = nlohmann::ordered_json::object());

private:
    nlohmann::ordered_json check(const httplib::Result& r, const std::string& what);

    std::string url_;
    httplib::Client client_;
};

}  // namespace wearsync::cli
