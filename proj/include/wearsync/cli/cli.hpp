#pragma once

#include <atomic>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace wearsync::cli {

struct Environment {
    std::optional<std::string> store;  // WEARSYNC_STORE
    // Long-running commands return when this becomes true.
    const std::atomic<bool>* stop = nullptr;
};

// Exit codes: 0 success, 1 user error (bad flags, unknown session, unreachable
// hub, refused request), 2 internal error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Environment& env = {});

}  // namespace wearsync::cli
