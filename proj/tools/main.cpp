#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>

#include "wearsync/cli/cli.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int)
{
    g_stop = true;
}

}  // namespace

int main(int argc, char** argv)
{
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    wearsync::cli::Environment env;
    if (const char* s = std::getenv("WEARSYNC_STORE"))
        env.store = s;
    env.stop = &g_stop;
    return wearsync::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr, env);
}
