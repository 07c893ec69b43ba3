#include "hfn/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace hfn::log {

namespace {

Level parse_env_level() {
    const char* e = std::getenv("HFS_LOG");
    if (!e) return Level::warn;
    if (std::strcmp(e, "error") == 0) return Level::error;
    if (std::strcmp(e, "warn") == 0) return Level::warn;
    if (std::strcmp(e, "info") == 0) return Level::info;
    if (std::strcmp(e, "debug") == 0) return Level::debug;
    return Level::warn;
}

std::atomic<Level>& level_ref() {
    static std::atomic<Level> lv{parse_env_level()};
    return lv;
}

const char* tag(Level lv) {
    switch (lv) {
        case Level::error: return "error";
        case Level::warn: return "warn";
        case Level::info: return "info";
        case Level::debug: return "debug";
    }
    return "?";
}

}  // namespace

Level level() { return level_ref().load(std::memory_order_relaxed); }

void set_level(Level lv) { level_ref().store(lv, std::memory_order_relaxed); }

void write(Level lv, const std::string& msg) {
    if (static_cast<int>(lv) > static_cast<int>(level())) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::fprintf(stderr, "[hfn %s] %s\n", tag(lv), msg.c_str());
}

}  // namespace hfn::log
