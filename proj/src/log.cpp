#include "pvp/log.hpp"

#include <iostream>
#include <mutex>

namespace pvp::log {
namespace {

std::mutex g_mutex;

Sink& sink() {
    static Sink s = [](Level level, std::string_view msg) {
        std::cerr << (level == Level::warning ? "warning: " : "") << msg << '\n';
    };
    return s;
}

void emit(Level level, std::string_view message) {
    std::lock_guard lock(g_mutex);
    if (sink()) sink()(level, message);
}

}  // namespace

Sink set_sink(Sink s) {
    std::lock_guard lock(g_mutex);
    return std::exchange(sink(), std::move(s));
}

void info(std::string_view message) { emit(Level::info, message); }
void warn(std::string_view message) { emit(Level::warning, message); }

}  // namespace pvp::log
