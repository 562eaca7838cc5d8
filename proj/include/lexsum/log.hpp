#pragma once

#include <iostream>
#include <mutex>
#include <string>

#include <json.hpp>

namespace lexsum {

namespace detail {

inline std::mutex& log_mutex() {
    static std::mutex mu;
    return mu;
}

}  // namespace detail

// One JSON object per event on standard error; standard output stays
// reserved for human-readable text.
inline void log_event(const std::string& event, nlohmann::json fields = {}) {
    if (!fields.is_object()) fields = nlohmann::json::object();
    fields["event"] = event;
    const std::string line = fields.dump();
    std::lock_guard<std::mutex> lock(detail::log_mutex());
    std::cerr << line << '\n';
}

}  // namespace lexsum
