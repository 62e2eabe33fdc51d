#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace subdiff::io {

/// Round-trippable decimal text for a double. Stable across runs, so CSV
/// artifacts diff cleanly.
inline std::string fmt(double v) {
    if (v == 0.0) return "0";  // folds -0
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace subdiff::io
