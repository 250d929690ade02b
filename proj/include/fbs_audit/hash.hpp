#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace fbs {

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ull) {
    std::uint64_t h = basis;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// 128-bit content hash as 32 hex chars: two FNV-1a passes with distinct bases.
inline std::string content_hash(std::string_view s) {
    const std::uint64_t a = fnv1a64(s);
    const std::uint64_t b = fnv1a64(s, 0x84222325cbf29ce4ull);
    return hex64(a) + hex64(b);
}

} // namespace fbs
