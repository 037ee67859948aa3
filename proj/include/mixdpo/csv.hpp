#pragma once

#include <cstdio>
#include <string>

namespace mixdpo {

// All CSV emitters format reals with exactly six fractional digits so repeated
// runs produce byte-identical files.
inline std::string fmt6(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    return std::string(buf);
}

}  // namespace mixdpo
