#pragma once

#include <string>
#include <string_view>

namespace qtb {

/// Shortest-safe round-trip text for a double ("%.17g").
std::string fmt_double(double v);

/// Strict parse of a full string as a double; throws IoError on junk.
double parse_double(std::string_view text);

}  // namespace qtb
