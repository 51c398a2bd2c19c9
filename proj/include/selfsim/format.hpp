#pragma once

#include <string>

#include <fmt/format.h>

namespace selfsim {

/// Shortest-round-trip-safe text for a double (17 significant digits).
inline std::string format_double(double v) { return fmt::format("{:.17g}", v); }

} // namespace selfsim
