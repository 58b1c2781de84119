#pragma once

namespace poropt {

inline constexpr const char* version() { return "0.1.0"; }

}  // namespace poropt
