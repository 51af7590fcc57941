#pragma once

namespace mammogan {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mammogan
