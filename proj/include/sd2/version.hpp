#pragma once

namespace sd2 {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sd2
