#pragma once

namespace evlign {
inline constexpr const char* kVersion = "0.1.0";
}
