#pragma once

namespace sepdual {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sepdual
