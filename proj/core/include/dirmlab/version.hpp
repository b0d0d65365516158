#pragma once

namespace dirmlab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dirmlab
