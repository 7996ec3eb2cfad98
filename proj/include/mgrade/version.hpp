#pragma once

namespace mgrade {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mgrade
