#pragma once

namespace sae {

inline constexpr const char* kToolName = "sae";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace sae
