#pragma once

namespace flsim {

inline constexpr const char* kToolVersion = "flsim 0.1.0";

}  // namespace flsim
