#pragma once

namespace dras {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dras
