#pragma once

#include <string>
#include <string_view>

#include "dras/error.hpp"

namespace dras {

// paper: layer counts and widths of the published architectures.
// desk:  small networks with the same interfaces, trainable on a CPU in minutes.
enum class Scale { Paper, Desk };

inline std::string_view to_string(Scale s) { return s == Scale::Paper ? "paper" : "desk"; }

inline Scale parse_scale(std::string_view s) {
  if (s == "paper" || s == "paper_scale") return Scale::Paper;
  if (s == "desk" || s == "desk_scale") return Scale::Desk;
  throw Error(Errc::InvalidConfig, "unknown scale '" + std::string(s) + "'");
}

}  // namespace dras
