#pragma once

#include <array>
#include <string_view>
#include <utility>

namespace fbsdelab {

inline constexpr std::string_view kVersion = "0.1.0";

// Per-module versions, reported in every run summary so archived artifacts
// stay attributable after the code moves on.
inline constexpr std::array<std::pair<std::string_view, std::string_view>, 6>
    kModuleVersions{{
        {"controls", "0.1.0"},
        {"fbsde", "0.1.0"},
        {"cost", "0.1.0"},
        {"optimizer", "0.1.0"},
        {"diagnostics", "0.1.0"},
        {"scenarios_cli", "0.1.0"},
    }};

}  // namespace fbsdelab
