#pragma once

#include <string_view>

namespace pgc {

inline constexpr std::string_view kVersion = "0.1.0";

} // namespace pgc
