#pragma once

namespace cqil {
inline constexpr const char* kVersion = "0.1.0";
}
