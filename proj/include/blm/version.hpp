#pragma once

namespace blm {
inline constexpr const char* kToolkitVersion = "0.1.0";
}
