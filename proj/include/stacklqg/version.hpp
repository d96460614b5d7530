#pragma once

namespace stacklqg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stacklqg
