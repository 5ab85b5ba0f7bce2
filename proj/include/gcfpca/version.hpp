#pragma once

namespace gcfpca {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gcfpca
