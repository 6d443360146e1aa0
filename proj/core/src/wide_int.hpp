#pragma once

// 128-bit intermediates for exact tick arithmetic (GCC/Clang extension).
namespace g2kit::detail {
__extension__ typedef unsigned __int128 u128;
__extension__ typedef __int128 i128;
}  // namespace g2kit::detail
