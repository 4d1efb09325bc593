#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvfi/gradcheck.hpp"

namespace hvfi {

/// Names accepted by check_op, in a fixed order: primitives first, then the
/// composite blocks.
const std::vector<std::string>& gradcheck_ops();

/// Builds a random double-precision instance of `op` for `seed` and checks
/// every input (and, for blocks, every parameter) against central finite
/// differences. Throws std::invalid_argument for an unknown name.
GradCheckReport check_op(const std::string& op, std::uint64_t seed);

}  // namespace hvfi
