#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hvfi/params.hpp"
#include "hvfi/tensor.hpp"

namespace hvfi {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Inputs larger than this are checked on a random subset of entries.
  std::size_t max_entries = 48;
  /// Denominator floor of the relative error, so exactly-zero gradients
  /// compare on an absolute scale.
  double error_floor = 1e-3;
  std::uint64_t seed = 7;

  /// For networks with ReLUs. A central difference that straddles a kink is
  /// wrong by O(1); with many units on a small map some pre-activation often
  /// sits within 1e-4 of zero. A 1e-6 step makes that a hundred times rarer
  /// while double round-off stays far below the tolerance.
  static GradCheckOptions piecewise_linear() {
    GradCheckOptions o;
    o.step = 1e-6;
    return o;
  }
};

struct InputCheck {
  std::string name;
  std::size_t checked = 0;
  double max_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::string op;
  double tolerance = 0.0;
  std::vector<InputCheck> inputs;

  double max_error() const;
  bool passed() const { return max_error() < tolerance; }
};

using NamedInput = std::pair<std::string, Tensor<double>>;

/// Every parameter of a store as a gradcheck input, in store order.
std::vector<NamedInput> parameter_inputs(const ParamStore<double>& store);

/// Compares reverse-mode gradients with central finite differences.
///
/// `fn` recomputes the op from the current values of `inputs` (the handles
/// alias the tensors `fn` reads). The output is reduced with a fixed random
/// projection so every output element contributes. Failures are reported,
/// never thrown.
GradCheckReport gradcheck(const std::string& op, const std::function<Tensor<double>()>& fn,
                          std::vector<NamedInput> inputs, const GradCheckOptions& options = {});

}  // namespace hvfi
