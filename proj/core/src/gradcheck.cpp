#include "hvfi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hvfi/ops.hpp"
#include "hvfi/rng.hpp"

namespace hvfi {

double GradCheckReport::max_error() const {
  double worst = 0.0;
  for (const auto& in : inputs) worst = std::max(worst, in.max_error);
  return worst;
}

std::vector<NamedInput> parameter_inputs(const ParamStore<double>& store) {
  std::vector<NamedInput> out;
  for (const auto& e : store.entries()) out.emplace_back(e.name, e.value);
  return out;
}

GradCheckReport gradcheck(const std::string& op, const std::function<Tensor<double>()>& fn,
                          std::vector<NamedInput> inputs, const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = op;
  report.tolerance = options.tolerance;

  std::vector<bool> previous_flags;
  for (auto& [name, t] : inputs) {
    previous_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Rng rng(options.seed);
  Tensor<double> projection;
  {
    Tape<double> tape;
    Tensor<double> out = fn();
    projection = random_uniform<double>(out.shape(), rng);
    tape.backward(sum(mul(out, projection)));
  }

  auto objective = [&] {
    const Tensor<double> out = fn();
    const auto v = out.data();
    const auto p = projection.data();
    return std::inner_product(v.begin(), v.end(), p.begin(), 0.0);
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& [name, t] = inputs[k];
    InputCheck check;
    check.name = name;
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                     : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);

    std::vector<std::size_t> indices(static_cast<std::size_t>(t.numel()));
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (indices.size() > options.max_entries) {
      // Partial Fisher-Yates: the first max_entries slots become the sample.
      for (std::size_t i = 0; i < options.max_entries; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(indices.size()) - 1));
        std::swap(indices[i], indices[j]);
      }
      indices.resize(options.max_entries);
    }

    auto values = t.mutable_data();
    for (std::size_t idx : indices) {
      const double original = values[idx];
      values[idx] = original + options.step;
      const double plus = objective();
      values[idx] = original - options.step;
      const double minus = objective();
      values[idx] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.error_floor});
      const double err = std::abs(a - numeric) / denom;
      ++check.checked;
      if (err >= check.max_error) {
        check.max_error = err;
        check.worst_index = idx;
        check.analytic = a;
        check.numeric = numeric;
      }
    }
    report.inputs.push_back(check);
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].second.zero_grad();
    inputs[k].second.set_requires_grad(previous_flags[k]);
  }
  return report;
}

}  // namespace hvfi
