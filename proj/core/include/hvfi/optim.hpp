#pragma once

#include <cstdint>
#include <vector>

#include "hvfi/params.hpp"

namespace hvfi {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay over every tensor of a ParamStore. The
/// moment buffers follow the store's creation order.
template <class T>
class AdamW {
 public:
  AdamW(ParamStore<T>& params, AdamWOptions options = {});

  /// One update with learning rate `lr` from the gradients currently held by
  /// the parameters (missing gradients count as zero). Does not clear them.
  void step(double lr);

  std::int64_t steps() const { return steps_; }
  const AdamWOptions& options() const { return options_; }

  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  /// For restoring a checkpoint together with the moments.
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  ParamStore<T>* params_;
  AdamWOptions options_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

/// base * (1 + cos(pi * step / total)) / 2, held at 0 past `total`.
double cosine_lr(double base, std::int64_t step, std::int64_t total);

}  // namespace hvfi
