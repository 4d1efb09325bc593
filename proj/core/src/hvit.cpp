#include "hvfi/hvit.hpp"

#include <algorithm>
#include <string>

#include "hvfi/ops.hpp"

namespace hvfi {

template <class T>
Rcab<T>::Rcab(ParamStore<T>& store, const std::string& name, int channels, int layers, Rng& rng) {
  const int reduced = std::max(1, channels / 4);
  for (int i = 0; i < layers; ++i) {
    const std::string p = name + "." + std::to_string(i);
    units.push_back({Conv<T>(store, p + ".conv1", channels, channels, 3, rng),
                     Conv<T>(store, p + ".conv2", channels, channels, 3, rng),
                     Conv<T>(store, p + ".squeeze", channels, reduced, 1, rng),
                     Conv<T>(store, p + ".excite", reduced, channels, 1, rng)});
    // The bottleneck starts at zero weights and a positive bias so every ReLU
    // unit of the gate is active; random weights regularly leave all of them
    // negative, after which the gate never receives a gradient.
    for (T& w : units.back().squeeze.weight.mutable_data()) w = T(0);
    for (T& b : units.back().squeeze.bias.mutable_data()) b = T(0.1);
    // Same concern for the body: a small positive bias keeps units alive on
    // coarse maps where a filter can be negative at every position.
    for (T& b : units.back().conv1.bias.mutable_data()) b = T(0.1);
  }
}

template <class T>
Tensor<T> Rcab<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (const Unit& u : units) {
    auto branch = u.conv2(relu(u.conv1(h)));
    auto gate = sigmoid(u.excite(relu(u.squeeze(global_avg_pool(branch)))));
    h = add(h, mul(branch, gate));
  }
  return h;
}

template <class T>
Hvitb<T>::Hvitb(ParamStore<T>& store, const std::string& name, const HvitbConfig& config,
                Rng& rng)
    : cfg(config) {
  if (cfg.dim % cfg.heads != 0) {
    throw DimensionError("hvitb: dim " + std::to_string(cfg.dim) + " not divisible by " +
                         std::to_string(cfg.heads) + " heads");
  }
  const int d = cfg.dim;
  norm_in = LayerNorm<T>(store, name + ".norm_in", d);
  if (cfg.cross_scale) norm_ctx = LayerNorm<T>(store, name + ".norm_ctx", d);
  norm_mlp = LayerNorm<T>(store, name + ".norm_mlp", d);
  to_q = Conv<T>(store, name + ".to_q", d, d, 1, rng);
  to_k = Conv<T>(store, name + ".to_k", d, d, 1, rng);
  to_v = Conv<T>(store, name + ".to_v", d, d, 1, rng);
  proj = Conv<T>(store, name + ".proj", d, d, 1, rng);
  const int sets = cfg.cross_scale ? 2 : 1;
  const int span = 2 * cfg.window - 1;
  rel_bias = store.create(name + ".rel_bias", Shape{1, cfg.heads, sets, span * span});
  alpha = store.create_constant(name + ".alpha", Shape{1, 1, 1, 1}, T(0.1));
  rcab = Rcab<T>(store, name + ".rcab", d, cfg.rcab_layers, rng);
  fc1 = Conv<T>(store, name + ".fc1", d, 2 * d, 1, rng);
  fc2 = Conv<T>(store, name + ".fc2", 2 * d, d, 1, rng);
}

template <class T>
Tensor<T> Hvitb<T>::operator()(const Tensor<T>& x, const std::optional<Tensor<T>>& ctx) const {
  if (ctx.has_value() != cfg.cross_scale) {
    throw std::invalid_argument(cfg.cross_scale ? "hvitb: coarse context required"
                                                : "hvitb: block takes no coarse context");
  }
  if (ctx && ctx->shape() != x.shape()) {
    throw DimensionError("hvitb: context " + ctx->shape().str() + " vs input " + x.shape().str());
  }
  auto xn = norm_in(x);
  Tensor<T> keys = to_k(xn);
  Tensor<T> values = to_v(xn);
  if (ctx) {
    auto cn = norm_ctx(*ctx);
    keys = concat_channels<T>({keys, to_k(cn)});
    values = concat_channels<T>({values, to_v(cn)});
  }
  auto attended = proj(window_attention(to_q(xn), keys, values, rel_bias, cfg.window, cfg.heads));
  auto mixed = add(attended, mul(rcab(x), alpha));
  return add(fc2(gelu(fc1(norm_mlp(mixed)))), mixed);
}

void check_pyramid_size(std::int64_t h, std::int64_t w, int levels) {
  if (levels < 1) throw std::invalid_argument("pyramid needs at least one level");
  const std::int64_t factor = std::int64_t{1} << (levels - 1);
  if (h % factor != 0 || w % factor != 0 || h == 0 || w == 0) {
    throw DimensionError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                         " must be divisible by " + std::to_string(factor) + " for " +
                         std::to_string(levels) + " pyramid levels");
  }
}

template <class T>
Hvit<T>::Hvit(ParamStore<T>& store, const std::string& name, const HvitConfig& config, Rng& rng)
    : cfg(config) {
  const int d = cfg.dim;
  stem = Conv<T>(store, name + ".stem", cfg.in_channels, d, 3, rng);
  for (int s = 0; s < cfg.levels; ++s) {
    const std::string p = name + ".level" + std::to_string(s + 1);
    Level lv;
    if (s + 1 < cfg.levels) lv.down = Conv<T>(store, p + ".down", d, d, 3, rng, 2);
    lv.project = Conv<T>(store, p + ".project", d, d, 3, rng);
    HvitbConfig bc{d, cfg.window, cfg.heads, cfg.rcab_layers, s > 0};
    lv.block = Hvitb<T>(store, p + ".block", bc, rng);
    lv.residual = Conv<T>(store, p + ".residual", d, d, 3, rng);
    levels.push_back(std::move(lv));
  }
}

template <class T>
std::vector<Tensor<T>> Hvit<T>::operator()(const Tensor<T>& frames) const {
  if (frames.shape().c != cfg.in_channels) {
    throw DimensionError("hvit: input " + frames.shape().str() + ", expected " +
                         std::to_string(cfg.in_channels) + " channels");
  }
  check_pyramid_size(frames.shape().h, frames.shape().w, cfg.levels);
  const auto count = static_cast<std::size_t>(cfg.levels);
  std::vector<Tensor<T>> encoded(count);
  encoded[count - 1] = relu(stem(frames));
  for (std::size_t s = count - 1; s-- > 0;) encoded[s] = relu(levels[s].down(encoded[s + 1]));

  std::vector<Tensor<T>> features(count);
  for (std::size_t s = 0; s < count; ++s) {
    const Level& lv = levels[s];
    auto projected = lv.project(encoded[s]);
    std::optional<Tensor<T>> ctx;
    if (s > 0) ctx = bilinear_resize(features[s - 1], 2.0);
    features[s] = add(projected, lv.residual(lv.block(projected, ctx)));
  }
  return features;
}

template struct Rcab<float>;
template struct Rcab<double>;
template struct Hvitb<float>;
template struct Hvitb<double>;
template struct Hvit<float>;
template struct Hvit<double>;

}  // namespace hvfi
