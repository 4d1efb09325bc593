#include "hvfi/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "hvfi/deform_conv.hpp"
#include "hvfi/hvit.hpp"
#include "hvfi/loss.hpp"
#include "hvfi/ops.hpp"
#include "hvfi/pipeline.hpp"
#include "hvfi/rng.hpp"

namespace hvfi {

namespace {

using T = Tensor<double>;

// Integer part plus a fraction kept away from the bilinear kinks.
T frac_values(Shape s, Rng& rng, double lo, double hi) {
  T t(s);
  for (double& v : t.mutable_data()) v = std::floor(rng.uniform(lo, hi)) + rng.uniform(0.05, 0.95);
  return t;
}

DeformableKernel<double> random_dek(int n, std::int64_t h, std::int64_t w, Rng& rng) {
  DeformableKernel<double> k;
  k.size = n;
  k.x_offsets = frac_values(Shape{1, n * n, h, w}, rng, -2.5, 2.5);
  k.y_offsets = frac_values(Shape{1, n * n, h, w}, rng, -2.5, 2.5);
  k.kernel_v = random_uniform<double>(Shape{1, n, h, w}, rng);
  k.kernel_h = random_uniform<double>(Shape{1, n, h, w}, rng);
  k.mask = random_uniform<double>(Shape{1, n * n, h, w}, rng, 0, 1);
  return k;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.levels = 1;
  cfg.kernel = 3;
  cfg.cabs = 1;
  cfg.width = 4;
  cfg.window = 2;
  cfg.heads = 2;
  cfg.rcab_layers = 1;
  cfg.head_rcab_layers = 1;
  return cfg;
}

// Moves every parameter off its structured initial value (zero-initialized
// output layers, unit gains) so that all of them influence the output.
void perturb(ParamStore<double>& store, Rng& rng, double amount) {
  for (const auto& e : store.entries()) {
    for (double& v : T(e.value).mutable_data()) v += rng.uniform(-amount, amount);
  }
}

T flatten(const DekPair<double>& pair) {
  std::vector<T> parts;
  for (const auto& k : pair) {
    for (const auto& t : {k.x_offsets, k.y_offsets, k.kernel_v, k.kernel_h, k.mask}) {
      parts.push_back(t);
    }
  }
  return concat_channels(parts);
}

GradCheckReport activation_case(const std::string& name, Activation kind, Rng& rng) {
  T x = random_uniform<double>(Shape{1, 2, 3, 3}, rng);
  // Keep ReLU inputs away from the kink.
  for (double& v : x.mutable_data()) v += v >= 0 ? 0.05 : -0.05;
  return gradcheck(name, [=] { return activation(x, kind); }, {{"x", x}});
}

using Case = std::function<GradCheckReport(Rng&, std::uint64_t)>;

const std::vector<std::pair<std::string, Case>>& cases() {
  static const std::vector<std::pair<std::string, Case>> all = {
      {"conv2d",
       [](Rng& rng, std::uint64_t seed) {
         auto x = random_uniform<double>(Shape{1, 2, 5, 5}, rng);
         auto w = random_uniform<double>(Shape{3, 2, 3, 3}, rng);
         auto b = random_uniform<double>(Shape{1, 3, 1, 1}, rng);
         const int stride = 1 + static_cast<int>(seed % 2);
         return gradcheck("conv2d", [=] { return conv2d(x, w, b, stride, 1); },
                          {{"x", x}, {"weight", w}, {"bias", b}});
       }},
      {"linear",
       [](Rng& rng, std::uint64_t) {
         auto x = random_uniform<double>(Shape{2, 4, 2, 3}, rng);
         auto w = random_uniform<double>(Shape{5, 4, 1, 1}, rng);
         auto b = random_uniform<double>(Shape{1, 5, 1, 1}, rng);
         return gradcheck("linear", [=] { return linear(x, w, b); },
                          {{"x", x}, {"weight", w}, {"bias", b}});
       }},
      {"layer_norm",
       [](Rng& rng, std::uint64_t) {
         auto x = random_uniform<double>(Shape{1, 6, 3, 3}, rng);
         auto g = random_uniform<double>(Shape{1, 6, 1, 1}, rng);
         auto b = random_uniform<double>(Shape{1, 6, 1, 1}, rng);
         return gradcheck("layer_norm", [=] { return layer_norm(x, g, b, 1e-5); },
                          {{"x", x}, {"gamma", g}, {"beta", b}});
       }},
      // Variance comparable to eps: the looser tolerance applies.
      {"layer_norm_flat",
       [](Rng& rng, std::uint64_t) {
         auto x = random_uniform<double>(Shape{1, 5, 2, 2}, rng, 0.5, 0.5 + 3e-3);
         auto g = random_uniform<double>(Shape{1, 5, 1, 1}, rng);
         auto b = random_uniform<double>(Shape{1, 5, 1, 1}, rng);
         GradCheckOptions opt;
         opt.tolerance = 1e-3;
         return gradcheck("layer_norm_flat", [=] { return layer_norm(x, g, b, 1e-5); },
                          {{"x", x}, {"gamma", g}, {"beta", b}}, opt);
       }},
      {"relu", [](Rng& rng, std::uint64_t) { return activation_case("relu", Activation::relu, rng); }},
      {"sigmoid",
       [](Rng& rng, std::uint64_t) { return activation_case("sigmoid", Activation::sigmoid, rng); }},
      {"gelu", [](Rng& rng, std::uint64_t) { return activation_case("gelu", Activation::gelu, rng); }},
      {"bilinear_resize",
       [](Rng& rng, std::uint64_t seed) {
         const double factor = seed % 2 ? 0.5 : 2.0;
         auto x = random_uniform<double>(Shape{1, 2, 4, 6}, rng);
         return gradcheck("bilinear_resize", [=] { return bilinear_resize(x, factor); },
                          {{"x", x}});
       }},
      {"bilinear_sample",
       [](Rng& rng, std::uint64_t) {
         auto x = random_uniform<double>(Shape{1, 2, 5, 5}, rng);
         auto cx = frac_values(Shape{1, 1, 4, 4}, rng, -1.5, 5.5);
         auto cy = frac_values(Shape{1, 1, 4, 4}, rng, -1.5, 5.5);
         return gradcheck("bilinear_sample", [=] { return bilinear_sample(x, cx, cy); },
                          {{"x", x}, {"coords_x", cx}, {"coords_y", cy}});
       }},
      {"deform_conv",
       [](Rng& rng, std::uint64_t seed) {
         const int n = seed % 2 ? 5 : 3;
         auto frame = random_uniform<double>(Shape{1, 2, 6, 7}, rng);
         auto k = random_dek(n, 6, 7, rng);
         return gradcheck("deform_conv", [=] { return deform_conv(frame, k); },
                          {{"frame", frame},
                           {"x_offsets", k.x_offsets},
                           {"y_offsets", k.y_offsets},
                           {"kernel_v", k.kernel_v},
                           {"kernel_h", k.kernel_h},
                           {"mask", k.mask}});
       }},
      {"window_attention",
       [](Rng& rng, std::uint64_t seed) {
         const int sets = static_cast<int>(seed % 2) + 1;
         auto q = random_uniform<double>(Shape{1, 4, 6, 5}, rng, -2, 2);
         auto k = random_uniform<double>(Shape{1, 4 * sets, 6, 5}, rng, -2, 2);
         auto v = random_uniform<double>(Shape{1, 4 * sets, 6, 5}, rng);
         auto bias = random_uniform<double>(Shape{1, 2, sets, 25}, rng);
         return gradcheck("window_attention",
                          [=] { return window_attention(q, k, v, bias, 3, 2); },
                          {{"q", q}, {"k", k}, {"v", v}, {"bias", bias}});
       }},
      {"rcab",
       [](Rng& rng, std::uint64_t) {
         ParamStore<double> store;
         Rcab<double> block(store, "rcab", 4, 2, rng);
         perturb(store, rng, 0.1);
         auto x = random_uniform<double>(Shape{1, 4, 6, 6}, rng);
         auto inputs = parameter_inputs(store);
         inputs.emplace_back("x", x);
         return gradcheck("rcab", [&] { return block(x); }, inputs,
                          GradCheckOptions::piecewise_linear());
       }},
      {"hvitb",
       [](Rng& rng, std::uint64_t seed) {
         const bool cross = seed % 2;
         ParamStore<double> store;
         Hvitb<double> block(store, "hvitb", HvitbConfig{8, 4, 2, 1, cross}, rng);
         perturb(store, rng, 0.1);
         auto x = random_uniform<double>(Shape{1, 8, 8, 8}, rng);
         auto ctx = random_uniform<double>(Shape{1, 8, 8, 8}, rng);
         auto inputs = parameter_inputs(store);
         inputs.emplace_back("x", x);
         if (cross) inputs.emplace_back("ctx", ctx);
         return gradcheck("hvitb", [&] { return cross ? block(x, ctx) : block(x); }, inputs,
                          GradCheckOptions::piecewise_linear());
       }},
      {"udblock",
       [](Rng& rng, std::uint64_t) {
         ParamStore<double> store;
         UdBlock<double> block(store, "udblock", tiny_model(), rng);
         perturb(store, rng, 0.1);
         FramePair<double> frames{random_uniform<double>(Shape{1, 3, 8, 8}, rng, 0, 1),
                                  random_uniform<double>(Shape{1, 3, 8, 8}, rng, 0, 1)};
         DekPair<double> up{random_dek(3, 8, 8, rng), random_dek(3, 8, 8, rng)};
         auto feature = random_uniform<double>(Shape{1, 4, 8, 8}, rng);
         auto inputs = parameter_inputs(store);
         inputs.emplace_back("feature", feature);
         inputs.emplace_back("frame0", frames[0]);
         inputs.emplace_back("frame1", frames[1]);
         inputs.emplace_back("up0.x_offsets", up[0].x_offsets);
         inputs.emplace_back("up0.kernel_v", up[0].kernel_v);
         inputs.emplace_back("up1.y_offsets", up[1].y_offsets);
         inputs.emplace_back("up1.mask", up[1].mask);
         return gradcheck("udblock", [&] { return flatten(block(up, feature, frames).delta); },
                          inputs, GradCheckOptions::piecewise_linear());
       }},
      {"tgr",
       [](Rng& rng, std::uint64_t) {
         ParamStore<double> store;
         Tgr<double> tgr(store, "tgr", tiny_model(), rng);
         perturb(store, rng, 0.1);
         FramePair<double> warped{random_uniform<double>(Shape{1, 3, 4, 4}, rng, 0, 1),
                                  random_uniform<double>(Shape{1, 3, 4, 4}, rng, 0, 1)};
         FramePair<double> frames{random_uniform<double>(Shape{1, 3, 4, 4}, rng, 0, 1),
                                  random_uniform<double>(Shape{1, 3, 4, 4}, rng, 0, 1)};
         auto inputs = parameter_inputs(store);
         inputs.emplace_back("warped0", warped[0]);
         inputs.emplace_back("warped1", warped[1]);
         inputs.emplace_back("frame0", frames[0]);
         inputs.emplace_back("frame1", frames[1]);
         return gradcheck("tgr", [&] { return tgr(warped, frames).output; }, inputs,
                          GradCheckOptions::piecewise_linear());
       }},
      // The soft sign bends on the scale eps = 0.01; a 1e-4 central difference
      // has truncation error near (1e-4 / 0.01)^2, so the step is 1e-5.
      {"census_loss",
       [](Rng& rng, std::uint64_t) {
         auto pred = random_uniform<double>(Shape{1, 3, 6, 7}, rng, 0, 1);
         auto gt = random_uniform<double>(Shape{1, 3, 6, 7}, rng, 0, 1);
         GradCheckOptions opt;
         opt.step = 1e-5;
         return gradcheck("census_loss", [=] { return census_loss(pred, gt); },
                          {{"pred", pred}, {"gt", gt}}, opt);
       }},
  };
  return all;
}

}  // namespace

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& c : cases()) out.push_back(c.first);
    return out;
  }();
  return names;
}

GradCheckReport check_op(const std::string& op, std::uint64_t seed) {
  const auto& all = cases();
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (all[k].first != op) continue;
    Rng rng = Rng(seed).fork(k + 1);
    return all[k].second(rng, seed);
  }
  throw std::invalid_argument("gradcheck: unknown op '" + op + "'");
}

}  // namespace hvfi
