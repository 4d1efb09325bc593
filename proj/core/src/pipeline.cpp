#include "hvfi/pipeline.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hvfi/ops.hpp"

namespace hvfi {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (levels < 1) fail("levels must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) fail("kernel size must be odd");
  if (cabs < 0 || rcab_layers < 0 || head_rcab_layers < 0) fail("block counts must be >= 0");
  if (width < 1 || heads < 1 || width % heads != 0) fail("width must be divisible by heads");
  if (window < 1) fail("window must be >= 1");
}

std::string ModelConfig::str() const {
  std::ostringstream os;
  os << "levels=" << levels << " kernel=" << kernel << " cabs=" << cabs << " width=" << width
     << " window=" << window << " heads=" << heads << " rcab_layers=" << rcab_layers
     << " head_rcab_layers=" << head_rcab_layers
     << " residual_update=" << (residual_update ? 1 : 0);
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& line) {
  ModelConfig cfg;
  std::istringstream is(line);
  std::string token;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("model config: bad token " + token);
    const std::string key = token.substr(0, eq);
    const int value = std::stoi(token.substr(eq + 1));
    if (key == "levels") cfg.levels = value;
    else if (key == "kernel") cfg.kernel = value;
    else if (key == "cabs") cfg.cabs = value;
    else if (key == "width") cfg.width = value;
    else if (key == "window") cfg.window = value;
    else if (key == "heads") cfg.heads = value;
    else if (key == "rcab_layers") cfg.rcab_layers = value;
    else if (key == "head_rcab_layers") cfg.head_rcab_layers = value;
    else if (key == "residual_update") cfg.residual_update = value != 0;
    else throw std::invalid_argument("model config: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

template <class T>
DeformableKernel<T> upscale_dek(const DeformableKernel<T>& dek) {
  dek.validate();
  DeformableKernel<T> up;
  up.size = dek.size;
  up.x_offsets = affine(bilinear_resize(dek.x_offsets, 2.0), T(2), T(0));
  up.y_offsets = affine(bilinear_resize(dek.y_offsets, 2.0), T(2), T(0));
  up.kernel_v = bilinear_resize(dek.kernel_v, 2.0);
  up.kernel_h = bilinear_resize(dek.kernel_h, 2.0);
  up.mask = bilinear_resize(dek.mask, 2.0);
  return up;
}

template <class T>
DeformableKernel<T> update_dek(const DeformableKernel<T>& up, const DeformableKernel<T>& delta,
                               bool residual) {
  up.validate();
  delta.validate();
  if (up.size != delta.size || up.x_offsets.shape() != delta.x_offsets.shape()) {
    throw DimensionError("update_dek: upscaled field " + up.x_offsets.shape().str() +
                         " vs residual " + delta.x_offsets.shape().str());
  }
  DeformableKernel<T> out = delta;
  if (residual) {
    out.x_offsets = add(up.x_offsets, delta.x_offsets);
    out.y_offsets = add(up.y_offsets, delta.y_offsets);
  }
  return out;
}

template <class T>
DeformableHead<T>::DeformableHead(ParamStore<T>& store, const std::string& name, int in_channels,
                                  int width, int n_, int rcab_layers, Rng& rng)
    : n(n_) {
  static const char* names[5] = {"x_offset", "y_offset", "kernel_v", "kernel_h", "mask"};
  const int taps = n * n;
  const int out_channels[5] = {2 * taps, 2 * taps, 2 * n, 2 * n, 2 * taps};
  fuse = Conv<T>(store, name + ".fuse", in_channels, width, 3, rng);
  for (int b = 0; b < 5; ++b) {
    const std::string p = name + "." + names[b];
    blocks[b] = Rcab<T>(store, p + ".rcab", width, rcab_layers, rng);
    // Small output weights: the head starts close to its bias values.
    outputs[b] = Conv<T>(store, p + ".out", width, out_channels[b], 3, rng, 1, 0.1);
  }
  // Centre taps of both separable kernels start at sqrt(2); with the initial
  // mask sigmoid(0) = 1/2 every frame starts as an identity warp.
  for (int b : {kernel_v, kernel_h}) {
    auto bias = outputs[b].bias.mutable_data();
    bias[n / 2] = static_cast<T>(std::sqrt(2.0));
    bias[n + n / 2] = static_cast<T>(std::sqrt(2.0));
  }
}

template <class T>
DekPair<T> DeformableHead<T>::operator()(const Tensor<T>& feat) const {
  auto shared = relu(fuse(feat));
  std::array<Tensor<T>, 5> raw;
  for (int b = 0; b < 5; ++b) raw[b] = outputs[b](blocks[b](shared));
  raw[mask] = sigmoid(raw[mask]);
  const std::int64_t taps = static_cast<std::int64_t>(n) * n;
  DekPair<T> out;
  for (int t = 0; t < 2; ++t) {
    DeformableKernel<T>& k = out[t];
    k.size = n;
    k.x_offsets = slice_channels(raw[x_offset], t * taps, taps);
    k.y_offsets = slice_channels(raw[y_offset], t * taps, taps);
    k.kernel_v = slice_channels(raw[kernel_v], t * n, n);
    k.kernel_h = slice_channels(raw[kernel_h], t * n, n);
    k.mask = slice_channels(raw[mask], t * taps, taps);
  }
  return out;
}

template <class T>
UdBlock<T>::UdBlock(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg,
                    Rng& rng) {
  entry = Conv<T>(store, name + ".entry", 12, cfg.width, 3, rng);
  cabs = Rcab<T>(store, name + ".cabs", cfg.width, cfg.cabs, rng);
  head = DeformableHead<T>(store, name + ".head", 2 * cfg.width, cfg.width, cfg.kernel,
                           cfg.head_rcab_layers, rng);
}

template <class T>
typename UdBlock<T>::Result UdBlock<T>::operator()(const DekPair<T>& up, const Tensor<T>& feature,
                                                   const FramePair<T>& frames) const {
  const Shape fs = frames[0].shape();
  if (frames[1].shape() != fs || feature.shape().h != fs.h || feature.shape().w != fs.w ||
      feature.shape().n != fs.n) {
    throw DimensionError("udblock: frames " + fs.str() + " / " + frames[1].shape().str() +
                         ", feature " + feature.shape().str());
  }
  Result r;
  r.inter = stage_interpolate(frames, up);
  // Linear projection to the block width; the CABs carry the non-linearity.
  auto x = entry(concat_channels<T>({r.inter[0], r.inter[1], frames[0], frames[1]}));
  x = cabs(x);
  r.delta = head(concat_channels<T>({x, feature}));
  return r;
}

template <class T>
FramePair<T> stage_interpolate(const FramePair<T>& frames, const DekPair<T>& dek) {
  return {deform_conv(frames[0], dek[0]), deform_conv(frames[1], dek[1])};
}

template <class T>
Tensor<T> gated_fusion(const Tensor<T>& warped0, const Tensor<T>& warped1, const Tensor<T>& mask,
                       const Tensor<T>& bias) {
  return add(add(mul(warped0, mask), mul(warped1, affine(mask, T(-1), T(1)))), bias);
}

template <class T>
Tgr<T>::Tgr(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, Rng& rng) {
  entry = Conv<T>(store, name + ".entry", 12, cfg.width, 3, rng);
  block = Hvitb<T>(store, name + ".block",
                   HvitbConfig{cfg.width, cfg.window, cfg.heads, cfg.rcab_layers, false}, rng);
  exit = Conv<T>(store, name + ".exit", cfg.width, 4, 3, rng, 1, 0.1);
}

template <class T>
typename Tgr<T>::Result Tgr<T>::operator()(const FramePair<T>& warped,
                                           const FramePair<T>& frames) const {
  auto x = entry(concat_channels<T>({warped[0], warped[1], frames[0], frames[1]}));
  auto head = exit(block(x));
  Result r;
  r.mask = sigmoid(slice_channels(head, 0, 1));
  r.bias = slice_channels(head, 1, 3);
  r.output = gated_fusion(warped[0], warped[1], r.mask, r.bias);
  return r;
}

template <class T>
std::vector<Tensor<T>> image_pyramid(const Tensor<T>& image, int levels) {
  std::vector<Tensor<T>> out(static_cast<std::size_t>(levels));
  out.back() = image;
  for (std::size_t s = out.size() - 1; s-- > 0;) out[s] = bilinear_resize(out[s + 1], 0.5);
  return out;
}

template <class T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  hvit_ = Hvit<T>(params_, "hvit",
                  HvitConfig{cfg_.levels, 6, cfg_.width, cfg_.window, cfg_.heads, cfg_.rcab_layers},
                  rng);
  for (int s = 1; s <= cfg_.levels; ++s) {
    update_.emplace_back(params_, "stage" + std::to_string(s) + ".update", cfg_, rng);
  }
  for (int s = 1; s <= cfg_.levels; ++s) {
    refine_.emplace_back(params_, "stage" + std::to_string(s) + ".refine", cfg_, rng);
  }
}

template <class T>
std::vector<StageState<T>> Model<T>::forward(const Tensor<T>& frame0,
                                             const Tensor<T>& frame1) const {
  const Shape s = frame0.shape();
  if (frame1.shape() != s || s.c != 3) {
    throw DimensionError("model: frames " + s.str() + " and " + frame1.shape().str());
  }
  check_pyramid_size(s.h, s.w, cfg_.levels);
  const auto p0 = image_pyramid(frame0, cfg_.levels);
  const auto p1 = image_pyramid(frame1, cfg_.levels);
  const auto features = hvit_(concat_channels<T>({frame0, frame1}));

  std::vector<StageState<T>> states;
  DekPair<T> previous;
  for (int level = 1; level <= cfg_.levels; ++level) {
    const auto i = static_cast<std::size_t>(level - 1);
    const FramePair<T> frames{p0[i], p1[i]};
    DekPair<T> up;
    for (int t = 0; t < 2; ++t) {
      up[t] = level == 1 ? DeformableKernel<T>::zeros(cfg_.kernel, s.n, p0[i].shape().h,
                                                      p0[i].shape().w)
                         : upscale_dek(previous[t]);
    }
    auto ud = update_[i](up, features[i], frames);
    StageState<T> st;
    st.level = level;
    st.inter = ud.inter;
    for (int t = 0; t < 2; ++t) st.dek[t] = update_dek(up[t], ud.delta[t], cfg_.residual_update);
    st.warped = stage_interpolate(frames, st.dek);
    auto fused = refine_[i](st.warped, frames);
    st.output = fused.output;
    st.mask = fused.mask;
    st.bias = fused.bias;
    previous = st.dek;
    states.push_back(std::move(st));
  }
  return states;
}

template <class T>
Tensor<T> Model<T>::interpolate(const Tensor<T>& frame0, const Tensor<T>& frame1) const {
  NoGradScope<T> no_grad;
  Tensor<T> out = forward(frame0, frame1).back().output.detach();
  for (T& v : out.mutable_data()) v = std::min(T(1), std::max(T(0), v));
  return out;
}

#define HVFI_INSTANTIATE_PIPELINE(T)                                                          \
  template DeformableKernel<T> upscale_dek(const DeformableKernel<T>&);                       \
  template DeformableKernel<T> update_dek(const DeformableKernel<T>&,                         \
                                          const DeformableKernel<T>&, bool);                  \
  template struct DeformableHead<T>;                                                          \
  template struct UdBlock<T>;                                                                 \
  template FramePair<T> stage_interpolate(const FramePair<T>&, const DekPair<T>&);            \
  template Tensor<T> gated_fusion(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                  const Tensor<T>&);                                          \
  template struct Tgr<T>;                                                                     \
  template class Model<T>;                                                                    \
  template std::vector<Tensor<T>> image_pyramid(const Tensor<T>&, int);

HVFI_INSTANTIATE_PIPELINE(float)
HVFI_INSTANTIATE_PIPELINE(double)

}  // namespace hvfi
