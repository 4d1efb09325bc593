#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hvfi/hvit.hpp"

namespace hvfi {
namespace {

struct Token {
  std::int64_t pos;  // y * w + x in the image plane
  int wy, wx;        // position inside the window
};

// Tokens of every window that fall inside the image, windows in raster order.
std::vector<std::vector<Token>> window_tokens(std::int64_t h, std::int64_t w, int window) {
  const std::int64_t wy_count = (h + window - 1) / window;
  const std::int64_t wx_count = (w + window - 1) / window;
  std::vector<std::vector<Token>> out;
  out.reserve(static_cast<std::size_t>(wy_count * wx_count));
  for (std::int64_t by = 0; by < wy_count; ++by) {
    for (std::int64_t bx = 0; bx < wx_count; ++bx) {
      std::vector<Token> tokens;
      for (int ly = 0; ly < window; ++ly) {
        for (int lx = 0; lx < window; ++lx) {
          const std::int64_t y = by * window + ly;
          const std::int64_t x = bx * window + lx;
          if (y < h && x < w) tokens.push_back({y * w + x, ly, lx});
        }
      }
      out.push_back(std::move(tokens));
    }
  }
  return out;
}

template <class T>
struct AttentionGeometry {
  Shape s;
  int J, window, heads, dim;
  std::int64_t hw, table;
  T scale;
};

// Logits and softmax for one (batch, window, head); returns probabilities as
// an nq x nk row-major matrix. Keys are ordered key-set major.
template <class T>
void window_probs(const AttentionGeometry<T>& g, const std::vector<Token>& tokens,
                  const T* qb, const T* kb, const T* bias, int head, std::vector<T>& probs) {
  const std::size_t nt = tokens.size();
  const std::size_t nk = nt * static_cast<std::size_t>(g.J);
  probs.assign(nt * nk, T(0));
  const std::int64_t hw = g.hw;
  for (std::size_t a = 0; a < nt; ++a) {
    T* row = probs.data() + a * nk;
    T peak = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < g.J; ++j) {
      for (std::size_t b = 0; b < nt; ++b) {
        T dot = 0;
        for (int d = 0; d < g.dim; ++d) {
          const std::int64_t c = head * g.dim + d;
          dot += qb[c * hw + tokens[a].pos] *
                 kb[(static_cast<std::int64_t>(j) * g.s.c + c) * hw + tokens[b].pos];
        }
        T logit = g.scale * dot;
        if (bias) {
          const int r = relative_bias_index(tokens[a].wy, tokens[a].wx, tokens[b].wy,
                                            tokens[b].wx, g.window);
          logit += bias[(static_cast<std::int64_t>(head) * g.J + j) * g.table + r];
        }
        row[j * nt + b] = logit;
        peak = std::max(peak, logit);
      }
    }
    T total = 0;
    for (std::size_t k = 0; k < nk; ++k) {
      row[k] = std::exp(row[k] - peak);
      total += row[k];
    }
    for (std::size_t k = 0; k < nk; ++k) row[k] /= total;
  }
}

}  // namespace

template <class T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& rel_bias, int window, int heads) {
  const Shape s = q.shape();
  if (window < 1 || heads < 1 || s.c % heads != 0) {
    throw DimensionError("window_attention: " + std::to_string(s.c) + " channels, " +
                         std::to_string(heads) + " heads, window " + std::to_string(window));
  }
  if (k.shape() != v.shape() || k.shape().n != s.n || k.shape().h != s.h ||
      k.shape().w != s.w || k.shape().c % s.c != 0 || k.shape().c == 0) {
    throw DimensionError("window_attention: q " + s.str() + ", k " + k.shape().str() + ", v " +
                         v.shape().str());
  }
  AttentionGeometry<T> g{s,
                         static_cast<int>(k.shape().c / s.c),
                         window,
                         heads,
                         static_cast<int>(s.c / heads),
                         s.plane(),
                         static_cast<std::int64_t>(2 * window - 1) * (2 * window - 1),
                         T(0)};
  g.scale = T(1) / std::sqrt(static_cast<T>(g.dim));
  if (rel_bias.defined() && rel_bias.shape() != Shape{1, heads, g.J, g.table}) {
    throw DimensionError("window_attention: bias table " + rel_bias.shape().str() +
                         ", expected " + Shape{1, heads, g.J, g.table}.str());
  }
  auto windows = window_tokens(s.h, s.w, window);

  Tensor<T> out(s);
  std::vector<T> probs;
  const T* bias = rel_bias.defined() ? rel_bias.data().data() : nullptr;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* qb = q.data().data() + n * s.c * g.hw;
    const T* kb = k.data().data() + n * g.J * s.c * g.hw;
    const T* vb = v.data().data() + n * g.J * s.c * g.hw;
    T* ob = out.mutable_data().data() + n * s.c * g.hw;
    for (const auto& tokens : windows) {
      const std::size_t nt = tokens.size();
      const std::size_t nk = nt * static_cast<std::size_t>(g.J);
      for (int head = 0; head < heads; ++head) {
        window_probs(g, tokens, qb, kb, bias, head, probs);
        for (std::size_t a = 0; a < nt; ++a) {
          const T* row = probs.data() + a * nk;
          for (int d = 0; d < g.dim; ++d) {
            const std::int64_t c = head * g.dim + d;
            T acc = 0;
            for (int j = 0; j < g.J; ++j) {
              const T* vc = vb + (static_cast<std::int64_t>(j) * s.c + c) * g.hw;
              for (std::size_t b = 0; b < nt; ++b) acc += row[j * nt + b] * vc[tokens[b].pos];
            }
            ob[c * g.hw + tokens[a].pos] = acc;
          }
        }
      }
    }
  }

  const bool record = detail::any_requires_grad<T>({&q, &k, &v, &rel_bias});
  return detail::finish<T>(
      out, record,
      [q, k, v, rel_bias, g, windows = std::move(windows)](const T* grad) {
        T* gq = detail::grad_sink(q);
        T* gk = detail::grad_sink(k);
        T* gv = detail::grad_sink(v);
        T* gb = detail::grad_sink(rel_bias);
        const Shape s = g.s;
        const T* bias = rel_bias.defined() ? rel_bias.data().data() : nullptr;
        std::vector<T> probs, dprobs;
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* qb = q.data().data() + n * s.c * g.hw;
          const T* kb = k.data().data() + n * g.J * s.c * g.hw;
          const T* vb = v.data().data() + n * g.J * s.c * g.hw;
          const T* go = grad + n * s.c * g.hw;
          T* gqb = gq ? gq + n * s.c * g.hw : nullptr;
          T* gkb = gk ? gk + n * g.J * s.c * g.hw : nullptr;
          T* gvb = gv ? gv + n * g.J * s.c * g.hw : nullptr;
          for (const auto& tokens : windows) {
            const std::size_t nt = tokens.size();
            const std::size_t nk = nt * static_cast<std::size_t>(g.J);
            for (int head = 0; head < g.heads; ++head) {
              window_probs(g, tokens, qb, kb, bias, head, probs);
              dprobs.assign(nt * nk, T(0));
              // dP = dO . V, dV += P^T dO
              for (std::size_t a = 0; a < nt; ++a) {
                for (int j = 0; j < g.J; ++j) {
                  for (std::size_t b = 0; b < nt; ++b) {
                    const std::size_t kk = j * nt + b;
                    const T p = probs[a * nk + kk];
                    T acc = 0;
                    for (int d = 0; d < g.dim; ++d) {
                      const std::int64_t c = head * g.dim + d;
                      const std::int64_t vi = (static_cast<std::int64_t>(j) * s.c + c) * g.hw +
                                              tokens[b].pos;
                      const T god = go[c * g.hw + tokens[a].pos];
                      acc += god * vb[vi];
                      if (gvb) gvb[vi] += p * god;
                    }
                    dprobs[a * nk + kk] = acc;
                  }
                }
              }
              // Softmax backward, then logits -> q, k, bias.
              for (std::size_t a = 0; a < nt; ++a) {
                const T* prow = probs.data() + a * nk;
                T* drow = dprobs.data() + a * nk;
                T inner = 0;
                for (std::size_t kk = 0; kk < nk; ++kk) inner += prow[kk] * drow[kk];
                for (std::size_t kk = 0; kk < nk; ++kk) drow[kk] = prow[kk] * (drow[kk] - inner);
                for (int j = 0; j < g.J; ++j) {
                  for (std::size_t b = 0; b < nt; ++b) {
                    const T ds = drow[j * nt + b];
                    if (gb) {
                      const int r = relative_bias_index(tokens[a].wy, tokens[a].wx,
                                                        tokens[b].wy, tokens[b].wx, g.window);
                      gb[(static_cast<std::int64_t>(head) * g.J + j) * g.table + r] += ds;
                    }
                    const T sds = g.scale * ds;
                    for (int d = 0; d < g.dim; ++d) {
                      const std::int64_t c = head * g.dim + d;
                      const std::int64_t qi = c * g.hw + tokens[a].pos;
                      const std::int64_t ki = (static_cast<std::int64_t>(j) * s.c + c) * g.hw +
                                              tokens[b].pos;
                      if (gqb) gqb[qi] += sds * kb[ki];
                      if (gkb) gkb[ki] += sds * qb[qi];
                    }
                  }
                }
              }
            }
          }
        }
      },
      "window_attention");
}

template Tensor<float> window_attention(const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> window_attention(const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&, const Tensor<double>&, int, int);

}  // namespace hvfi
