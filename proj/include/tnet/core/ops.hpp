#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tnet/core/graph.hpp"

namespace tnet::ops {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

inline int conv_out_length(int length, int kernel, int stride, int pad) {
  return (length + 2 * pad - kernel) / stride + 1;
}

// x: (Cin, N, L), w: (Cout, Cin, K), b: (Cout, 1, 1) or null.
template <typename S>
Var<S> conv1d(Graph<S>& g, const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride, int pad) {
  const auto& X = x->val();
  const auto& W = w->val();
  const int cin = X.channels(), n = X.batch(), len = X.length();
  const int cout = W.channels(), k = W.length();
  if (W.batch() != cin) {
    throw ShapeError("conv1d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(W.batch()));
  }
  const int lout = conv_out_length(len, k, stride, pad);
  if (lout <= 0) throw ShapeError("conv1d: input too short for kernel");
  const bool direct = (k == 1 && stride == 1 && pad == 0);
  const long cols = static_cast<long>(n) * lout;

  RowMat<S> col;
  if (!direct) {
    col.setZero(static_cast<long>(cin) * k, cols);
    for (int c = 0; c < cin; ++c) {
      for (int kk = 0; kk < k; ++kk) {
        S* dst = col.data() + (static_cast<long>(c) * k + kk) * cols;
        for (int s = 0; s < n; ++s) {
          const S* src = X.data() + X.index(c, s, 0);
          for (int t = 0; t < lout; ++t) {
            const int pos = t * stride + kk - pad;
            if (pos >= 0 && pos < len) dst[static_cast<long>(s) * lout + t] = src[pos];
          }
        }
      }
    }
  }

  Tensor<S> Y(cout, n, lout);
  ConstMatMap<S> Wm(W.data(), cout, static_cast<long>(cin) * k);
  MatMap<S> Ym(Y.data(), cout, cols);
  if (direct) {
    Ym.noalias() = Wm * ConstMatMap<S>(X.data(), cin, cols);
  } else {
    Ym.noalias() = Wm * col;
  }
  if (b) {
    const auto& B = b->val();
    for (int co = 0; co < cout; ++co) Ym.row(co).array() += B[co];
  }

  const S fault = g.backward_fault();
  return g.make(std::move(Y), {x, w, b}, [x, w, b, col = std::move(col), cin, n, len, cout, k, lout, stride, pad,
                                         cols, direct, fault](Node<S>& self) {
    ConstMatMap<S> dY(self.grad.data(), cout, cols);
    if (w->requires_grad) {
      MatMap<S> dW(w->ensure_grad().data(), cout, static_cast<long>(cin) * k);
      if (direct) {
        dW.noalias() += fault * (dY * ConstMatMap<S>(x->val().data(), cin, cols).transpose());
      } else {
        dW.noalias() += fault * (dY * col.transpose());
      }
    }
    if (b && b->requires_grad) {
      auto& dB = b->ensure_grad();
      for (int co = 0; co < cout; ++co) dB[co] += dY.row(co).sum();
    }
    if (x->requires_grad) {
      ConstMatMap<S> Wm(w->val().data(), cout, static_cast<long>(cin) * k);
      auto& dX = x->ensure_grad();
      if (direct) {
        MatMap<S>(dX.data(), cin, cols).noalias() += Wm.transpose() * dY;
      } else {
        RowMat<S> dcol = Wm.transpose() * dY;
        for (int c = 0; c < cin; ++c) {
          for (int kk = 0; kk < k; ++kk) {
            const S* src = dcol.data() + (static_cast<long>(c) * k + kk) * cols;
            for (int s = 0; s < n; ++s) {
              S* dst = dX.data() + dX.index(c, s, 0);
              for (int t = 0; t < lout; ++t) {
                const int pos = t * stride + kk - pad;
                if (pos >= 0 && pos < len) dst[pos] += src[static_cast<long>(s) * lout + t];
              }
            }
          }
        }
      }
    }
  });
}

enum class NormMode { batch, instance };

// Per-channel normalization. Batch mode pools statistics over (N, L) and
// keeps running estimates for inference; instance mode pools over L per
// sample and behaves identically in both modes.
template <typename S>
Var<S> norm(Graph<S>& g, const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, const ParamPtr<S>& running_mean,
            const ParamPtr<S>& running_var, NormMode mode, bool training, double momentum, double eps) {
  const auto& X = x->val();
  const int c = X.channels(), n = X.batch(), len = X.length();
  const bool per_sample = (mode == NormMode::instance);
  const int groups = per_sample ? n : 1;
  const long count = per_sample ? len : static_cast<long>(n) * len;
  const bool use_batch_stats = training || per_sample;

  Tensor<S> xhat(c, n, len);
  Tensor<S> inv_std(c, groups, 1);
  Tensor<S> Y(c, n, len);
  const auto& G = gamma->val();
  const auto& B = beta->val();
  for (int ch = 0; ch < c; ++ch) {
    for (int gi = 0; gi < groups; ++gi) {
      const int s0 = per_sample ? gi : 0;
      const int s1 = per_sample ? gi + 1 : n;
      S mean, var;
      if (use_batch_stats) {
        double acc = 0;
        for (int s = s0; s < s1; ++s)
          for (S v : X.row(ch, s)) acc += v;
        mean = static_cast<S>(acc / count);
        double acc2 = 0;
        for (int s = s0; s < s1; ++s)
          for (S v : X.row(ch, s)) acc2 += double(v - mean) * double(v - mean);
        var = static_cast<S>(acc2 / count);
        if (!per_sample && training && running_mean) {
          auto& rm = running_mean->value[ch];
          auto& rv = running_var->value[ch];
          const double unbiased = count > 1 ? acc2 / (count - 1) : acc2;
          rm = static_cast<S>((1 - momentum) * rm + momentum * mean);
          rv = static_cast<S>((1 - momentum) * rv + momentum * unbiased);
        }
      } else {
        mean = running_mean->value[ch];
        var = running_var->value[ch];
      }
      const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
      inv_std(ch, gi, 0) = is;
      for (int s = s0; s < s1; ++s) {
        auto xr = X.row(ch, s);
        auto hr = xhat.row(ch, s);
        auto yr = Y.row(ch, s);
        for (int t = 0; t < len; ++t) {
          hr[t] = (xr[t] - mean) * is;
          yr[t] = G[ch] * hr[t] + B[ch];
        }
      }
    }
  }

  return g.make(std::move(Y), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), c, n, len, groups, count,
                 per_sample, use_batch_stats](Node<S>& self) {
                  const auto& dY = self.grad;
                  const auto& G = gamma->val();
                  for (int ch = 0; ch < c; ++ch) {
                    double dg = 0, db = 0;
                    for (int gi = 0; gi < groups; ++gi) {
                      const int s0 = per_sample ? gi : 0;
                      const int s1 = per_sample ? gi + 1 : n;
                      double sum_dxh = 0, sum_dxh_xh = 0;
                      for (int s = s0; s < s1; ++s) {
                        auto dyr = dY.row(ch, s);
                        auto hr = xhat.row(ch, s);
                        for (int t = 0; t < len; ++t) {
                          dg += double(dyr[t]) * hr[t];
                          db += dyr[t];
                          const double dxh = double(dyr[t]) * G[ch];
                          sum_dxh += dxh;
                          sum_dxh_xh += dxh * hr[t];
                        }
                      }
                      if (!x->requires_grad) continue;
                      auto& dX = x->ensure_grad();
                      const double is = inv_std(ch, gi, 0);
                      for (int s = s0; s < s1; ++s) {
                        auto dyr = dY.row(ch, s);
                        auto hr = xhat.row(ch, s);
                        auto dxr = dX.row(ch, s);
                        for (int t = 0; t < len; ++t) {
                          const double dxh = double(dyr[t]) * G[ch];
                          if (use_batch_stats) {
                            dxr[t] += static_cast<S>(is * (dxh - sum_dxh / count - hr[t] * sum_dxh_xh / count));
                          } else {
                            dxr[t] += static_cast<S>(is * dxh);
                          }
                        }
                      }
                    }
                    if (gamma->requires_grad) gamma->ensure_grad()[ch] += static_cast<S>(dg);
                    if (beta->requires_grad) beta->ensure_grad()[ch] += static_cast<S>(db);
                  }
                });
}

inline std::uint64_t hash_bits(const std::vector<bool>& bits) {
  std::uint64_t h = 1469598103934665603ULL;
  std::uint64_t word = 0;
  int filled = 0;
  for (bool b : bits) {
    word = (word << 1) | (b ? 1u : 0u);
    if (++filled == 64) {
      h = (h ^ word) * 1099511628211ULL;
      word = 0;
      filled = 0;
    }
  }
  return (h ^ word ^ bits.size()) * 1099511628211ULL;
}

template <typename S>
Var<S> relu(Graph<S>& g, const Var<S>& x) {
  const auto& X = x->val();
  Tensor<S> Y(X.channels(), X.batch(), X.length());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] < S(0) ? S(0) : X[i];  // NaN passes through
  if (g.tracking_branches()) {
    std::vector<bool> mask(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) mask[i] = X[i] > S(0);
    g.branch(hash_bits(mask));
  }
  return g.make(std::move(Y), {x}, [x](Node<S>& self) {
    auto& dX = x->ensure_grad();
    const auto& X = x->val();
    for (std::size_t i = 0; i < X.size(); ++i)
      if (X[i] > S(0)) dX[i] += self.grad[i];
  });
}

template <typename S>
Var<S> sigmoid(Graph<S>& g, const Var<S>& x) {
  const auto& X = x->val();
  Tensor<S> Y(X.channels(), X.batch(), X.length());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = S(1) / (S(1) + std::exp(-X[i]));
  return g.make(Y, {x}, [x, Y](Node<S>& self) {
    auto& dX = x->ensure_grad();
    for (std::size_t i = 0; i < Y.size(); ++i) dX[i] += self.grad[i] * Y[i] * (S(1) - Y[i]);
  });
}

template <typename S>
Var<S> add(Graph<S>& g, const Var<S>& a, const Var<S>& b) {
  require_same_shape(a->val(), b->val(), "add");
  Tensor<S> Y = a->val();
  const auto& B = b->val();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  return g.make(std::move(Y), {a, b}, [a, b](Node<S>& self) {
    for (const auto* in : {&a, &b}) {
      if (!(*in)->requires_grad) continue;
      auto& d = (*in)->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

// Sum of scalar (1,1,1) terms with fixed weights.
template <typename S>
Var<S> weighted_sum(Graph<S>& g, const std::vector<Var<S>>& terms, const std::vector<S>& weights) {
  Tensor<S> Y(1, 1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) Y[0] += weights[i] * terms[i]->val()[0];
  return g.make(std::move(Y), terms, [terms, weights](Node<S>& self) {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (terms[i]->requires_grad) terms[i]->ensure_grad()[0] += weights[i] * self.grad[0];
  });
}

template <typename S>
Var<S> maxpool1d(Graph<S>& g, const Var<S>& x, int kernel, int stride, int pad) {
  const auto& X = x->val();
  const int c = X.channels(), n = X.batch(), len = X.length();
  const int lout = conv_out_length(len, kernel, stride, pad);
  if (lout <= 0) throw ShapeError("maxpool1d: input too short");
  Tensor<S> Y(c, n, lout);
  std::vector<int> arg(Y.size());
  for (int ch = 0; ch < c; ++ch) {
    for (int s = 0; s < n; ++s) {
      auto xr = X.row(ch, s);
      for (int t = 0; t < lout; ++t) {
        int best = -1;
        S bv = -std::numeric_limits<S>::infinity();
        for (int kk = 0; kk < kernel; ++kk) {
          const int pos = t * stride + kk - pad;
          if (pos < 0 || pos >= len) continue;
          if (best < 0 || xr[pos] > bv) {
            bv = xr[pos];
            best = pos;
          }
        }
        const auto idx = Y.index(ch, s, t);
        Y[idx] = bv;
        arg[idx] = best;
      }
    }
  }
  if (g.tracking_branches()) {
    std::uint64_t h = 1469598103934665603ULL;
    for (int a : arg) h = (h ^ static_cast<std::uint64_t>(a)) * 1099511628211ULL;
    g.branch(h);
  }
  return g.make(std::move(Y), {x}, [x, arg = std::move(arg), c, n, lout](Node<S>& self) {
    auto& dX = x->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < lout; ++t) {
          const auto idx = self.grad.index(ch, s, t);
          dX(ch, s, arg[idx]) += self.grad[idx];
        }
  });
}

template <typename S>
Var<S> upsample_nearest(Graph<S>& g, const Var<S>& x, int factor) {
  const auto& X = x->val();
  const int c = X.channels(), n = X.batch(), len = X.length();
  Tensor<S> Y(c, n, len * factor);
  for (int ch = 0; ch < c; ++ch)
    for (int s = 0; s < n; ++s) {
      auto xr = X.row(ch, s);
      auto yr = Y.row(ch, s);
      for (int t = 0; t < len * factor; ++t) yr[t] = xr[t / factor];
    }
  return g.make(std::move(Y), {x}, [x, c, n, len, factor](Node<S>& self) {
    auto& dX = x->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int s = 0; s < n; ++s) {
        auto dyr = self.grad.row(ch, s);
        auto dxr = dX.row(ch, s);
        for (int t = 0; t < len * factor; ++t) dxr[t / factor] += dyr[t];
      }
  });
}

// Source taps for linear resampling of `in_len` samples onto `out_len`
// with half-pixel centers (no corner alignment).
struct LinearTap {
  int i0, i1;
  double w1;
};

inline std::vector<LinearTap> linear_taps(int in_len, int out_len) {
  std::vector<LinearTap> taps(out_len);
  const double scale = double(in_len) / out_len;
  for (int t = 0; t < out_len; ++t) {
    double src = (t + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in_len - 1) i0 = in_len - 1;
    const int i1 = i0 + 1 < in_len ? i0 + 1 : in_len - 1;
    taps[t] = {i0, i1, src - i0};
  }
  return taps;
}

template <typename S>
Var<S> upsample_linear(Graph<S>& g, const Var<S>& x, int out_len) {
  const auto& X = x->val();
  const int c = X.channels(), n = X.batch(), len = X.length();
  if (out_len == len) return x;
  auto taps = linear_taps(len, out_len);
  Tensor<S> Y(c, n, out_len);
  for (int ch = 0; ch < c; ++ch)
    for (int s = 0; s < n; ++s) {
      auto xr = X.row(ch, s);
      auto yr = Y.row(ch, s);
      for (int t = 0; t < out_len; ++t) {
        const auto& tp = taps[t];
        yr[t] = static_cast<S>((1 - tp.w1) * xr[tp.i0] + tp.w1 * xr[tp.i1]);
      }
    }
  return g.make(std::move(Y), {x}, [x, taps = std::move(taps), c, n, out_len](Node<S>& self) {
    auto& dX = x->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int s = 0; s < n; ++s) {
        auto dyr = self.grad.row(ch, s);
        auto dxr = dX.row(ch, s);
        for (int t = 0; t < out_len; ++t) {
          const auto& tp = taps[t];
          dxr[tp.i0] += static_cast<S>((1 - tp.w1) * dyr[t]);
          dxr[tp.i1] += static_cast<S>(tp.w1 * dyr[t]);
        }
      }
  });
}

template <typename S>
Var<S> concat_channels(Graph<S>& g, const std::vector<Var<S>>& parts) {
  const int n = parts.front()->val().batch();
  const int len = parts.front()->val().length();
  int total = 0;
  for (const auto& p : parts) {
    if (p->val().batch() != n || p->val().length() != len) throw ShapeError("concat_channels: mismatched parts");
    total += p->val().channels();
  }
  Tensor<S> Y(total, n, len);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->val().vec().begin(), p->val().vec().end(), Y.vec().begin() + off);
    off += p->val().size();
  }
  return g.make(std::move(Y), parts, [parts](Node<S>& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto sz = p->val().size();
      if (p->requires_grad) {
        auto& d = p->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) d[i] += self.grad[off + i];
      }
      off += sz;
    }
  });
}

// Reorders per-level head maps (A*k, N, P_l) into one flat anchor axis:
// out(comp, n, m) with m = level_offset + p*A + a.
template <typename S>
Var<S> flatten_levels(Graph<S>& g, const std::vector<Var<S>>& levels, int anchors_per_pos, int comps) {
  const int n = levels.front()->val().batch();
  int total = 0;
  for (const auto& l : levels) total += l->val().length() * anchors_per_pos;
  Tensor<S> Y(comps, n, total);
  int off = 0;
  for (const auto& lv : levels) {
    const auto& L = lv->val();
    for (int s = 0; s < n; ++s)
      for (int p = 0; p < L.length(); ++p)
        for (int a = 0; a < anchors_per_pos; ++a)
          for (int k = 0; k < comps; ++k) Y(k, s, off + p * anchors_per_pos + a) = L(a * comps + k, s, p);
    off += L.length() * anchors_per_pos;
  }
  return g.make(std::move(Y), levels, [levels, n, anchors_per_pos, comps](Node<S>& self) {
    int off = 0;
    for (const auto& lv : levels) {
      const int plen = lv->val().length();
      if (lv->requires_grad) {
        auto& d = lv->ensure_grad();
        for (int s = 0; s < n; ++s)
          for (int p = 0; p < plen; ++p)
            for (int a = 0; a < anchors_per_pos; ++a)
              for (int k = 0; k < comps; ++k)
                d(a * comps + k, s, p) += self.grad(k, s, off + p * anchors_per_pos + a);
      }
      off += plen * anchors_per_pos;
    }
  });
}

template <typename S>
Var<S> pick(Graph<S>& g, const Var<S>& x, int c, int n, int l) {
  Tensor<S> Y(1, 1, 1, x->val()(c, n, l));
  return g.make(std::move(Y), {x}, [x, c, n, l](Node<S>& self) { x->ensure_grad()(c, n, l) += self.grad[0]; });
}

}  // namespace tnet::ops
