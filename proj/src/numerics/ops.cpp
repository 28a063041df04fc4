#include "cemb/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cemb/errors.hpp"
#include "kernels.hpp"

namespace cemb::numerics {

namespace {

using detail::make_result;
using detail::Node;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
  }
}

template <typename T>
void require_defined(const char* op, const Tensor<T>& a) {
  if (!a.defined()) throw ArgumentError(std::string(op) + ": undefined tensor");
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (b.rank() != 2 || a.rank() < 1 || a.cols() != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  Shape shape = a.shape();
  shape.back() = n;
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>("matmul", std::move(shape), std::move(out), {a, b},
                        [an, bn, m, k, n](Node<T>& self) {
                          if (an->requires_grad) {
                            auto bt = kernels::transpose(bn->value.data(), k, n);
                            kernels::gemm(self.grad.data(), bt.data(), an->grad_buffer().data(), m,
                                          n, k, true);
                          }
                          if (bn->requires_grad) {
                            auto at = kernels::transpose(an->value.data(), m, k);
                            kernels::gemm(at.data(), self.grad.data(), bn->grad_buffer().data(), k,
                                          m, n, true);
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    for (auto* in : {an.get(), bn.get()}) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= factor;
  auto an = a.node();
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [an, factor](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto an = a.node();
  return make_result<T>("sum", {1}, {s}, {a}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (T& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] / (T(1) + std::exp(-in[i]));
  auto xn = x.node();
  return make_result<T>("silu", x.shape(), std::move(out), {x}, [xn](Node<T>& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn->value[i];
      const T s = T(1) / (T(1) + std::exp(-v));
      g[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * in[i] * (T(1) + std::erf(in[i] * inv_sqrt2));
  }
  auto xn = x.node();
  return make_result<T>("gelu", x.shape(), std::move(out), {x}, [xn, inv_sqrt2](Node<T>& self) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn->value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> row_softmax(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (std::isnan(v)) throw NumericError("row_softmax: NaN input");
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T z = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
  }
  auto xn = x.node();
  auto held = std::make_shared<std::vector<T>>(out);
  return make_result<T>("row_softmax", x.shape(), std::move(out), {x},
                        [xn, held, rows, cols](Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* p = held->data() + r * cols;
                            const T* dy = self.grad.data() + r * cols;
                            T inner = 0;
                            for (std::size_t j = 0; j < cols; ++j) inner += p[j] * dy[j];
                            for (std::size_t j = 0; j < cols; ++j) {
                              g[r * cols + j] += p[j] * (dy[j] - inner);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.rank() != 1 || gain.dim(0) != d) {
    throw DimensionError("rms_norm: gain " + shape_to_string(gain.shape()) +
                         " does not match width " + std::to_string(d));
  }
  if (eps < T(0)) throw ArgumentError("rms_norm: eps must be nonnegative");
  std::vector<T> out(x.numel());
  std::vector<T> inv_rms(rows);
  auto in = x.data();
  auto gv = gain.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += in[r * d + j] * in[r * d + j];
    inv_rms[r] = T(1) / std::sqrt(ss / T(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] * inv_rms[r] * gv[j];
  }
  auto xn = x.node();
  auto gn = gain.node();
  return make_result<T>(
      "rms_norm", x.shape(), std::move(out), {x, gain},
      [xn, gn, inv_rms = std::move(inv_rms), rows, d](Node<T>& self) {
        std::vector<T>* gx = xn->requires_grad ? &xn->grad_buffer() : nullptr;
        std::vector<T>* gg = gn->requires_grad ? &gn->grad_buffer() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = xn->value.data() + r * d;
          const T* dy = self.grad.data() + r * d;
          T inner = 0;  // <x_hat, dx_hat>
          for (std::size_t j = 0; j < d; ++j) {
            const T xhat = xr[j] * inv_rms[r];
            if (gg) (*gg)[j] += dy[j] * xhat;
            inner += xhat * dy[j] * gn->value[j];
          }
          if (gx) {
            for (std::size_t j = 0; j < d; ++j) {
              const T xhat = xr[j] * inv_rms[r];
              (*gx)[r * d + j] += inv_rms[r] * (dy[j] * gn->value[j] - xhat * inner / T(d));
            }
          }
        }
      });
}

template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const double> positions, std::size_t head_dim,
                     double base) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (head_dim == 0) head_dim = d;
  if (head_dim % 2 != 0 || d % head_dim != 0) {
    throw DimensionError("apply_rope: width " + std::to_string(d) + " with head_dim " +
                         std::to_string(head_dim) + " needs even head chunks");
  }
  if (positions.size() != rows) {
    throw DimensionError("apply_rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t half = head_dim / 2;
  // cos/sin per (row, pair); shared across heads.
  std::vector<T> cs(rows * half), sn(rows * half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = std::pow(base, -2.0 * double(i) / double(head_dim));
      const double angle = positions[r] * theta;
      cs[r * half + i] = T(std::cos(angle));
      sn[r * half + i] = T(std::sin(angle));
    }
  }
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c0 = 0; c0 < d; c0 += head_dim) {
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t at = r * d + c0 + 2 * i;
        const T c = cs[r * half + i], s = sn[r * half + i];
        out[at] = in[at] * c - in[at + 1] * s;
        out[at + 1] = in[at] * s + in[at + 1] * c;
      }
    }
  }
  auto xn = x.node();
  return make_result<T>("apply_rope", x.shape(), std::move(out), {x},
                        [xn, cs = std::move(cs), sn = std::move(sn), rows, d, head_dim,
                         half](Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c0 = 0; c0 < d; c0 += head_dim) {
                              for (std::size_t i = 0; i < half; ++i) {
                                const std::size_t at = r * d + c0 + 2 * i;
                                const T c = cs[r * half + i], s = sn[r * half + i];
                                const T dy0 = self.grad[at], dy1 = self.grad[at + 1];
                                g[at] += dy0 * c + dy1 * s;
                                g[at + 1] += -dy0 * s + dy1 * c;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be 2-D");
  if (ids.empty()) throw ArgumentError("gather_rows: no ids");
  const std::size_t d = table.cols();
  std::vector<T> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || std::size_t(ids[r]) >= table.dim(0)) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                           std::to_string(table.dim(0)) + " rows");
    }
    std::copy_n(table.data().begin() + std::size_t(ids[r]) * d, d, out.begin() + r * d);
  }
  auto tn = table.node();
  std::vector<std::int32_t> held(ids.begin(), ids.end());
  return make_result<T>("gather_rows", {ids.size(), d}, std::move(out), {table},
                        [tn, held = std::move(held), d](Node<T>& self) {
                          auto& g = tn->grad_buffer();
                          for (std::size_t r = 0; r < held.size(); ++r) {
                            T* dst = g.data() + std::size_t(held[r]) * d;
                            const T* src = self.grad.data() + r * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                          }
                        });
}

AttentionPattern AttentionPattern::self(std::size_t batch, std::size_t length,
                                        std::span<const std::uint8_t> pad, bool causal) {
  if (pad.size() != batch * length) {
    throw DimensionError("attention pattern: pad mask has " + std::to_string(pad.size()) +
                         " entries, expected " + std::to_string(batch * length));
  }
  AttentionPattern p;
  p.key_begin.resize(batch * length);
  p.key_end.resize(batch * length);
  p.key_masked.assign(pad.begin(), pad.end());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < length; ++i) {
      p.key_begin[b * length + i] = b * length;
      p.key_end[b * length + i] = causal ? b * length + i + 1 : (b + 1) * length;
    }
  }
  return p;
}

AttentionPattern AttentionPattern::dense(std::size_t n_queries, std::size_t n_keys) {
  AttentionPattern p;
  p.key_begin.assign(n_queries, 0);
  p.key_end.assign(n_queries, n_keys);
  return p;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionPattern& pattern, std::size_t n_heads) {
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != nk) {
    throw DimensionError("attention: q " + shape_to_string(q.shape()) + ", k " +
                         shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible into " +
                         std::to_string(n_heads) + " heads");
  }
  if (pattern.key_begin.size() != nq || pattern.key_end.size() != nq ||
      (!pattern.key_masked.empty() && pattern.key_masked.size() != nk)) {
    throw DimensionError("attention: pattern does not match the query/key rows");
  }
  const std::size_t hd = d / n_heads;
  const T scale = T(1) / std::sqrt(T(hd));
  auto masked = [&pattern](std::size_t j) {
    return !pattern.key_masked.empty() && pattern.key_masked[j] != 0;
  };

  // Probabilities laid out per query row: span_len * n_heads, head-major.
  std::vector<std::size_t> offset(nq + 1, 0);
  for (std::size_t r = 0; r < nq; ++r) {
    if (pattern.key_end[r] > nk || pattern.key_begin[r] > pattern.key_end[r]) {
      throw DimensionError("attention: key range out of bounds");
    }
    offset[r + 1] = offset[r] + (pattern.key_end[r] - pattern.key_begin[r]) * n_heads;
  }
  auto probs = std::make_shared<std::vector<T>>(offset[nq], T(0));
  std::vector<T> out(nq * d, T(0));
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  std::vector<T> scores;
  for (std::size_t r = 0; r < nq; ++r) {
    const std::size_t kb = pattern.key_begin[r], ke = pattern.key_end[r], span = ke - kb;
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* p = probs->data() + offset[r] + h * span;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = kb; j < ke; ++j) {
        if (masked(j)) continue;
        p[j - kb] = scale * kernels::dot(qd + r * d + h * hd, kd + j * d + h * hd, hd);
        mx = std::max(mx, p[j - kb]);
      }
      if (mx == -std::numeric_limits<T>::infinity()) continue;  // nothing visible
      T z = 0;
      for (std::size_t j = kb; j < ke; ++j) {
        if (masked(j)) continue;
        p[j - kb] = std::exp(p[j - kb] - mx);
        z += p[j - kb];
      }
      T* o = out.data() + r * d + h * hd;
      for (std::size_t j = kb; j < ke; ++j) {
        if (masked(j)) continue;
        p[j - kb] /= z;
        const T* vr = vd + j * d + h * hd;
        for (std::size_t c = 0; c < hd; ++c) o[c] = std::fma(p[j - kb], vr[c], o[c]);
      }
    }
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return make_result<T>(
      "attention", q.shape(), std::move(out), {q, k, v},
      [qn, kn, vn, probs, offset = std::move(offset), pattern, nq, d, hd, n_heads,
       scale](Node<T>& self) {
        T* gq = qn->requires_grad ? qn->grad_buffer().data() : nullptr;
        T* gk = kn->requires_grad ? kn->grad_buffer().data() : nullptr;
        T* gv = vn->requires_grad ? vn->grad_buffer().data() : nullptr;
        const T* qd = qn->value.data();
        const T* kd = kn->value.data();
        const T* vd = vn->value.data();
        std::vector<T> ds;
        for (std::size_t r = 0; r < nq; ++r) {
          const std::size_t kb = pattern.key_begin[r], ke = pattern.key_end[r], span = ke - kb;
          ds.assign(span, T(0));
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* p = probs->data() + offset[r] + h * span;
            const T* dout = self.grad.data() + r * d + h * hd;
            T inner = 0;
            for (std::size_t j = kb; j < ke; ++j) {
              if (p[j - kb] == T(0)) {
                ds[j - kb] = 0;
                continue;
              }
              const T dp = kernels::dot(dout, vd + j * d + h * hd, hd);
              ds[j - kb] = dp;
              inner += p[j - kb] * dp;
              if (gv) {
                T* g = gv + j * d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) g[c] += p[j - kb] * dout[c];
              }
            }
            for (std::size_t j = kb; j < ke; ++j) {
              if (p[j - kb] == T(0)) continue;
              const T s = p[j - kb] * (ds[j - kb] - inner) * scale;
              if (gq) {
                T* g = gq + r * d + h * hd;
                const T* kr = kd + j * d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) g[c] += s * kr[c];
              }
              if (gk) {
                T* g = gk + j * d + h * hd;
                const T* qr = qd + r * d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) g[c] += s * qr[c];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> masked_mean(const Tensor<T>& x, std::size_t groups, std::span<const std::uint8_t> keep) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (groups == 0 || rows % groups != 0 || keep.size() != rows) {
    throw DimensionError("masked_mean: " + std::to_string(rows) + " rows, " +
                         std::to_string(groups) + " groups, " + std::to_string(keep.size()) +
                         " keep flags");
  }
  const std::size_t per = rows / groups;
  std::vector<T> out(groups * d, T(0));
  std::vector<T> inv_count(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    std::size_t count = 0;
    T* o = out.data() + gi * d;
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t r = gi * per + i;
      if (!keep[r]) continue;
      ++count;
      const T* xr = x.data().data() + r * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += xr[j];
    }
    if (count == 0) {
      throw DegenerateInputError("masked_mean: group " + std::to_string(gi) + " has no kept rows");
    }
    inv_count[gi] = T(1) / T(count);
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv_count[gi];
  }
  auto xn = x.node();
  std::vector<std::uint8_t> held(keep.begin(), keep.end());
  return make_result<T>("masked_mean", {groups, d}, std::move(out), {x},
                        [xn, held = std::move(held), inv_count = std::move(inv_count), per,
                         d](Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          for (std::size_t r = 0; r < held.size(); ++r) {
                            if (!held[r]) continue;
                            const std::size_t gi = r / per;
                            for (std::size_t j = 0; j < d; ++j) {
                              g[r * d + j] += self.grad[gi * d + j] * inv_count[gi];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  const std::size_t rows = x.rows(), d = x.cols();
  std::vector<T> out(x.numel());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
    norms[r] = std::sqrt(ss);
    if (!(norms[r] > T(0))) {
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] / norms[r];
  }
  auto xn = x.node();
  auto held = std::make_shared<std::vector<T>>(out);
  return make_result<T>("l2_normalize_rows", x.shape(), std::move(out), {x},
                        [xn, held, norms = std::move(norms), rows, d](Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = held->data() + r * d;
                            const T* dy = self.grad.data() + r * d;
                            T inner = 0;
                            for (std::size_t j = 0; j < d; ++j) inner += y[j] * dy[j];
                            for (std::size_t j = 0; j < d; ++j) {
                              g[r * d + j] += (dy[j] - y[j] * inner) / norms[r];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& q, const Tensor<T>& dm) {
  const std::size_t a = q.rows(), b = dm.rows(), d = q.cols();
  if (dm.cols() != d) {
    throw DimensionError("cosine_matrix: widths " + std::to_string(d) + " and " +
                         std::to_string(dm.cols()) + " differ");
  }
  auto unit = [d](const Tensor<T>& x, const char* side, std::vector<T>& norms) {
    std::vector<T> u(x.numel());
    norms.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const T* xr = x.data().data() + r * d;
      T ss = 0;
      for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
      norms[r] = std::sqrt(ss);
      if (!(norms[r] > T(0))) {
        throw DegenerateInputError(std::string("cosine_matrix: zero-norm ") + side + " row " +
                                   std::to_string(r));
      }
      for (std::size_t j = 0; j < d; ++j) u[r * d + j] = xr[j] / norms[r];
    }
    return u;
  };
  std::vector<T> qn_norm, dn_norm;
  auto qu = std::make_shared<std::vector<T>>(unit(q, "query", qn_norm));
  auto du = std::make_shared<std::vector<T>>(unit(dm, "document", dn_norm));
  std::vector<T> out(a * b);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      out[i * b + j] = kernels::dot(qu->data() + i * d, du->data() + j * d, d);
    }
  }
  auto qn = q.node(), dn = dm.node();
  return make_result<T>(
      "cosine_matrix", {a, b}, std::move(out), {q, dm},
      [qn, dn, qu, du, qn_norm = std::move(qn_norm), dn_norm = std::move(dn_norm), a, b,
       d](Node<T>& self) {
        // d(cos)/dx = (u_other - cos * u_x) / |x| per pair.
        if (qn->requires_grad) {
          auto& g = qn->grad_buffer();
          std::vector<T> acc(d);
          for (std::size_t i = 0; i < a; ++i) {
            std::fill(acc.begin(), acc.end(), T(0));
            for (std::size_t j = 0; j < b; ++j) {
              const T w = self.grad[i * b + j];
              for (std::size_t c = 0; c < d; ++c) acc[c] += w * (*du)[j * d + c];
            }
            const T* u = qu->data() + i * d;
            T inner = 0;
            for (std::size_t c = 0; c < d; ++c) inner += u[c] * acc[c];
            for (std::size_t c = 0; c < d; ++c) g[i * d + c] += (acc[c] - u[c] * inner) / qn_norm[i];
          }
        }
        if (dn->requires_grad) {
          auto& g = dn->grad_buffer();
          std::vector<T> acc(d);
          for (std::size_t j = 0; j < b; ++j) {
            std::fill(acc.begin(), acc.end(), T(0));
            for (std::size_t i = 0; i < a; ++i) {
              const T w = self.grad[i * b + j];
              for (std::size_t c = 0; c < d; ++c) acc[c] += w * (*qu)[i * d + c];
            }
            const T* u = du->data() + j * d;
            T inner = 0;
            for (std::size_t c = 0; c < d; ++c) inner += u[c] * acc[c];
            for (std::size_t c = 0; c < d; ++c) g[j * d + c] += (acc[c] - u[c] * inner) / dn_norm[j];
          }
        }
      });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t d = x.cols();
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + std::to_string(x.rows()) + " rows");
  }
  std::vector<T> out(x.data().begin() + begin * d, x.data().begin() + end * d);
  auto xn = x.node();
  return make_result<T>("slice_rows", {end - begin, d}, std::move(out), {x},
                        [xn, begin, d](Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            g[begin * d + i] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: nothing to concatenate");
  const std::size_t d = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) throw DimensionError("concat_rows: mismatched widths");
    rows += p.rows();
  }
  std::vector<T> out;
  out.reserve(rows * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result<T>("concat_rows", {rows, d}, std::move(out), parts,
                        [nodes](Node<T>& self) {
                          std::size_t at = 0;
                          for (const auto& n : nodes) {
                            if (n->requires_grad) {
                              auto& g = n->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[at + i];
                            }
                            at += n->value.size();
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " +
                         shape_to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [xn](Node<T>& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
T stable_logsumexp(std::span<const T> x) {
  if (x.empty()) throw ArgumentError("stable_logsumexp: empty input");
  const T mx = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(mx)) throw NumericError("stable_logsumexp: non-finite maximum");
  T s = 0;
  for (T v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

#define CEMB_INSTANTIATE(T)                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> silu(const Tensor<T>&);                                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> row_softmax(const Tensor<T>&);                                            \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, T);                          \
  template Tensor<T> apply_rope(const Tensor<T>&, std::span<const double>, std::size_t,        \
                                double);                                                       \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int32_t>);             \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               const AttentionPattern&, std::size_t);                          \
  template Tensor<T> masked_mean(const Tensor<T>&, std::size_t, std::span<const std::uint8_t>); \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&);                                      \
  template Tensor<T> cosine_matrix(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template T stable_logsumexp(std::span<const T>);

CEMB_INSTANTIATE(float)
CEMB_INSTANTIATE(double)

#undef CEMB_INSTANTIATE

}  // namespace cemb::numerics
