#include "slod/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "slod/errors.hpp"

namespace slod {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

// Lays out every 3×3 zero-padded neighbourhood as a column:
// cols[(c*9 + ky*3 + kx), n*H*W + y*W + x].
// For a horizontal offset kx the source row is shifted by kx-1, so each
// output row is one contiguous copy plus at most one zero at an edge.
template <typename T>
void im2col(const T* in, std::size_t n_batch, std::size_t channels, std::size_t h, std::size_t w, T* cols) {
  const std::size_t hw = h * w;
  const std::size_t row_len = n_batch * hw;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = cols + (c * 9 + ky * 3 + kx) * row_len;
        for (std::size_t n = 0; n < n_batch; ++n) {
          const T* plane = in + (n * channels + c) * hw;
          T* dst = row + n * hw;
          for (std::size_t y = 0; y < h; ++y) {
            T* d = dst + y * w;
            if (y + ky < 1 || y + ky > h) {
              std::fill(d, d + w, T{0});
              continue;
            }
            const T* src = plane + (y + ky - 1) * w;
            if (kx == 0) {
              d[0] = T{0};
              std::copy_n(src, w - 1, d + 1);
            } else if (kx == 1) {
              std::copy_n(src, w, d);
            } else {
              std::copy_n(src + 1, w - 1, d);
              d[w - 1] = T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t n_batch, std::size_t channels, std::size_t h, std::size_t w, T* out) {
  const std::size_t hw = h * w;
  const std::size_t row_len = n_batch * hw;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = cols + (c * 9 + ky * 3 + kx) * row_len;
        for (std::size_t n = 0; n < n_batch; ++n) {
          T* plane = out + (n * channels + c) * hw;
          const T* src = row + n * hw;
          for (std::size_t y = 0; y < h; ++y) {
            if (y + ky < 1 || y + ky > h) continue;
            T* d = plane + (y + ky - 1) * w;
            const T* s = src + y * w;
            if (kx == 0) {
              for (std::size_t x = 1; x < w; ++x) d[x - 1] += s[x];
            } else if (kx == 1) {
              for (std::size_t x = 0; x < w; ++x) d[x] += s[x];
            } else {
              for (std::size_t x = 0; x + 1 < w; ++x) d[x + 1] += s[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_mismatch("matmul", av.shape(), bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  MatMap<T>(out.data().data(), m, n).noalias() =
      ConstMatMap<T>(av.data().data(), m, k) * ConstMatMap<T>(bv.data().data(), k, n);
  return g.record(OpKind::MatMul, {a, b}, std::move(out), [m, k, n](Graph<T>& gr, std::size_t self) {
    const std::size_t ia = gr.input(self, 0), ib = gr.input(self, 1);
    ConstMatMap<T> dc(gr.upstream(self).data(), m, n);
    if (T* da = gr.grad_of(ia)) {
      MatMap<T>(da, m, k).noalias() += dc * ConstMatMap<T>(gr.value_of(ib).data().data(), k, n).transpose();
    }
    if (T* db = gr.grad_of(ib)) {
      MatMap<T>(db, k, n).noalias() += ConstMatMap<T>(gr.value_of(ia).data().data(), m, k).transpose() * dc;
    }
  });
}

template <typename T>
Var conv2d(Graph<T>& g, Var input, Var kernel) {
  const Tensor<T>& x = g.value(input);
  const Tensor<T>& kv = g.value(kernel);
  require_rank("conv2d input", x.shape(), 4);
  require_rank("conv2d kernel", kv.shape(), 4);
  if (kv.dim(2) != 3 || kv.dim(3) != 3) throw ShapeError("conv2d: kernel must be F×C×3×3, got " + shape_string(kv.shape()));
  if (kv.dim(1) != x.dim(1)) shape_mismatch("conv2d (channel mismatch)", x.shape(), kv.shape());

  const std::size_t nb = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3), nf = kv.dim(0);
  const std::size_t hw = h * w, patch = ch * 9, cols_n = nb * hw;

  // im2col writes every entry, so the buffer is left uninitialized.
  std::shared_ptr<T[]> cols(new T[patch * cols_n]);
  im2col(x.data().data(), nb, ch, h, w, cols.get());

  RowMat<T> prod(nf, cols_n);
  prod.noalias() = ConstMatMap<T>(kv.data().data(), nf, patch) * ConstMatMap<T>(cols.get(), patch, cols_n);

  Tensor<T> out({nb, nf, h, w});
  T* o = out.data().data();
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t f = 0; f < nf; ++f) {
      std::copy_n(prod.data() + f * cols_n + n * hw, hw, o + (n * nf + f) * hw);
    }
  }

  const bool tracked = g.tracked(input) || g.tracked(kernel);
  if (!tracked) cols.reset();
  return g.record(OpKind::Conv2d, {input, kernel}, std::move(out),
                  [cols, nb, ch, h, w, nf](Graph<T>& gr, std::size_t self) {
                    const std::size_t hw = h * w, patch = ch * 9, cols_n = nb * hw;
                    const T* dy = gr.upstream(self).data();
                    RowMat<T> dprod(nf, cols_n);
                    for (std::size_t n = 0; n < nb; ++n) {
                      for (std::size_t f = 0; f < nf; ++f) {
                        std::copy_n(dy + (n * nf + f) * hw, hw, dprod.data() + f * cols_n + n * hw);
                      }
                    }
                    const std::size_t ix = gr.input(self, 0), ik = gr.input(self, 1);
                    if (T* dk = gr.grad_of(ik)) {
                      MatMap<T>(dk, nf, patch).noalias() +=
                          dprod * ConstMatMap<T>(cols.get(), patch, cols_n).transpose();
                    }
                    if (T* dx = gr.grad_of(ix)) {
                      RowMat<T> dcols(patch, cols_n);
                      dcols.noalias() =
                          ConstMatMap<T>(gr.value_of(ik).data().data(), nf, patch).transpose() * dprod;
                      col2im_add(dcols.data(), nb, ch, h, w, dx);
                    }
                  });
}

template <typename T>
Var add_row_bias(Graph<T>& g, Var x, Var bias) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& bv = g.value(bias);
  if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) shape_mismatch("add_row_bias", xv.shape(), bv.shape());
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return g.record(OpKind::AddRowBias, {x, bias}, std::move(out), [rows, cols](Graph<T>& gr, std::size_t self) {
    const std::vector<T>& dy = gr.upstream(self);
    if (T* dx = gr.grad_of(gr.input(self, 0))) {
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (T* db = gr.grad_of(gr.input(self, 1))) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
      }
    }
  });
}

template <typename T>
Var add_channel_bias(Graph<T>& g, Var x, Var bias) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& bv = g.value(bias);
  if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    shape_mismatch("add_channel_bias", xv.shape(), bv.shape());
  }
  const std::size_t nb = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out = xv;
  T* o = out.data().data();
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      T* plane = o + (n * ch + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) plane[p] += bv[c];
    }
  }
  return g.record(OpKind::AddChannelBias, {x, bias}, std::move(out), [nb, ch, hw](Graph<T>& gr, std::size_t self) {
    const std::vector<T>& dy = gr.upstream(self);
    if (T* dx = gr.grad_of(gr.input(self, 0))) {
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (T* db = gr.grad_of(gr.input(self, 1))) {
      for (std::size_t n = 0; n < nb; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
          const T* plane = dy.data() + (n * ch + c) * hw;
          T acc{0};
          for (std::size_t p = 0; p < hw; ++p) acc += plane[p];
          db[c] += acc;
        }
      }
    }
  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return g.record(OpKind::Relu, {x}, std::move(out), [](Graph<T>& gr, std::size_t self) {
    const std::size_t ix = gr.input(self, 0);
    if (T* dx = gr.grad_of(ix)) {
      const std::vector<T>& dy = gr.upstream(self);
      auto in = gr.value_of(ix).data();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += in[i] > T{0} ? dy[i] : T{0};
    }
  });
}

template <typename T>
Var max_pool2(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  require_rank("max_pool2", xv.shape(), 4);
  const std::size_t nb = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("max_pool2: spatial dims must be even, got " + shape_string(xv.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({nb, ch, oh, ow});
  auto winners = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* in = xv.data().data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < nb * ch; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo, ++o) {
        const std::size_t top = base + 2 * y * w + 2 * xo;
        const std::size_t cand[4] = {top, top + 1, top + w, top + w + 1};
        std::size_t best = cand[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (in[cand[k]] > in[best]) best = cand[k];
        }
        out[o] = in[best];
        (*winners)[o] = best;
      }
    }
  }
  return g.record(OpKind::MaxPool2, {x}, std::move(out), [winners](Graph<T>& gr, std::size_t self) {
    if (T* dx = gr.grad_of(gr.input(self, 0))) {
      const std::vector<T>& dy = gr.upstream(self);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[(*winners)[i]] += dy[i];
    }
  });
}

template <typename T>
Var flatten(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  const std::size_t rows = xv.dim(0);
  Tensor<T> out = xv.reshaped({rows, xv.size() / rows});
  return g.record(OpKind::Flatten, {x}, std::move(out), [](Graph<T>& gr, std::size_t self) {
    if (T* dx = gr.grad_of(gr.input(self, 0))) {
      const std::vector<T>& dy = gr.upstream(self);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <typename T>
Var log_softmax(Graph<T>& g, Var logits) {
  Tensor<T> out = log_softmax_rows(g.value(logits));
  const std::size_t rows = out.dim(0), cols = out.dim(1);
  return g.record(OpKind::LogSoftmax, {logits}, std::move(out), [rows, cols](Graph<T>& gr, std::size_t self) {
    if (T* dx = gr.grad_of(gr.input(self, 0))) {
      const std::vector<T>& dy = gr.upstream(self);
      auto lp = gr.value_of(self).data();
      for (std::size_t r = 0; r < rows; ++r) {
        T total{0};
        for (std::size_t c = 0; c < cols; ++c) total += dy[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          dx[i] += dy[i] - std::exp(lp[i]) * total;
        }
      }
    }
  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  T total{0};
  for (T v : g.value(x).data()) total += v;
  return g.record(OpKind::Sum, {x}, Tensor<T>({1}, total), [](Graph<T>& gr, std::size_t self) {
    const std::size_t ix = gr.input(self, 0);
    if (T* dx = gr.grad_of(ix)) {
      const T up = gr.upstream(self)[0];
      for (std::size_t i = 0; i < gr.value_of(ix).size(); ++i) dx[i] += up;
    }
  });
}

template <typename T>
Var mean(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  T total{0};
  for (T v : xv.data()) total += v;
  const T count = static_cast<T>(xv.size());
  return g.record(OpKind::Mean, {x}, Tensor<T>({1}, total / count), [count](Graph<T>& gr, std::size_t self) {
    const std::size_t ix = gr.input(self, 0);
    if (T* dx = gr.grad_of(ix)) {
      const T up = gr.upstream(self)[0] / count;
      for (std::size_t i = 0; i < gr.value_of(ix).size(); ++i) dx[i] += up;
    }
  });
}

template <typename T>
Var square(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (T& v : out.data()) v = v * v;
  return g.record(OpKind::Square, {x}, std::move(out), [](Graph<T>& gr, std::size_t self) {
    const std::size_t ix = gr.input(self, 0);
    if (T* dx = gr.grad_of(ix)) {
      const std::vector<T>& dy = gr.upstream(self);
      auto in = gr.value_of(ix).data();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += T{2} * in[i] * dy[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out = g.value(x);
  for (T& v : out.data()) v *= factor;
  return g.record(OpKind::Scale, {x}, std::move(out), [factor](Graph<T>& gr, std::size_t self) {
    if (T* dx = gr.grad_of(gr.input(self, 0))) {
      const std::vector<T>& dy = gr.upstream(self);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (av.shape() != bv.shape()) shape_mismatch("add", av.shape(), bv.shape());
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record(OpKind::Add, {a, b}, std::move(out), [](Graph<T>& gr, std::size_t self) {
    const std::vector<T>& dy = gr.upstream(self);
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* d = gr.grad_of(gr.input(self, k))) {
        for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
      }
    }
  });
}

#define SLOD_INSTANTIATE_OPS(T)                       \
  template Var matmul(Graph<T>&, Var, Var);           \
  template Var conv2d(Graph<T>&, Var, Var);           \
  template Var add_row_bias(Graph<T>&, Var, Var);     \
  template Var add_channel_bias(Graph<T>&, Var, Var); \
  template Var relu(Graph<T>&, Var);                  \
  template Var max_pool2(Graph<T>&, Var);             \
  template Var flatten(Graph<T>&, Var);               \
  template Var log_softmax(Graph<T>&, Var);           \
  template Var sum(Graph<T>&, Var);                   \
  template Var mean(Graph<T>&, Var);                  \
  template Var square(Graph<T>&, Var);                \
  template Var scale(Graph<T>&, Var, T);              \
  template Var add(Graph<T>&, Var, Var);

SLOD_INSTANTIATE_OPS(float)
SLOD_INSTANTIATE_OPS(double)

#undef SLOD_INSTANTIATE_OPS

}  // namespace slod
