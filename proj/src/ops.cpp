#include "gnap/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gnap {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose input column ox*stride + kx - padding is inside the image.
inline void valid_span(const ConvGeom& c, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  const long pad = static_cast<long>(c.padding), k = static_cast<long>(kx), st = static_cast<long>(c.stride);
  const long w = static_cast<long>(c.width);
  long first = pad - k > 0 ? (pad - k + st - 1) / st : 0;
  long last = (w - 1 + pad - k) >= 0 ? (w - 1 + pad - k) / st + 1 : 0;
  first = std::min<long>(first, static_cast<long>(c.out_w));
  last = std::clamp<long>(last, first, static_cast<long>(c.out_w));
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(last);
}

template <class T>
void im2col(const T* img, const ConvGeom& c, T* cols) {
  const std::size_t p = c.cols();
  for (std::size_t ch = 0; ch < c.channels; ++ch)
    for (std::size_t ky = 0; ky < c.kernel; ++ky)
      for (std::size_t kx = 0; kx < c.kernel; ++kx) {
        T* row = cols + ((ch * c.kernel + ky) * c.kernel + kx) * p;
        std::size_t lo, hi;
        valid_span(c, kx, lo, hi);
        for (std::size_t oy = 0; oy < c.out_h; ++oy) {
          const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
          T* dst = row + oy * c.out_w;
          if (iy < 0 || iy >= static_cast<long>(c.height)) {
            std::fill(dst, dst + c.out_w, T(0));
            continue;
          }
          const T* src = img + (ch * c.height + static_cast<std::size_t>(iy)) * c.width + kx;
          std::fill(dst, dst + lo, T(0));
          if (c.stride == 1) {
            std::copy(src + lo - c.padding, src + hi - c.padding, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * c.stride - c.padding];
          }
          std::fill(dst + hi, dst + c.out_w, T(0));
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& c, T* img) {
  const std::size_t p = c.cols();
  for (std::size_t ch = 0; ch < c.channels; ++ch)
    for (std::size_t ky = 0; ky < c.kernel; ++ky)
      for (std::size_t kx = 0; kx < c.kernel; ++kx) {
        const T* row = cols + ((ch * c.kernel + ky) * c.kernel + kx) * p;
        std::size_t lo, hi;
        valid_span(c, kx, lo, hi);
        for (std::size_t oy = 0; oy < c.out_h; ++oy) {
          const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
          if (iy < 0 || iy >= static_cast<long>(c.height)) continue;
          T* dst = img + (ch * c.height + static_cast<std::size_t>(iy)) * c.width + kx;
          const T* src = row + oy * c.out_w;
          if (c.stride == 1) {
            T* d = dst + lo - c.padding;
            const T* sp = src + lo;
            for (std::size_t i = 0, len = hi - lo; i < len; ++i) d[i] += sp[i];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * c.stride - c.padding] += src[ox];
          }
        }
      }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(kernel % 2 == 1, "conv2d: kernel size must be odd");
  const std::size_t padded = in + 2 * padding;
  require(padded >= kernel, "conv2d: kernel larger than padded input");
  require((padded - kernel) % stride == 0, "conv2d: output size is not an integer");
  return (padded - kernel) / stride + 1;
}

std::size_t pool_output_size(std::size_t in, std::size_t window) {
  if (window == 0) throw std::invalid_argument("pool2d: window must be positive");
  return (in + window - 1) / window;
}

template <class T>
Var conv2d(Graph<T>& g, Var input, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
  const Var ins[1] = {input};
  const Var ks[1] = {kernel};
  return conv2d_sum<T>(g, ins, ks, bias, stride, padding);
}

template <class T>
Var conv2d_sum(Graph<T>& g, std::span<const Var> inputs, std::span<const Var> kernels, std::optional<Var> bias,
               std::size_t stride, std::size_t padding) {
  require(!inputs.empty() && inputs.size() == kernels.size(), "conv2d: need one kernel per input");
  const Shape& s0 = g.shape(inputs[0]);
  require(s0.size() == 4, "conv2d: input must be [N,C,H,W], got " + to_string(s0));
  const std::size_t n = s0[0], h = s0[2], w = s0[3];
  const Shape& k0 = g.shape(kernels[0]);
  require(k0.size() == 4 && k0[2] == k0[3], "conv2d: kernel must be [Cout,Cin,k,k], got " + to_string(k0));
  const std::size_t cout = k0[0], k = k0[2];
  const std::size_t oh = conv_output_size(h, k, stride, padding);
  const std::size_t ow = conv_output_size(w, k, stride, padding);

  std::vector<ConvGeom> geoms;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const Shape& is = g.shape(inputs[s]);
    const Shape& ks = g.shape(kernels[s]);
    require(is.size() == 4 && is[0] == n && is[2] == h && is[3] == w,
            "conv2d: input " + to_string(is) + " does not match " + to_string(s0));
    require(ks.size() == 4 && ks[0] == cout && ks[2] == k && ks[3] == k,
            "conv2d: kernel " + to_string(ks) + " does not match " + to_string(k0));
    require(ks[1] == is[1], "conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                                std::to_string(is[1]));
    geoms.push_back({is[1], h, w, k, stride, padding, oh, ow});
  }
  if (bias) require(g.shape(*bias) == Shape{cout}, "conv2d: bias must be [Cout]");

  const std::size_t plane = oh * ow;
  // Sources are stacked along the row axis so each sample is a single GEMM.
  std::vector<std::size_t> row_off{0};
  for (const auto& gm : geoms) row_off.push_back(row_off.back() + gm.rows());
  const std::size_t rows = row_off.back();

  RowMat<T> kcat(cout, rows);
  for (std::size_t s = 0; s < inputs.size(); ++s)
    if (geoms[s].rows())
      kcat.middleCols(row_off[s], geoms[s].rows()) = CMatMap<T>(g.value(kernels[s]).storage().data(), cout, geoms[s].rows());

  auto gather = [h, w, plane](const std::vector<const T*>& imgs, const std::vector<ConvGeom>& gs,
                              const std::vector<std::size_t>& offs, std::size_t b, T* cols) {
    for (std::size_t s = 0; s < gs.size(); ++s)
      if (gs[s].channels) im2col(imgs[s] + b * gs[s].channels * h * w, gs[s], cols + offs[s] * plane);
  };

  std::vector<const T*> imgs;
  for (Var v : inputs) imgs.push_back(g.value(v).storage().data());
  Tensor<T> out(Shape{n, cout, oh, ow});
  RowMat<T> cols(rows, plane);
  for (std::size_t b = 0; b < n; ++b) {
    gather(imgs, geoms, row_off, b, cols.data());
    MatMap<T> o(out.storage().data() + b * cout * plane, cout, plane);
    o.noalias() = kcat * cols;
    if (bias) {
      const auto bv = g.value(*bias).values();
      for (std::size_t c = 0; c < cout; ++c) o.row(c).array() += bv[c];
    }
  }

  std::vector<Var> all(inputs.begin(), inputs.end());
  all.insert(all.end(), kernels.begin(), kernels.end());
  if (bias) all.push_back(*bias);
  const std::size_t nsrc = inputs.size();
  const bool has_bias = bias.has_value();
  return g.record("conv2d", std::move(out), std::move(all),
                  [geoms, row_off, kcat = std::move(kcat), gather, n, cout, plane, h, w, nsrc, rows,
                   has_bias](Graph<T>& gr, Var self) {
                    const auto& ins = gr.inputs(self);
                    const T* dout = gr.grad(self).data();
                    if (has_bias && gr.requires_grad(ins[2 * nsrc])) {
                      auto db = gr.grad(ins[2 * nsrc]);
                      // Plain loops: Eigen reductions pick their order from the buffer address.
                      for (std::size_t b = 0; b < n; ++b)
                        for (std::size_t c = 0; c < cout; ++c) {
                          const T* row = dout + (b * cout + c) * plane;
                          T acc = 0;
                          for (std::size_t i = 0; i < plane; ++i) acc += row[i];
                          db[c] += acc;
                        }
                    }
                    bool want_k = false, want_in = false;
                    for (std::size_t s = 0; s < nsrc; ++s) {
                      if (geoms[s].channels == 0) continue;
                      want_k |= gr.requires_grad(ins[nsrc + s]);
                      want_in |= gr.requires_grad(ins[s]);
                    }
                    if (!want_k && !want_in) return;
                    std::vector<const T*> imgs;
                    for (std::size_t s = 0; s < nsrc; ++s) imgs.push_back(gr.value(ins[s]).storage().data());
                    RowMat<T> dk = RowMat<T>::Zero(cout, rows);
                    RowMat<T> cols(rows, plane), dcols(rows, plane);
                    for (std::size_t b = 0; b < n; ++b) {
                      CMatMap<T> d(dout + b * cout * plane, cout, plane);
                      if (want_k) {
                        gather(imgs, geoms, row_off, b, cols.data());
                        dk.noalias() += d * cols.transpose();
                      }
                      if (want_in) {
                        dcols.noalias() = kcat.transpose() * d;
                        for (std::size_t s = 0; s < nsrc; ++s) {
                          const ConvGeom& gm = geoms[s];
                          if (gm.channels == 0 || !gr.requires_grad(ins[s])) continue;
                          col2im_add(dcols.data() + row_off[s] * plane, gm, gr.grad(ins[s]).data() + b * gm.channels * h * w);
                        }
                      }
                    }
                    if (want_k)
                      for (std::size_t s = 0; s < nsrc; ++s) {
                        if (geoms[s].rows() == 0 || !gr.requires_grad(ins[nsrc + s])) continue;
                        MatMap<T>(gr.grad(ins[nsrc + s]).data(), cout, geoms[s].rows()) +=
                            dk.middleCols(row_off[s], geoms[s].rows());
                      }
                  });
}

template <class T>
Var pool2d(Graph<T>& g, Var input, std::size_t window, PoolMode mode) {
  const Shape& s = g.shape(input);
  require(s.size() == 4, "pool2d: input must be [N,C,H,W]");
  const std::size_t oh = pool_output_size(s[2], window), ow = pool_output_size(s[3], window);
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out(Shape{s[0], s[1], oh, ow});
  const auto in = g.value(input).values();
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::max) argmax.resize(out.size());
  const T inv_area = T(1) / static_cast<T>(window * window);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t o = (p * oh + oy) * ow + ox;
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        T acc = T(0);
        bool any = false;
        for (std::size_t dy = 0; dy < window; ++dy) {
          const std::size_t y = oy * window + dy;
          if (y >= h) continue;
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t x = ox * window + dx;
            if (x >= w) continue;
            const std::size_t i = (p * h + y) * w + x;
            if (!any || in[i] > best) {
              best = in[i];
              best_i = i;
              any = true;
            }
            acc += in[i];
          }
        }
        if (mode == PoolMode::max) {
          out[o] = best;
          argmax[o] = best_i;
        } else {
          out[o] = acc * inv_area;
        }
      }
  return g.record("pool2d", std::move(out), {input},
                  [argmax = std::move(argmax), mode, window, planes, h, w, oh, ow, inv_area](Graph<T>& gr, Var self) {
                    const auto dout = gr.grad(self);
                    auto din = gr.grad(gr.inputs(self)[0]);
                    if (mode == PoolMode::max) {
                      for (std::size_t o = 0; o < dout.size(); ++o) din[argmax[o]] += dout[o];
                      return;
                    }
                    for (std::size_t p = 0; p < planes; ++p)
                      for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t x = 0; x < w; ++x)
                          din[(p * h + y) * w + x] += dout[(p * oh + y / window) * ow + x / window] * inv_area;
                  });
}

template <class T>
Var global_avg_pool(Graph<T>& g, Var input) {
  const Shape& s = g.shape(input);
  require(s.size() == 4 && s[2] >= 1 && s[3] >= 1, "global_avg_pool: input must be [N,C,H,W] with H,W >= 1");
  const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
  Tensor<T> out(Shape{s[0], s[1]});
  const auto in = g.value(input).values();
  for (std::size_t p = 0; p < planes; ++p) {
    T acc = T(0);
    for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
    out[p] = acc / static_cast<T>(area);
  }
  return g.record("global_avg_pool", std::move(out), {input}, [planes, area](Graph<T>& gr, Var self) {
    const auto dout = gr.grad(self);
    auto din = gr.grad(gr.inputs(self)[0]);
    const T inv = T(1) / static_cast<T>(area);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < area; ++i) din[p * area + i] += dout[p] * inv;
  });
}

template <class T>
Var linear(Graph<T>& g, Var input, Var weight, std::optional<Var> bias) {
  const Shape& xs = g.shape(input);
  const Shape& ws = g.shape(weight);
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
          "linear: input " + to_string(xs) + " does not conform to weight " + to_string(ws));
  const std::size_t n = xs[0], f = xs[1], k = ws[0];
  if (bias) require(g.shape(*bias) == Shape{k}, "linear: bias must be [K]");
  Tensor<T> out(Shape{n, k});
  MatMap<T> o(out.storage().data(), n, k);
  if (f > 0)
    o.noalias() = CMatMap<T>(g.value(input).storage().data(), n, f) *
                  CMatMap<T>(g.value(weight).storage().data(), k, f).transpose();
  else
    o.setZero();
  if (bias) {
    const auto bv = g.value(*bias).values();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) o(r, c) += bv[c];
  }
  std::vector<Var> ins{input, weight};
  if (bias) ins.push_back(*bias);
  return g.record("linear", std::move(out), std::move(ins), [n, f, k](Graph<T>& gr, Var self) {
    const auto& in = gr.inputs(self);
    CMatMap<T> d(gr.grad(self).data(), n, k);
    if (f > 0 && gr.requires_grad(in[0]))
      MatMap<T>(gr.grad(in[0]).data(), n, f).noalias() += d * CMatMap<T>(gr.value(in[1]).storage().data(), k, f);
    if (f > 0 && gr.requires_grad(in[1]))
      MatMap<T>(gr.grad(in[1]).data(), k, f).noalias() +=
          d.transpose() * CMatMap<T>(gr.value(in[0]).storage().data(), n, f);
    if (in.size() > 2 && gr.requires_grad(in[2])) {
      auto db = gr.grad(in[2]);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < k; ++c) db[c] += d(r, c);
    }
  });
}

template <class T>
Var concat_channels(Graph<T>& g, std::span<const Var> inputs) {
  require(!inputs.empty(), "concat_channels: no inputs");
  const Shape& s0 = g.shape(inputs[0]);
  require(s0.size() == 4, "concat_channels: inputs must be [N,C,H,W]");
  std::vector<std::size_t> chans;
  std::size_t total = 0;
  for (Var v : inputs) {
    const Shape& s = g.shape(v);
    require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
            "concat_channels: " + to_string(s) + " does not match " + to_string(s0));
    chans.push_back(s[1]);
    total += s[1];
  }
  const std::size_t n = s0[0], area = s0[2] * s0[3];
  Tensor<T> out(Shape{n, total, s0[2], s0[3]});
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto src = g.value(inputs[i]).values().subspan(b * chans[i] * area, chans[i] * area);
      std::copy(src.begin(), src.end(), out.storage().begin() + static_cast<long>((b * total + off) * area));
      off += chans[i];
    }
  }
  return g.record("concat_channels", std::move(out), std::vector<Var>(inputs.begin(), inputs.end()),
                  [chans, n, total, area](Graph<T>& gr, Var self) {
                    const auto dout = gr.grad(self);
                    const auto& ins = gr.inputs(self);
                    std::size_t off = 0;
                    for (std::size_t i = 0; i < ins.size(); ++i) {
                      if (gr.requires_grad(ins[i])) {
                        auto din = gr.grad(ins[i]);
                        for (std::size_t b = 0; b < n; ++b)
                          for (std::size_t j = 0; j < chans[i] * area; ++j)
                            din[b * chans[i] * area + j] += dout[(b * total + off) * area + j];
                      }
                      off += chans[i];
                    }
                  });
}

template <class T>
Var relu(Graph<T>& g, Var input) {
  Tensor<T> out = g.value(input);
  out.clear_grad();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return g.record("relu", std::move(out), {input}, [](Graph<T>& gr, Var self) {
    const Var in = gr.inputs(self)[0];
    const auto x = gr.value(in).values();
    const auto dout = gr.grad(self);
    auto din = gr.grad(in);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > T(0)) din[i] += dout[i];
  });
}

template <class T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels) {
  const Shape& s = g.shape(logits);
  require(s.size() == 2, "softmax_cross_entropy: logits must be [N,K]");
  const std::size_t n = s[0], k = s[1];
  require(labels.size() == n, "softmax_cross_entropy: one label per row required");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                              std::to_string(k) + ")");
  const auto z = g.value(logits).values();
  std::vector<T> probs(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
    for (std::size_t c = 0; c < k; ++c)
      probs[r * k + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / denom);
    total += std::log(denom) - static_cast<double>(row[labels[r]] - mx);
  }
  Tensor<T> out(Shape{1}, static_cast<T>(total / static_cast<double>(n)));
  std::vector<int> lab(labels.begin(), labels.end());
  return g.record("softmax_cross_entropy", std::move(out), {logits},
                  [probs = std::move(probs), lab = std::move(lab), n, k](Graph<T>& gr, Var self) {
                    const T scale = gr.grad(self)[0] / static_cast<T>(n);
                    auto din = gr.grad(gr.inputs(self)[0]);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < k; ++c)
                        din[r * k + c] += scale * (probs[r * k + c] - (static_cast<int>(c) == lab[r] ? T(1) : T(0)));
                  });
}

template <class T>
Var add_n(Graph<T>& g, std::span<const Var> inputs) {
  require(!inputs.empty(), "add_n: no inputs");
  Tensor<T> out = g.value(inputs[0]);
  out.clear_grad();
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    const auto& v = g.value(inputs[i]);
    require(v.shape() == out.shape(), "add_n: shape " + to_string(v.shape()) + " vs " + to_string(out.shape()));
    for (std::size_t j = 0; j < v.size(); ++j) out[j] += v[j];
  }
  return g.record("add_n", std::move(out), std::vector<Var>(inputs.begin(), inputs.end()),
                  [](Graph<T>& gr, Var self) {
                    const auto dout = gr.grad(self);
                    for (Var in : gr.inputs(self)) {
                      if (!gr.requires_grad(in)) continue;
                      auto din = gr.grad(in);
                      for (std::size_t j = 0; j < dout.size(); ++j) din[j] += dout[j];
                    }
                  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const Var ins[2] = {a, b};
  return add_n<T>(g, ins);
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  require(va.shape() == vb.shape(), "mul: shape " + to_string(va.shape()) + " vs " + to_string(vb.shape()));
  Tensor<T> out(va.shape());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = va[j] * vb[j];
  return g.record("mul", std::move(out), {a, b}, [](Graph<T>& gr, Var self) {
    const Var ia = gr.inputs(self)[0], ib = gr.inputs(self)[1];
    const auto dout = gr.grad(self);
    const auto xa = gr.value(ia).values(), xb = gr.value(ib).values();
    if (gr.requires_grad(ia)) {
      auto d = gr.grad(ia);
      for (std::size_t j = 0; j < dout.size(); ++j) d[j] += dout[j] * xb[j];
    }
    if (gr.requires_grad(ib)) {
      auto d = gr.grad(ib);
      for (std::size_t j = 0; j < dout.size(); ++j) d[j] += dout[j] * xa[j];
    }
  });
}

template <class T>
Var sum(Graph<T>& g, Var input) {
  T acc = T(0);
  for (T v : g.value(input).values()) acc += v;
  return g.record("sum", Tensor<T>(Shape{1}, acc), {input}, [](Graph<T>& gr, Var self) {
    const T d = gr.grad(self)[0];
    for (auto& x : gr.grad(gr.inputs(self)[0])) x += d;
  });
}

template <class T>
Var scale(Graph<T>& g, Var input, T factor) {
  Tensor<T> out = g.value(input);
  out.clear_grad();
  for (auto& v : out.storage()) v *= factor;
  return g.record("scale", std::move(out), {input}, [factor](Graph<T>& gr, Var self) {
    const auto dout = gr.grad(self);
    auto din = gr.grad(gr.inputs(self)[0]);
    for (std::size_t j = 0; j < dout.size(); ++j) din[j] += dout[j] * factor;
  });
}

#define GNAP_INSTANTIATE_OPS(T)                                                                                   \
  template Var conv2d<T>(Graph<T>&, Var, Var, std::optional<Var>, std::size_t, std::size_t);                     \
  template Var conv2d_sum<T>(Graph<T>&, std::span<const Var>, std::span<const Var>, std::optional<Var>,          \
                             std::size_t, std::size_t);                                                           \
  template Var pool2d<T>(Graph<T>&, Var, std::size_t, PoolMode);                                                 \
  template Var global_avg_pool<T>(Graph<T>&, Var);                                                               \
  template Var linear<T>(Graph<T>&, Var, Var, std::optional<Var>);                                               \
  template Var concat_channels<T>(Graph<T>&, std::span<const Var>);                                              \
  template Var relu<T>(Graph<T>&, Var);                                                                          \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, std::span<const int>);                                   \
  template Var add_n<T>(Graph<T>&, std::span<const Var>);                                                        \
  template Var add<T>(Graph<T>&, Var, Var);                                                                      \
  template Var mul<T>(Graph<T>&, Var, Var);                                                                      \
  template Var sum<T>(Graph<T>&, Var);                                                                           \
  template Var scale<T>(Graph<T>&, Var, T);

GNAP_INSTANTIATE_OPS(float)
GNAP_INSTANTIATE_OPS(double)

}  // namespace gnap
