#include "gridbayes/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "gridbayes/error.hpp"

namespace gridbayes {

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, true});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::span<const Var> inputs,
                     BackwardFn backward) {
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || nodes_.at(in.index).requires_grad;
  nodes_.push_back(Node{std::move(value), {},
                        needs_grad ? std::move(backward) : BackwardFn{},
                        needs_grad, false});
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) const {
  const Node& node = nodes_.at(v.index);
  if (!node.requires_grad) {
    throw ConfigError("gradient requested for a node that does not require one");
  }
  return node.grad;
}

template <typename T>
Tensor<T>& Graph<T>::grad_accumulator(Var v) {
  Node& node = nodes_.at(v.index);
  if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape(), T(0));
  return node.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (nodes_.at(loss.index).value.size() != 1) {
    throw ConfigError("backward() needs a scalar loss, got shape " +
                      nodes_[loss.index].value.shape().to_string());
  }
  for (Node& node : nodes_) node.grad = Tensor<T>();
  if (!nodes_[loss.index].requires_grad) return;
  grad_accumulator(loss).fill(T(1));
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.is_leaf || node.grad.empty()) continue;
    node.backward(*this, node.grad);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf && nodes_[i].requires_grad) grad_accumulator(Var{i});
  }
}

template class Graph<float>;
template class Graph<double>;

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ConfigError(std::string(op) + ": shape mismatch " + a.to_string() +
                      " vs " + b.to_string());
  }
}

void require_rank4(const Shape& s, const char* op) {
  if (s.rank() != 4) {
    throw ConfigError(std::string(op) + ": expected NxCxHxW tensor, got " +
                      s.to_string());
  }
}

// Column-major views. A row-major (rows x cells) buffer is viewed as its
// (cells x rows) transpose, which puts the long cell axis on GEMM's M side.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

// Unrolls image rows [y0, y1) of a C x H x W image into a
// (C*k*k) x ((y1-y0)*W) matrix for dilated, zero-padded, stride-1
// convolution. Working on bands of rows keeps the matrix cache-resident.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t dilation,
            std::size_t y0, std::size_t y1, T* col) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(height);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(width);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(dilation);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const std::ptrdiff_t dy = (static_cast<std::ptrdiff_t>(ky) - half) * d;
        const std::ptrdiff_t dx = (static_cast<std::ptrdiff_t>(kx) - half) * d;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::ptrdiff_t y = static_cast<std::ptrdiff_t>(y0);
             y < static_cast<std::ptrdiff_t>(y1); ++y, col += width) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h || x0 >= x1) {
            std::fill(col, col + width, T(0));
            continue;
          }
          std::fill(col, col + x0, T(0));
          std::memcpy(col + x0, plane + sy * w + x0 + dx,
                      static_cast<std::size_t>(x1 - x0) * sizeof(T));
          std::fill(col + x1, col + w, T(0));
        }
      }
    }
  }
}

// Rows per band so that a band holds roughly this many cells.
constexpr std::size_t kBandCells = 256;

std::size_t band_rows(std::size_t width) {
  return std::max<std::size_t>(1, kBandCells / std::max<std::size_t>(1, width));
}

}  // namespace

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& va = g.value(a);
  const Tensor<T>& vb = g.value(b);
  require_same_shape(va.shape(), vb.shape(), "add");
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  const Var inputs[] = {a, b};
  return g.record(std::move(out), inputs, [a, b](Graph<T>& gr, const Tensor<T>& go) {
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      Tensor<T>& acc = gr.grad_accumulator(v);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += go[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> out = g.value(a);
  for (T& v : out.values()) v *= factor;
  const Var inputs[] = {a};
  return g.record(std::move(out), inputs, [a, factor](Graph<T>& gr, const Tensor<T>& go) {
    Tensor<T>& acc = gr.grad_accumulator(a);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += factor * go[i];
  });
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  T total = T(0);
  for (T v : g.value(a).values()) total += v;
  const Var inputs[] = {a};
  return g.record(Tensor<T>::scalar(total), inputs, [a](Graph<T>& gr, const Tensor<T>& go) {
    Tensor<T>& acc = gr.grad_accumulator(a);
    for (T& v : acc.values()) v += go[0];
  });
}

template <typename T>
Var multiply_constant(Graph<T>& g, Var a, const Tensor<T>& factor) {
  const Tensor<T>& va = g.value(a);
  require_same_shape(va.shape(), factor.shape(), "multiply_constant");
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  const Var inputs[] = {a};
  return g.record(std::move(out), inputs, [a, factor](Graph<T>& gr, const Tensor<T>& go) {
    Tensor<T>& acc = gr.grad_accumulator(a);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += factor[i] * go[i];
  });
}

template <typename T>
Var conv2d_dilated(Graph<T>& g, Var input, Var weights, Var bias,
                   std::size_t dilation) {
  const Shape& xs = g.value(input).shape();
  const Shape& ws = g.value(weights).shape();
  const Shape& bs = g.value(bias).shape();
  require_rank4(xs, "conv2d_dilated input");
  if (ws.rank() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0) {
    throw ConfigError("conv2d_dilated: weights must be Cout x Cin x k x k with odd k, got " +
                      ws.to_string());
  }
  if (ws[1] != xs[1]) {
    throw ConfigError("conv2d_dilated: input has " + std::to_string(xs[1]) +
                      " channels but weights " + ws.to_string() + " expect " +
                      std::to_string(ws[1]));
  }
  if (bs.rank() != 1 || bs[0] != ws[0]) {
    throw ConfigError("conv2d_dilated: bias " + bs.to_string() +
                      " does not match weights " + ws.to_string());
  }
  if (dilation < 1) throw ConfigError("conv2d_dilated: dilation must be >= 1");

  const std::size_t n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const std::size_t cout = ws[0], k = ws[2];
  const std::size_t rows = cin * k * k, cells = h * w;

  Tensor<T> out(Shape{n, cout, h, w});
  const std::size_t band = band_rows(w);
  AlignedVector<T> col(rows * band * w);
  // Column-major views: weights (rows x cout), a band's columns
  // (band cells x rows), output (cells x cout) per image.
  ConstMatrixMap<T> wmat(g.value(weights).data(), rows, cout);
  const Tensor<T>& bv = g.value(bias);
  for (std::size_t b = 0; b < n; ++b) {
    const T* image = g.value(input).data() + b * cin * cells;
    MatrixMap<T> omat(out.data() + b * cout * cells, cells, cout);
    for (std::size_t y0 = 0; y0 < h; y0 += band) {
      const std::size_t y1 = std::min(h, y0 + band);
      const std::size_t span = (y1 - y0) * w;
      im2col(image, cin, h, w, k, dilation, y0, y1, col.data());
      ConstMatrixMap<T> cmat(col.data(), span, rows);
      omat.middleRows(y0 * w, span).noalias() = cmat * wmat;
    }
    for (std::size_t c = 0; c < cout; ++c) omat.col(c).array() += bv[c];
  }

  const Var inputs[] = {input, weights, bias};
  return g.record(std::move(out), inputs,
                  [=](Graph<T>& gr, const Tensor<T>& go) {
    const bool need_x = gr.requires_grad(input);
    const bool need_w = gr.requires_grad(weights);
    const bool need_b = gr.requires_grad(bias);
    AlignedVector<T> col(need_w ? rows * band * w : 0);
    const std::size_t grows = cout * k * k;
    AlignedVector<T> gcol(need_x ? grows * band * w : 0);
    Matrix<T> flipped;
    if (need_x) {
      const Tensor<T>& wv = gr.value(weights);
      flipped.resize(static_cast<Eigen::Index>(grows), static_cast<Eigen::Index>(cin));
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              flipped((co * k + ky) * k + kx, ci) =
                  wv[((co * cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)];
    }
    for (std::size_t b = 0; b < n; ++b) {
      const T* image = gr.value(input).data() + b * cin * cells;
      ConstMatrixMap<T> gmat(go.data() + b * cout * cells, cells, cout);
      if (need_b) {
        Tensor<T>& db = gr.grad_accumulator(bias);
        for (std::size_t c = 0; c < cout; ++c) db[c] += gmat.col(c).sum();
      }
      for (std::size_t y0 = 0; y0 < h; y0 += band) {
        const std::size_t y1 = std::min(h, y0 + band);
        const std::size_t span = (y1 - y0) * w;
        if (need_w) {
          im2col(image, cin, h, w, k, dilation, y0, y1, col.data());
          ConstMatrixMap<T> cmat(col.data(), span, rows);
          MatrixMap<T> dw(gr.grad_accumulator(weights).data(), rows, cout);
          dw.noalias() += cmat.transpose() * gmat.middleRows(y0 * w, span);
        }
        if (need_x) {
          // same-padded stride-1 conv: dX is the output gradient convolved
          // with the flipped, channel-transposed kernel
          im2col(go.data() + b * cout * cells, cout, h, w, k, dilation, y0, y1,
                 gcol.data());
          ConstMatrixMap<T> gc(gcol.data(), span, grows);
          MatrixMap<T> dx(gr.grad_accumulator(input).data() + b * cin * cells,
                          cells, cin);
          dx.middleRows(y0 * w, span).noalias() += gc * flipped;
        }
      }
    }
  });
}

template <typename T>
Var batch_norm(Graph<T>& g, Var input, Var scale_var, Var shift_var,
               BatchNormStats<T>& stats, BnMode mode) {
  const Tensor<T>& x = g.value(input);
  require_rank4(x.shape(), "batch_norm input");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const std::size_t cells = x.shape()[2] * x.shape()[3];
  if (n == 0 || cells == 0) throw ConfigError("batch_norm: zero-size batch");
  const Tensor<T>& sc = g.value(scale_var);
  const Tensor<T>& sh = g.value(shift_var);
  if (sc.size() != c || sh.size() != c || stats.running_mean.size() != c ||
      stats.running_var.size() != c) {
    throw ConfigError("batch_norm: per-channel parameters do not match " +
                      std::to_string(c) + " channels");
  }
  const std::size_t m = n * cells;

  std::vector<T> mean(c), inv_std(c);
  if (mode == BnMode::kTrain) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * cells;
        for (std::size_t i = 0; i < cells; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * cells;
        for (std::size_t i = 0; i < cells; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double biased = v / static_cast<double>(m);
      const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : biased;
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(biased + static_cast<double>(stats.eps)));
      stats.running_mean[ch] = (T(1) - stats.momentum) * stats.running_mean[ch] +
                               stats.momentum * static_cast<T>(mu);
      stats.running_var[ch] = (T(1) - stats.momentum) * stats.running_var[ch] +
                              stats.momentum * static_cast<T>(unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(stats.running_var[ch] + stats.eps);
    }
  }

  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = x.data() + (b * c + ch) * cells;
      T* o = out.data() + (b * c + ch) * cells;
      for (std::size_t i = 0; i < cells; ++i) {
        o[i] = sc[ch] * (p[i] - mean[ch]) * inv_std[ch] + sh[ch];
      }
    }
  }

  const Var inputs[] = {input, scale_var, shift_var};
  return g.record(std::move(out), inputs,
                  [=](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& xv = gr.value(input);
    const Tensor<T>& scv = gr.value(scale_var);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * cells;
        const T* d = go.data() + (b * c + ch) * cells;
        for (std::size_t i = 0; i < cells; ++i) {
          sum_dy += d[i];
          sum_dy_xhat += d[i] * (p[i] - mean[ch]) * inv_std[ch];
        }
      }
      if (gr.requires_grad(scale_var)) {
        gr.grad_accumulator(scale_var)[ch] += static_cast<T>(sum_dy_xhat);
      }
      if (gr.requires_grad(shift_var)) {
        gr.grad_accumulator(shift_var)[ch] += static_cast<T>(sum_dy);
      }
      if (!gr.requires_grad(input)) continue;
      Tensor<T>& dx = gr.grad_accumulator(input);
      const T gain = scv[ch] * inv_std[ch];
      if (mode == BnMode::kEval) {
        for (std::size_t b = 0; b < n; ++b) {
          const T* d = go.data() + (b * c + ch) * cells;
          T* o = dx.data() + (b * c + ch) * cells;
          for (std::size_t i = 0; i < cells; ++i) o[i] += gain * d[i];
        }
        continue;
      }
      const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * cells;
        const T* d = go.data() + (b * c + ch) * cells;
        T* o = dx.data() + (b * c + ch) * cells;
        for (std::size_t i = 0; i < cells; ++i) {
          const T xhat = (p[i] - mean[ch]) * inv_std[ch];
          o[i] += gain * (d[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    }
  });
}

template <typename T>
Var relu(Graph<T>& g, Var input) {
  Tensor<T> out = g.value(input);
  for (T& v : out.values()) v = v > T(0) ? v : T(0);
  const Var inputs[] = {input};
  return g.record(std::move(out), inputs, [input](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& x = gr.value(input);
    Tensor<T>& acc = gr.grad_accumulator(input);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (x[i] > T(0)) acc[i] += go[i];
    }
  });
}

template <typename T>
Var softmax_cells(Graph<T>& g, Var logits) {
  const Tensor<T>& z = g.value(logits);
  require_rank4(z.shape(), "softmax_cells");
  const std::size_t n = z.shape()[0], c = z.shape()[1];
  const std::size_t cells = z.shape()[2] * z.shape()[3];
  if (c < 2) throw ConfigError("softmax_cells: need at least two classes");
  if (!z.all_finite()) throw NumericError("softmax_cells: non-finite logits");

  Tensor<T> out(z.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* zb = z.data() + b * c * cells;
    T* ob = out.data() + b * c * cells;
    for (std::size_t i = 0; i < cells; ++i) {
      T mx = zb[i];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, zb[k * cells + i]);
      T total = T(0);
      for (std::size_t k = 0; k < c; ++k) {
        const T e = std::exp(zb[k * cells + i] - mx);
        ob[k * cells + i] = e;
        total += e;
      }
      for (std::size_t k = 0; k < c; ++k) ob[k * cells + i] /= total;
    }
  }

  const Var self{g.node_count()};
  const Var inputs[] = {logits};
  return g.record(std::move(out), inputs,
                  [=](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& p = gr.value(self);
    Tensor<T>& acc = gr.grad_accumulator(logits);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = b * c * cells;
      for (std::size_t i = 0; i < cells; ++i) {
        T dot = T(0);
        for (std::size_t k = 0; k < c; ++k) {
          dot += p[base + k * cells + i] * go[base + k * cells + i];
        }
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t j = base + k * cells + i;
          acc[j] += p[j] * (go[j] - dot);
        }
      }
    }
  });
}

template <typename T>
Var concat_channels(Graph<T>& g, std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_channels: nothing to concatenate");
  const Shape& first = g.value(parts[0]).shape();
  require_rank4(first, "concat_channels");
  std::size_t channels = 0;
  for (Var v : parts) {
    const Shape& s = g.value(v).shape();
    require_rank4(s, "concat_channels");
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ConfigError("concat_channels: incompatible parts " + first.to_string() +
                        " and " + s.to_string());
    }
    channels += s[1];
  }
  const std::size_t n = first[0], cells = first[2] * first[3];
  Tensor<T> out(Shape{n, channels, first[2], first[3]});
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (Var v : parts) {
    offsets.push_back(offset);
    const Tensor<T>& pv = g.value(v);
    const std::size_t pc = pv.shape()[1];
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(pv.data() + b * pc * cells, pc * cells,
                  out.data() + (b * channels + offset) * cells);
    }
    offset += pc;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record(std::move(out), inputs,
                  [=](Graph<T>& gr, const Tensor<T>& go) {
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      if (!gr.requires_grad(inputs[p])) continue;
      Tensor<T>& acc = gr.grad_accumulator(inputs[p]);
      const std::size_t pc = acc.shape()[1];
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = go.data() + (b * channels + offsets[p]) * cells;
        T* dst = acc.data() + b * pc * cells;
        for (std::size_t i = 0; i < pc * cells; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var weighted_nll(Graph<T>& g, Var probs, std::span<const std::uint8_t> labels,
                 std::span<const T> weights) {
  const Tensor<T>& p = g.value(probs);
  require_rank4(p.shape(), "weighted_nll");
  const std::size_t n = p.shape()[0], c = p.shape()[1];
  const std::size_t cells = p.shape()[2] * p.shape()[3];
  if (labels.size() != n * cells || weights.size() != n * cells) {
    throw ConfigError("weighted_nll: expected " + std::to_string(n * cells) +
                      " labels and weights, got " + std::to_string(labels.size()) +
                      " and " + std::to_string(weights.size()));
  }
  double total_weight = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= T(0) && weights[i] <= T(1))) {
      throw DataError("weighted_nll: cell weight outside [0,1]");
    }
    if (weights[i] > T(0) && labels[i] >= c) {
      throw DataError("weighted_nll: label " + std::to_string(labels[i]) +
                      " out of range for " + std::to_string(c) + " classes");
    }
    total_weight += weights[i];
  }
  if (total_weight <= 0.0) throw DataError("weighted_nll: no observable cells");

  const T floor = static_cast<T>(kLogFloor);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < cells; ++i) {
      const std::size_t cell = b * cells + i;
      if (weights[cell] == T(0)) continue;
      const T pv = p[(b * c + labels[cell]) * cells + i];
      loss -= weights[cell] * std::log(std::max(pv, floor));
    }
  }
  loss /= total_weight;

  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  std::vector<T> wts(weights.begin(), weights.end());
  const T inv_total = static_cast<T>(1.0 / total_weight);
  const Var inputs[] = {probs};
  return g.record(Tensor<T>::scalar(static_cast<T>(loss)), inputs,
                  [=, lab = std::move(lab), wts = std::move(wts)](
                      Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& pv = gr.value(probs);
    Tensor<T>& acc = gr.grad_accumulator(probs);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < cells; ++i) {
        const std::size_t cell = b * cells + i;
        if (wts[cell] == T(0)) continue;
        const std::size_t j = (b * c + lab[cell]) * cells + i;
        if (pv[j] > floor) acc[j] -= go[0] * wts[cell] * inv_total / pv[j];
      }
    }
  });
}

#define GRIDBAYES_INSTANTIATE_OPS(T)                                               \
  template Var add<T>(Graph<T>&, Var, Var);                                        \
  template Var scale<T>(Graph<T>&, Var, T);                                        \
  template Var sum<T>(Graph<T>&, Var);                                             \
  template Var multiply_constant<T>(Graph<T>&, Var, const Tensor<T>&);             \
  template Var conv2d_dilated<T>(Graph<T>&, Var, Var, Var, std::size_t);           \
  template Var batch_norm<T>(Graph<T>&, Var, Var, Var, BatchNormStats<T>&, BnMode); \
  template Var relu<T>(Graph<T>&, Var);                                            \
  template Var softmax_cells<T>(Graph<T>&, Var);                                   \
  template Var concat_channels<T>(Graph<T>&, std::span<const Var>);                \
  template Var weighted_nll<T>(Graph<T>&, Var, std::span<const std::uint8_t>,      \
                               std::span<const T>);

GRIDBAYES_INSTANTIATE_OPS(float)
GRIDBAYES_INSTANTIATE_OPS(double)

#undef GRIDBAYES_INSTANTIATE_OPS

}  // namespace gridbayes
