#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "gridbayes/tensor.hpp"

namespace gridbayes {

// Handle to a node recorded on a Graph.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t index = kInvalid;
  bool valid() const { return index != kInvalid; }
};

// Tape of recorded operations. Nodes are appended in evaluation order, so the
// tape is acyclic by construction and backward() just walks it in reverse.
// A graph is built per forward pass and thrown away afterwards.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& grad_out)>;

  Var constant(Tensor<T> value);
  // Leaf that receives a gradient on backward().
  Var leaf(Tensor<T> value);
  Var record(Tensor<T> value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.index).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }

  // Gradient of the last backward() loss w.r.t. v. Leaves that the loss does
  // not depend on hold an all-zero tensor.
  const Tensor<T>& grad(Var v) const;

  // Accumulator used by backward functions; zero-initialized on first use.
  Tensor<T>& grad_accumulator(Var v);

  // Reverse sweep from a scalar loss. Clears gradients of any earlier sweep.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

enum class BnMode { kTrain, kEval };

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNormStats init(std::size_t channels) {
    return {Tensor<T>(Shape{channels}, T(0)), Tensor<T>(Shape{channels}, T(1))};
  }
};

// Cells whose probability falls below this are clamped inside log().
inline constexpr double kLogFloor = 1e-12;

// Differentiable operations. Each records one node and returns its handle.

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

template <typename T>
Var scale(Graph<T>& g, Var a, T factor);

template <typename T>
Var sum(Graph<T>& g, Var a);

// Elementwise product with a fixed (non-differentiable) tensor.
template <typename T>
Var multiply_constant(Graph<T>& g, Var a, const Tensor<T>& factor);

// Stride-1 convolution with zero padding dilation*(k-1)/2, so the spatial
// extent is preserved. weights: Cout x Cin x k x k, bias: Cout, k odd.
template <typename T>
Var conv2d_dilated(Graph<T>& g, Var input, Var weights, Var bias,
                   std::size_t dilation);

// Train mode normalizes with batch statistics and updates `stats` in place.
template <typename T>
Var batch_norm(Graph<T>& g, Var input, Var scale, Var shift,
               BatchNormStats<T>& stats, BnMode mode);

template <typename T>
Var relu(Graph<T>& g, Var input);

// Softmax over the channel axis of an N x C x H x W tensor.
template <typename T>
Var softmax_cells(Graph<T>& g, Var logits);

template <typename T>
Var concat_channels(Graph<T>& g, std::span<const Var> parts);

// -sum_cells w * log p(label) / sum_cells w over an N x C x H x W probability
// tensor. labels and weights are N*H*W, row-major.
template <typename T>
Var weighted_nll(Graph<T>& g, Var probs, std::span<const std::uint8_t> labels,
                 std::span<const T> weights);

}  // namespace gridbayes
