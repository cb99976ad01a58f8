#pragma once

#include <optional>
#include <span>
#include <vector>

#include "gnap/graph.hpp"

namespace gnap {

enum class PoolMode { max, avg };

/// Output extent of a convolution along one axis; throws ShapeError when the
/// window does not tile the padded input exactly.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Output extent of pooling: inputs not divisible by `window` are padded at
/// the far edge (-inf for max, zero for avg).
std::size_t pool_output_size(std::size_t in, std::size_t window);

// Cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout].
template <class T>
Var conv2d(Graph<T>& g, Var input, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t padding);

/// Sum of per-source convolutions plus one bias: out = Σ_s conv(inputs[s], kernels[s]) + bias.
/// All inputs share N, H and W; each kernel matches its input's channel count.
template <class T>
Var conv2d_sum(Graph<T>& g, std::span<const Var> inputs, std::span<const Var> kernels, std::optional<Var> bias,
               std::size_t stride, std::size_t padding);

template <class T>
Var pool2d(Graph<T>& g, Var input, std::size_t window, PoolMode mode);

// [N,C,H,W] -> [N,C]
template <class T>
Var global_avg_pool(Graph<T>& g, Var input);

// input [N,F], weight [K,F], bias [K] -> [N,K]
template <class T>
Var linear(Graph<T>& g, Var input, Var weight, std::optional<Var> bias);

template <class T>
Var concat_channels(Graph<T>& g, std::span<const Var> inputs);

template <class T>
Var relu(Graph<T>& g, Var input);

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels);

// Elementwise helpers.
template <class T>
Var add_n(Graph<T>& g, std::span<const Var> inputs);
template <class T>
Var add(Graph<T>& g, Var a, Var b);
template <class T>
Var mul(Graph<T>& g, Var a, Var b);
template <class T>
Var sum(Graph<T>& g, Var input);
template <class T>
Var scale(Graph<T>& g, Var input, T factor);

}  // namespace gnap
