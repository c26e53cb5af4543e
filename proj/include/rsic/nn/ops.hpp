#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rsic/nn/graph.hpp"

// Differentiable operations over Graph nodes. Layouts: sequences are
// (batch, position, feature); images and feature maps are NHWC.
namespace rsic::nn::ops {

Var add(Var a, Var b);
// x + row, where row's shape equals the trailing dimensions of x.
Var add_broadcast(Var x, Var row);
Var scale(Var x, double factor);
Var reshape(Var x, Shape shape);

// x (..., in) * w (in, out) + b (out). Pass an invalid Var to skip the bias.
Var linear(Var x, Var w, Var b);
// x (..., D) * table (V, D)^T -> (..., V). Used for weight-tied output heads.
Var matmul_transposed(Var x, Var table);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var x);
Var relu(Var x);
Var hardswish(Var x);
// Softmax over the last dimension.
Var softmax(Var x);

// Multi-head scaled dot-product attention. q (B, Tq, D), k and v (B, Tk, D);
// D is split into `heads` contiguous slices. With `causal`, query i only sees
// keys j <= i. When `probs_out` is given it receives the (B, heads, Tq, Tk)
// attention weights.
Var attention(Var q, Var k, Var v, std::size_t heads, bool causal, Tensor* probs_out = nullptr);

// Row lookup: ids laid out with `index_shape`; result is index_shape + (D).
Var embedding(Var table, std::span<const std::int32_t> ids, const Shape& index_shape);

// Mean token cross entropy over positions with mask != 0. logits (B, T, V).
Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask);

// x (B, H, W, Cin), w (kh, kw, Cin / groups, Cout), b (Cout) or invalid.
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding, std::size_t groups = 1);
// Average pooling onto a fixed output grid using floor/ceil bin edges.
Var adaptive_avg_pool2d(Var x, std::size_t out_h, std::size_t out_w);
Var concat_last(const std::vector<Var>& parts);

// enc (B, P, D) weighted by weights (P) summed over P -> (B, D).
Var weighted_patch_sum(Var enc, Var weights);
// sum(x * w) for a constant w of the same shape; scalar result.
Var dot(Var x, const Tensor& w);
Var mean(Var x);

}  // namespace rsic::nn::ops
