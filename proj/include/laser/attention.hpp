#pragma once

#include <span>
#include <vector>

#include "laser/tensor.hpp"

namespace laser {

// softmax(Q K^T / sqrt(d_k)) V per head. q: [n_q x d], k/v: [n_kv x d], d split
// evenly across `heads`.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// Attention probabilities [heads x n_q x n_kv], row-stochastic.
Tensor attention_weights(const Tensor& q, const Tensor& k, int heads);

// Each frame's queries attend over the token-axis concatenation of every frame's
// keys and values.
std::vector<Tensor> cross_frame_attention(std::span<const Tensor> queries,
                                          std::span<const Tensor> keys,
                                          std::span<const Tensor> values, int heads);

// Row-concatenation along the token axis.
Tensor concat_tokens(std::span<const Tensor> parts);

}  // namespace laser
