#include "laser/attention.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

#include "laser/errors.hpp"

namespace laser {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix, Eigen::Unaligned, Eigen::OuterStride<>>;
using MutMap = Eigen::Map<RowMatrix, Eigen::Unaligned, Eigen::OuterStride<>>;

void check_qkv(const Tensor& q, const Tensor& k, const Tensor* v, int heads) {
    if (q.rank() != 2 || k.rank() != 2 || (v && v->rank() != 2)) {
        throw ShapeError("attention operands must be [tokens x dim]");
    }
    if (q.dim(1) != k.dim(1)) {
        throw ShapeError("query/key width mismatch " + q.shape_str() + " vs " + k.shape_str());
    }
    if (v && (v->dim(0) != k.dim(0) || v->dim(1) != k.dim(1))) {
        throw ShapeError("key/value shape mismatch " + k.shape_str() + " vs " + v->shape_str());
    }
    if (heads <= 0 || q.dim(1) % heads != 0) {
        throw ShapeError("width " + std::to_string(q.dim(1)) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
}

// Softmax is accumulated in double so rows sum to one to float precision.
RowMatrix head_probabilities(const Tensor& q, const Tensor& k, int heads, int h) {
    const int nq = q.dim(0);
    const int nk = k.dim(0);
    const int width = q.dim(1);
    const int dh = width / heads;
    ConstMap qh(q.raw() + h * dh, nq, dh, Eigen::OuterStride<>(width));
    ConstMap kh(k.raw() + h * dh, nk, dh, Eigen::OuterStride<>(width));
    RowMatrix scores = qh * kh.transpose();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    RowMatrix probs(nq, nk);
    for (int i = 0; i < nq; ++i) {
        double mx = -INFINITY;
        for (int j = 0; j < nk; ++j) mx = std::max(mx, scores(i, j) * scale);
        double sum = 0.0;
        std::vector<double> e(static_cast<std::size_t>(nk));
        for (int j = 0; j < nk; ++j) {
            e[j] = std::exp(scores(i, j) * scale - mx);
            sum += e[j];
        }
        for (int j = 0; j < nk; ++j) probs(i, j) = static_cast<float>(e[j] / sum);
    }
    return probs;
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, int heads) {
    check_qkv(q, k, nullptr, heads);
    const int nq = q.dim(0);
    const int nk = k.dim(0);
    Tensor out({heads, nq, nk});
    for (int h = 0; h < heads; ++h) {
        RowMatrix p = head_probabilities(q, k, heads, h);
        std::memcpy(out.raw() + static_cast<std::size_t>(h) * nq * nk, p.data(),
                    sizeof(float) * static_cast<std::size_t>(nq) * nk);
    }
    return out;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    check_qkv(q, k, &v, heads);
    const int nq = q.dim(0);
    const int nk = k.dim(0);
    const int width = q.dim(1);
    const int dh = width / heads;
    Tensor out({nq, width});
    for (int h = 0; h < heads; ++h) {
        RowMatrix p = head_probabilities(q, k, heads, h);
        ConstMap vh(v.raw() + h * dh, nk, dh, Eigen::OuterStride<>(width));
        MutMap oh(out.raw() + h * dh, nq, dh, Eigen::OuterStride<>(width));
        oh.noalias() = p * vh;
    }
    return out;
}

Tensor concat_tokens(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_tokens: no parts");
    const int width = parts.front().dim(1);
    int rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != width) {
            throw ShapeError("concat_tokens: ragged part " + p.shape_str());
        }
        rows += p.dim(0);
    }
    Tensor out({rows, width});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.raw() + off, p.raw(), p.size() * sizeof(float));
        off += p.size();
    }
    return out;
}

std::vector<Tensor> cross_frame_attention(std::span<const Tensor> queries,
                                          std::span<const Tensor> keys,
                                          std::span<const Tensor> values, int heads) {
    if (queries.size() != keys.size() || keys.size() != values.size() || queries.empty()) {
        throw ShapeError("cross_frame_attention: frame counts differ or are zero");
    }
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (!queries[i].same_shape(queries.front()) || !keys[i].same_shape(keys.front()) ||
            !values[i].same_shape(values.front())) {
            throw ShapeError("cross_frame_attention: ragged frame shapes at frame " +
                             std::to_string(i));
        }
    }
    const Tensor k_all = concat_tokens(keys);
    const Tensor v_all = concat_tokens(values);
    std::vector<Tensor> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(scaled_dot_product_attention(q, k_all, v_all, heads));
    return out;
}

}  // namespace laser
