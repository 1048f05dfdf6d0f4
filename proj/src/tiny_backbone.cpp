#include "laser/tiny_backbone.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "laser/attention.hpp"
#include "laser/errors.hpp"
#include "laser/rng.hpp"

namespace laser {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

constexpr int kPatch = 4;
constexpr int kPatchValues = kPatch * kPatch * 3;
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kFirstWordId = 3;

float silu(float x) { return x / (1.0f + std::exp(-x)); }

Tensor layer_norm(const Tensor& x) {
    const int n = x.dim(0);
    const int d = x.dim(1);
    Tensor out(x.shape());
    for (int i = 0; i < n; ++i) {
        const float* row = x.raw() + static_cast<std::size_t>(i) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        float* o = out.raw() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) o[j] = static_cast<float>((row[j] - mean) * inv);
    }
    return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// 2x2 average pooling on a side x side token grid.
Tensor pool2(const Tensor& x, int side) {
    const int d = x.dim(1);
    const int half = side / 2;
    Tensor out({half * half, d});
    for (int y = 0; y < half; ++y) {
        for (int xx = 0; xx < half; ++xx) {
            float* o = out.raw() + static_cast<std::size_t>(y * half + xx) * d;
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                    const float* in = x.raw() + static_cast<std::size_t>((2 * y + dy) * side + 2 * xx + dx) * d;
                    for (int c = 0; c < d; ++c) o[c] += 0.25f * in[c];
                }
            }
        }
    }
    return out;
}

// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x, int side) {
    const int d = x.dim(1);
    const int full = side * 2;
    Tensor out({full * full, d});
    for (int y = 0; y < full; ++y) {
        for (int xx = 0; xx < full; ++xx) {
            const float* in = x.raw() + static_cast<std::size_t>((y / 2) * side + xx / 2) * d;
            std::copy(in, in + d, out.raw() + static_cast<std::size_t>(y * full + xx) * d);
        }
    }
    return out;
}

std::uint32_t fnv1a(std::string_view s) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : s) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

}  // namespace

Tensor TinyBackbone::Linear::apply(const Tensor& x) const {
    const int n = x.dim(0);
    Tensor out({n, this->out});
    ConstMap xm(x.raw(), n, in);
    ConstMap wm(w.data(), in, this->out);
    MutMap om(out.raw(), n, this->out);
    om.noalias() = xm * wm;
    return out;
}

TinyBackbone::TinyBackbone(std::uint64_t seed, double content_gain)
    : desc_(tiny_test_descriptor()), content_gain_(content_gain) {
    NormalSampler rng(seed);
    auto linear = [&rng](int in, int out, double gain) {
        Linear l;
        l.in = in;
        l.out = out;
        l.w = rng.normals(static_cast<std::size_t>(in) * out, gain / std::sqrt(static_cast<double>(in)));
        return l;
    };
    auto res_block = [&]() {
        ResBlock b;
        b.in_proj = linear(kWidth, kWidth, 1.0);
        b.dw_kernel = rng.normals(static_cast<std::size_t>(kWidth) * 9, 1.0 / 3.0);
        b.time_proj = linear(kWidth, kWidth, 0.5);
        b.out_proj = linear(kWidth, kWidth, 0.5);
        return b;
    };
    auto attention = [&](int kv_in) {
        AttentionBlock a;
        a.q = linear(kWidth, kWidth, 1.0);
        a.k = linear(kv_in, kWidth, 1.0);
        a.v = linear(kv_in, kWidth, 1.0);
        a.o = linear(kWidth, kWidth, 0.5);
        return a;
    };

    // Orthogonal codec basis from the QR factorisation of a Gaussian matrix.
    {
        Eigen::MatrixXd g(kPatchValues, kPatchValues);
        for (int i = 0; i < kPatchValues; ++i)
            for (int j = 0; j < kPatchValues; ++j) g(i, j) = rng.normal();
        Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
        codec_.resize(static_cast<std::size_t>(kPatchValues) * kPatchValues);
        for (int i = 0; i < kPatchValues; ++i)
            for (int j = 0; j < kPatchValues; ++j)
                codec_[static_cast<std::size_t>(i) * kPatchValues + j] = static_cast<float>(q(i, j));
    }

    token_table_ = rng.normals(static_cast<std::size_t>(kVocab) * kEmbedDim, 1.0);
    positions_ = rng.normals(static_cast<std::size_t>(kNumTokens) * kEmbedDim, 0.5);
    text_mixer_.q = linear(kEmbedDim, kEmbedDim, 1.0);
    text_mixer_.k = linear(kEmbedDim, kEmbedDim, 1.0);
    text_mixer_.v = linear(kEmbedDim, kEmbedDim, 1.0);
    text_mixer_.o = linear(kEmbedDim, kEmbedDim, 1.0);

    time1_ = linear(kWidth, kWidth, 1.0);
    time2_ = linear(kWidth, kWidth, 1.0);
    stem_ = linear(desc_.latent_channels, kWidth, 1.0);
    enc8_ = res_block();
    enc4_ = res_block();
    mid_ = res_block();
    mid_attn_ = attention(kWidth);
    for (int l = 0; l < desc_.num_decoder_layers(); ++l) {
        DecoderLayer layer;
        layer.skip = linear(kWidth, kWidth, 0.5);
        layer.res = res_block();
        layer.self_attn = attention(kWidth);
        layer.cross_attn = attention(kEmbedDim);
        decoder_.push_back(std::move(layer));
    }
    head_ = linear(kWidth, desc_.latent_channels, 1.0);
}

std::vector<std::string> TinyBackbone::split_words(std::string_view prompt) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : prompt) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

TextEmbedding TinyBackbone::encode_prompt(std::string_view prompt) const {
    const auto first = prompt.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) throw ConfigError("prompt must be non-empty");
    const auto words = split_words(prompt);
    const std::size_t capacity = kNumTokens - 2;
    std::vector<int> ids{kBos};
    for (std::size_t i = 0; i < words.size() && i < capacity; ++i) {
        ids.push_back(kFirstWordId + static_cast<int>(fnv1a(words[i]) % (kVocab - kFirstWordId)));
    }
    ids.push_back(kEos);
    return encode_tokens(ids, std::string(prompt), words.size() > capacity);
}

TextEmbedding TinyBackbone::null_embedding() const { return encode_tokens({kBos, kEos}, "", false); }

TextEmbedding TinyBackbone::encode_tokens(const std::vector<int>& ids, std::string prompt,
                                          bool truncated) const {
    Tensor x({kNumTokens, kEmbedDim});
    for (int i = 0; i < kNumTokens; ++i) {
        const int id = i < static_cast<int>(ids.size()) ? ids[static_cast<std::size_t>(i)] : kPad;
        for (int j = 0; j < kEmbedDim; ++j) {
            x[static_cast<std::size_t>(i) * kEmbedDim + j] =
                token_table_[static_cast<std::size_t>(id) * kEmbedDim + j] +
                positions_[static_cast<std::size_t>(i) * kEmbedDim + j];
        }
    }
    const Tensor n = layer_norm(x);
    Tensor mixed = text_mixer_.o.apply(scaled_dot_product_attention(
        text_mixer_.q.apply(n), text_mixer_.k.apply(n), text_mixer_.v.apply(n), kHeads));
    add_inplace(mixed, x);
    return TextEmbedding{layer_norm(mixed), std::move(prompt), truncated};
}

Latent TinyBackbone::encode_image(const Image& image) const {
    if (image.width % kPatch != 0 || image.height % kPatch != 0) {
        throw ShapeError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " must have dimensions that are multiples of " + std::to_string(kPatch));
    }
    if (image.width != desc_.image_size || image.height != desc_.image_size) {
        throw ShapeError("tiny-test codec expects " + std::to_string(desc_.image_size) + "x" +
                         std::to_string(desc_.image_size) + " images, got " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    const int side = desc_.latent_size;
    Tensor z(desc_.latent_shape());
    std::vector<float> patch(kPatchValues);
    for (int by = 0; by < side; ++by) {
        for (int bx = 0; bx < side; ++bx) {
            for (int dy = 0; dy < kPatch; ++dy)
                for (int dx = 0; dx < kPatch; ++dx)
                    for (int c = 0; c < 3; ++c)
                        patch[static_cast<std::size_t>((dy * kPatch + dx) * 3 + c)] =
                            2.0f * image.at(bx * kPatch + dx, by * kPatch + dy, c) - 1.0f;
            for (int i = 0; i < kPatchValues; ++i) {
                float acc = 0.0f;
                for (int j = 0; j < kPatchValues; ++j)
                    acc += codec_[static_cast<std::size_t>(i) * kPatchValues + j] * patch[static_cast<std::size_t>(j)];
                z[(static_cast<std::size_t>(i) * side + by) * side + bx] = acc;
            }
        }
    }
    return Latent{std::move(z), std::nullopt};
}

Image TinyBackbone::decode_latent(const Latent& latent) const {
    if (latent.values.shape() != desc_.latent_shape()) {
        throw ShapeError("latent shape " + latent.values.shape_str() + " does not match " +
                         shape_str(desc_.latent_shape()));
    }
    if (!latent.values.all_finite()) throw NumericError("cannot decode a non-finite latent");
    const int side = desc_.latent_size;
    Image image(desc_.image_size, desc_.image_size);
    for (int by = 0; by < side; ++by) {
        for (int bx = 0; bx < side; ++bx) {
            for (int j = 0; j < kPatchValues; ++j) {
                float acc = 0.0f;
                for (int i = 0; i < kPatchValues; ++i)
                    acc += codec_[static_cast<std::size_t>(i) * kPatchValues + j] *
                           latent.values[(static_cast<std::size_t>(i) * side + by) * side + bx];
                const int c = j % 3;
                const int dx = (j / 3) % kPatch;
                const int dy = (j / 3) / kPatch;
                image.at(bx * kPatch + dx, by * kPatch + dy, c) = std::clamp(0.5f * (acc + 1.0f), 0.0f, 1.0f);
            }
        }
    }
    return image;
}

std::vector<float> TinyBackbone::time_embedding(int timestep) const {
    Tensor sinus({1, kWidth});
    const int half = kWidth / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        sinus[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(timestep * freq));
        sinus[static_cast<std::size_t>(i + half)] = static_cast<float>(std::cos(timestep * freq));
    }
    Tensor h = time1_.apply(sinus);
    for (auto& x : h.data()) x = silu(x);
    h = time2_.apply(h);
    return {h.data().begin(), h.data().end()};
}

Tensor TinyBackbone::res_block(const ResBlock& block, const Tensor& x, const std::vector<float>& temb,
                               int side) const {
    const Tensor h = block.in_proj.apply(layer_norm(x));
    Tensor t({1, kWidth}, temb);
    const Tensor tb = block.time_proj.apply(t);
    Tensor conv(h.shape());
    for (int y = 0; y < side; ++y) {
        for (int xx = 0; xx < side; ++xx) {
            float* o = conv.raw() + static_cast<std::size_t>(y * side + xx) * kWidth;
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                    const int sy = y + ky;
                    const int sx = xx + kx;
                    if (sy < 0 || sy >= side || sx < 0 || sx >= side) continue;
                    const float* in = h.raw() + static_cast<std::size_t>(sy * side + sx) * kWidth;
                    const int tap = (ky + 1) * 3 + (kx + 1);
                    for (int c = 0; c < kWidth; ++c) o[c] += block.dw_kernel[static_cast<std::size_t>(c) * 9 + tap] * in[c];
                }
            }
            for (int c = 0; c < kWidth; ++c) o[c] = silu(o[c] + tb[static_cast<std::size_t>(c)]);
        }
    }
    Tensor out = block.out_proj.apply(conv);
    add_inplace(out, x);
    return out;
}

Tensor TinyBackbone::cross_attention(const AttentionBlock& block, const Tensor& x,
                                     const Tensor& context) const {
    const Tensor n = layer_norm(x);
    return block.o.apply(scaled_dot_product_attention(block.q.apply(n), block.k.apply(context),
                                                      block.v.apply(context), kHeads));
}

void TinyBackbone::validate(std::span<const DenoiseInput> batch, int timestep) const {
    if (batch.empty()) throw ConfigError("predict_noise: empty batch");
    if (timestep < 0 || timestep >= desc_.num_train_timesteps) {
        throw ConfigError("timestep " + std::to_string(timestep) + " outside the scheduler range");
    }
    for (const auto& in : batch) {
        if (!in.latent || !in.embedding) throw ConfigError("predict_noise: missing latent or embedding");
        if (in.latent->values.shape() != desc_.latent_shape()) {
            throw ShapeError("latent shape " + in.latent->values.shape_str() + " does not match " +
                             shape_str(desc_.latent_shape()));
        }
        if (in.embedding->values.shape() != desc_.embedding_shape()) {
            throw ShapeError("embedding shape " + in.embedding->values.shape_str() + " does not match " +
                             shape_str(desc_.embedding_shape()));
        }
        if (!in.latent->values.all_finite()) throw NumericError("non-finite latent passed to denoiser");
        if (in.hooks) {
            for (const auto& [site, hook] : in.hooks->entries()) {
                if (!desc_.is_valid(site)) throw ConfigError("hook at undeclared site " + site.label());
            }
        }
    }
}

std::vector<Latent> TinyBackbone::predict_noise(std::span<const DenoiseInput> batch, int timestep,
                                                const std::set<int>& cross_frame_layers) const {
    validate(batch, timestep);
    const std::size_t n = batch.size();
    const int side = desc_.latent_size;
    const int tokens8 = side * side;
    const int channels = desc_.latent_channels;
    const auto temb = time_embedding(timestep);

    std::vector<Tensor> x(n), skip8(n), skip4(n);
    for (std::size_t b = 0; b < n; ++b) {
        Tensor tok({tokens8, channels});
        const Tensor& z = batch[b].latent->values;
        for (int c = 0; c < channels; ++c)
            for (int p = 0; p < tokens8; ++p)
                tok[static_cast<std::size_t>(p) * channels + c] = z[static_cast<std::size_t>(c) * tokens8 + p];
        Tensor h = res_block(enc8_, stem_.apply(tok), temb, side);
        skip8[b] = h;
        h = res_block(enc4_, pool2(h, side), temb, side / 2);
        skip4[b] = h;
        h = res_block(mid_, h, temb, side / 2);
        const Tensor nm = layer_norm(h);
        Tensor a = mid_attn_.o.apply(scaled_dot_product_attention(mid_attn_.q.apply(nm), mid_attn_.k.apply(nm),
                                                                  mid_attn_.v.apply(nm), kHeads));
        add_inplace(h, a);
        x[b] = std::move(h);
    }

    std::vector<Tensor> f(n), q(n), k(n), v(n);
    for (int li = 0; li < desc_.num_decoder_layers(); ++li) {
        const int layer_index = li + 1;
        const DecoderLayer& layer = decoder_[static_cast<std::size_t>(li)];
        const int layer_side = desc_.decoder_layers[static_cast<std::size_t>(li)].resolution;
        for (std::size_t b = 0; b < n; ++b) {
            if (x[b].dim(0) != layer_side * layer_side) x[b] = upsample2(x[b], layer_side / 2);
            add_inplace(x[b], layer.skip.apply(layer_side == side ? skip8[b] : skip4[b]));
            f[b] = apply_site_hook(batch[b].hooks, HookSite::feature(layer_index),
                                   res_block(layer.res, x[b], temb, layer_side));
        }
        std::vector<Tensor> normed(n);
        for (std::size_t b = 0; b < n; ++b) normed[b] = layer_norm(f[b]);
        for (std::size_t b = 0; b < n; ++b)
            q[b] = apply_site_hook(batch[b].hooks, HookSite::attention(layer_index, Slot::q),
                                   layer.self_attn.q.apply(normed[b]));
        for (std::size_t b = 0; b < n; ++b)
            k[b] = apply_site_hook(batch[b].hooks, HookSite::attention(layer_index, Slot::k),
                                   layer.self_attn.k.apply(normed[b]));
        for (std::size_t b = 0; b < n; ++b)
            v[b] = apply_site_hook(batch[b].hooks, HookSite::attention(layer_index, Slot::v),
                                   layer.self_attn.v.apply(normed[b]));

        std::vector<Tensor> attended;
        if (cross_frame_layers.contains(layer_index)) {
            attended = cross_frame_attention(q, k, v, kHeads);
        } else {
            attended.reserve(n);
            for (std::size_t b = 0; b < n; ++b)
                attended.push_back(scaled_dot_product_attention(q[b], k[b], v[b], kHeads));
        }
        for (std::size_t b = 0; b < n; ++b) {
            Tensor h = layer.self_attn.o.apply(attended[b]);
            add_inplace(h, f[b]);
            add_inplace(h, cross_attention(layer.cross_attn, h, batch[b].embedding->values));
            x[b] = std::move(h);
        }
    }

    // Preconditioned output: the exact noise predictor for a unit Gaussian data
    // prior plus the network term scaled by sqrt(alpha_bar), which bounds the
    // network's contribution to the clean-latent estimate.
    const double a = desc_.alpha_bar(timestep);
    const float c_skip = static_cast<float>(std::sqrt(1.0 - a) / (a * kDataVariance + 1.0 - a));
    const float c_out = static_cast<float>(content_gain_ * std::sqrt(a));
    std::vector<Latent> out;
    out.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
        const Tensor e = head_.apply(layer_norm(x[b]));
        const Tensor& z = batch[b].latent->values;
        Tensor eps(desc_.latent_shape());
        for (int c = 0; c < channels; ++c)
            for (int p = 0; p < tokens8; ++p) {
                const std::size_t i = static_cast<std::size_t>(c) * tokens8 + p;
                eps[i] = c_skip * z[i] + c_out * e[static_cast<std::size_t>(p) * channels + c];
            }
        out.push_back(Latent{std::move(eps), timestep});
    }
    return out;
}

}  // namespace laser
