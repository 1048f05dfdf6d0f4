#include "laser/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "laser/errors.hpp"
#include "laser/rng.hpp"

namespace laser {

namespace {

constexpr int kChannels[] = {3, 16, 32, 32};
constexpr int kMaxSide = 128;  // larger inputs are box-downsampled first
constexpr double kNormEps = 1e-10;

struct Map {
    int h = 0, w = 0, c = 0;
    std::vector<float> v;  // [h][w][c]

    float& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
};

Map avg_pool(const Map& in) {
    Map out{in.h / 2, in.w / 2, in.c, {}};
    out.v.assign(static_cast<std::size_t>(out.h) * out.w * out.c, 0.0f);
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            for (int ch = 0; ch < in.c; ++ch) {
                out.at(y, x, ch) = 0.25f * (in.at(2 * y, 2 * x, ch) + in.at(2 * y, 2 * x + 1, ch) +
                                            in.at(2 * y + 1, 2 * x, ch) + in.at(2 * y + 1, 2 * x + 1, ch));
            }
        }
    }
    return out;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

PerceptualNet::PerceptualNet(std::uint64_t seed) : seed_(seed) {
    NormalSampler rng(seed);
    for (std::size_t l = 0; l + 1 < std::size(kChannels); ++l) {
        Conv conv;
        conv.in = kChannels[l];
        conv.out = kChannels[l + 1];
        conv.weight = rng.normals(static_cast<std::size_t>(conv.out) * conv.in * 9, std::sqrt(2.0 / (conv.in * 9)));
        conv.bias = rng.normals(static_cast<std::size_t>(conv.out), 0.05);
        pooled_dim_ += conv.out;
        layers_.push_back(std::move(conv));
    }
    const auto proj = rng.normals(static_cast<std::size_t>(kEmbedDim) * pooled_dim_, 1.0 / std::sqrt(pooled_dim_));
    projection_.assign(proj.begin(), proj.end());
}

PerceptualNet::Features PerceptualNet::features(const Image& image) const {
    if (image.empty()) throw ShapeError("perceptual features of an empty image");
    Map x{image.height, image.width, 3, {}};
    x.v.resize(image.pixels.size());
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = 2.0f * image.pixels[i] - 1.0f;
    while (std::max(x.h, x.w) > kMaxSide && x.h % 2 == 0 && x.w % 2 == 0) x = avg_pool(x);

    Features f;
    f.width = image.width;
    f.height = image.height;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (l > 0 && x.h >= 2 && x.w >= 2) x = avg_pool(x);
        const Conv& conv = layers_[l];
        Map y{x.h, x.w, conv.out, {}};
        y.v.assign(static_cast<std::size_t>(y.h) * y.w * y.c, 0.0f);
        for (int py = 0; py < x.h; ++py) {
            for (int px = 0; px < x.w; ++px) {
                for (int o = 0; o < conv.out; ++o) {
                    float acc = conv.bias[o];
                    for (int ky = 0; ky < 3; ++ky) {
                        const int sy = py + ky - 1;
                        if (sy < 0 || sy >= x.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sx = px + kx - 1;
                            if (sx < 0 || sx >= x.w) continue;
                            const float* w = &conv.weight[((static_cast<std::size_t>(o) * conv.in) * 3 + ky) * 3 + kx];
                            for (int i = 0; i < conv.in; ++i) acc += w[static_cast<std::size_t>(i) * 9] * x.at(sy, sx, i);
                        }
                    }
                    y.at(py, px, o) = std::max(acc, 0.0f);
                }
            }
        }
        x = std::move(y);

        std::vector<float> normalized(x.v.size());
        std::vector<double> pooled(static_cast<std::size_t>(x.c), 0.0);
        const std::size_t pixels = static_cast<std::size_t>(x.h) * x.w;
        for (std::size_t p = 0; p < pixels; ++p) {
            double norm2 = 0.0;
            for (int ch = 0; ch < x.c; ++ch) {
                const double v = x.v[p * x.c + ch];
                norm2 += v * v;
                pooled[ch] += v;
            }
            const double inv = 1.0 / (std::sqrt(norm2) + kNormEps);
            for (int ch = 0; ch < x.c; ++ch) normalized[p * x.c + ch] = static_cast<float>(x.v[p * x.c + ch] * inv);
        }
        for (auto& p : pooled) p /= static_cast<double>(pixels);
        f.normalized.push_back(std::move(normalized));
        f.dims.push_back({x.h, x.w, x.c});
        f.pooled.insert(f.pooled.end(), pooled.begin(), pooled.end());
    }
    return f;
}

double PerceptualNet::distance(const Features& a, const Features& b) const {
    if (a.width != b.width || a.height != b.height) {
        throw ShapeError("perceptual distance between " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                         " and " + std::to_string(b.width) + "x" + std::to_string(b.height) + " images");
    }
    double total = 0.0;
    for (std::size_t l = 0; l < a.normalized.size(); ++l) {
        const auto& fa = a.normalized[l];
        const auto& fb = b.normalized[l];
        double sum = 0.0;
        for (std::size_t i = 0; i < fa.size(); ++i) {
            const double d = static_cast<double>(fa[i]) - static_cast<double>(fb[i]);
            sum += d * d;
        }
        const double pixels = static_cast<double>(a.dims[l][0]) * a.dims[l][1];
        // Unit vectors differ by at most 2, so each layer term is at most 1.
        total += sum / (4.0 * pixels);
    }
    return total / static_cast<double>(a.normalized.size());
}

double PerceptualNet::distance(const Image& a, const Image& b) const {
    return distance(features(a), features(b));
}

std::vector<double> PerceptualNet::image_embedding(const Features& f) const {
    std::vector<double> out(kEmbedDim, 0.0);
    for (int r = 0; r < kEmbedDim; ++r) {
        double acc = 0.0;
        for (int c = 0; c < pooled_dim_; ++c) acc += projection_[static_cast<std::size_t>(r) * pooled_dim_ + c] * f.pooled[c];
        out[r] = acc;
    }
    return out;
}

std::vector<double> PerceptualNet::text_embedding(const std::string& text) const {
    std::vector<double> out(kEmbedDim, 0.0);
    std::string word;
    int words = 0;
    auto flush = [&] {
        if (word.empty()) return;
        NormalSampler rng(seed_ ^ fnv1a(word));
        for (int i = 0; i < kEmbedDim; ++i) out[i] += rng.normal();
        ++words;
        word.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else {
            flush();
        }
    }
    flush();
    if (words > 0) {
        for (auto& v : out) v /= words;
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine similarity of vectors with different lengths");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

namespace {

std::vector<PerceptualNet::Features> all_features(const PerceptualNet& net, std::span<const Image> frames) {
    std::vector<PerceptualNet::Features> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(net.features(f));
    return out;
}

void require_frames(std::span<const Image> frames, const char* what) {
    if (frames.empty()) throw ConfigError(std::string(what) + ": empty frame sequence");
}

double pic_of(const PerceptualNet& net, const std::vector<PerceptualNet::Features>& feats,
              const PerceptualNet::Features& input) {
    double sum = 0.0;
    for (const auto& f : feats) sum += std::clamp(1.0 - net.distance(f, input), 0.0, 1.0);
    return sum / static_cast<double>(feats.size());
}

double lpips_total_of(const PerceptualNet& net, const std::vector<PerceptualNet::Features>& feats) {
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < feats.size(); ++k) sum += net.distance(feats[k], feats[k + 1]);
    return sum;
}

double lpips_max_endpoint_of(const PerceptualNet& net, const std::vector<PerceptualNet::Features>& feats) {
    double worst = 0.0;
    for (std::size_t k = 1; k + 1 < feats.size(); ++k) {
        worst = std::max(worst, std::min(net.distance(feats[k], feats.front()), net.distance(feats[k], feats.back())));
    }
    return worst;
}

}  // namespace

double compute_pic(const PerceptualNet& net, std::span<const Image> frames, const Image& input) {
    require_frames(frames, "PIC");
    return pic_of(net, all_features(net, frames), net.features(input));
}

double compute_lpips_total(const PerceptualNet& net, std::span<const Image> frames) {
    require_frames(frames, "LPIPS_T");
    return lpips_total_of(net, all_features(net, frames));
}

double compute_lpips_max_endpoint(const PerceptualNet& net, std::span<const Image> frames) {
    require_frames(frames, "LPIPS_M");
    return lpips_max_endpoint_of(net, all_features(net, frames));
}

double ppl_from_lpips_total(double lpips_total, std::size_t n_frames) {
    if (n_frames < 2) return 0.0;
    return lpips_total * static_cast<double>(n_frames - 1);
}

double compute_ppl(const PerceptualNet& net, std::span<const Image> frames) {
    return ppl_from_lpips_total(compute_lpips_total(net, frames), frames.size());
}

namespace {

ClipScores clip_of(const PerceptualNet& net, const std::vector<PerceptualNet::Features>& feats,
                   std::span<const std::string> stage_prompts, std::span<const FramePosition> positions) {
    std::vector<std::vector<double>> image_emb;
    image_emb.reserve(feats.size());
    for (const auto& f : feats) image_emb.push_back(net.image_embedding(f));

    ClipScores out;
    if (feats.size() == 1) {
        out.frame = 1.0;
    } else {
        double sum = 0.0;
        for (std::size_t k = 0; k + 1 < image_emb.size(); ++k) sum += cosine_similarity(image_emb[k], image_emb[k + 1]);
        out.frame = sum / static_cast<double>(image_emb.size() - 1);
    }

    if (stage_prompts.empty() || positions.empty()) return out;
    if (positions.size() != feats.size()) throw ShapeError("CLIP score: one position per frame required");
    std::vector<std::vector<double>> text_emb;
    for (const auto& p : stage_prompts) text_emb.push_back(net.text_embedding(p));
    double sum = 0.0;
    for (std::size_t k = 0; k < feats.size(); ++k) {
        const auto& pos = positions[k];
        if (pos.stage < 0 || static_cast<std::size_t>(pos.stage) + 1 >= text_emb.size()) {
            throw ConfigError("CLIP score: frame stage " + std::to_string(pos.stage) + " has no prompt pair");
        }
        const auto& from = text_emb[pos.stage];
        const auto& to = text_emb[pos.stage + 1];
        std::vector<double> mixed(from.size());
        for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = (1.0 - pos.alpha) * from[i] + pos.alpha * to[i];
        sum += cosine_similarity(image_emb[k], mixed);
    }
    out.text = sum / static_cast<double>(feats.size());
    return out;
}

}  // namespace

ClipScores compute_clip_scores(const PerceptualNet& net, std::span<const Image> frames,
                               std::span<const std::string> stage_prompts,
                               std::span<const FramePosition> positions) {
    require_frames(frames, "CLIP score");
    return clip_of(net, all_features(net, frames), stage_prompts, positions);
}

MetricsReport evaluate_frames(const PerceptualNet& net, std::span<const Image> frames, const Image& input,
                              std::span<const std::string> stage_prompts,
                              std::span<const FramePosition> positions, double runtime_seconds) {
    require_frames(frames, "metrics");
    const auto feats = all_features(net, frames);
    MetricsReport r;
    r.n_frames = static_cast<int>(frames.size());
    r.pic = pic_of(net, feats, net.features(input));
    r.lpips_total = lpips_total_of(net, feats);
    r.lpips_max_endpoint = lpips_max_endpoint_of(net, feats);
    r.ppl = ppl_from_lpips_total(r.lpips_total, frames.size());
    const auto clip = clip_of(net, feats, stage_prompts, positions);
    r.clip_text = clip.text;
    r.clip_frame = clip.frame;
    r.runtime_seconds = runtime_seconds;
    return r;
}

}  // namespace laser
