#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "typlab/bevrep.hpp"
#include "typlab/common.hpp"
#include "typlab/nn.hpp"
#include "typlab/tensor.hpp"

namespace typlab::codec {

using bevrep::GridGeometry;
using bevrep::LogitGrid;
using bevrep::OccupancyGrid;

struct CodecConfig {
    GridGeometry geometry;
    int in_channels = 8;      // grid z-bins treated as input channels
    int latent_channels = 8;  // c_x (occupancy) or c_y (object maps)
    int n_down = 3;           // spatial downsampling factor 2^n_down
    int base_width = 16;
    int codebook_size = 256;
    double beta = 0.25;  // commitment weight
    double gamma = 2.0;  // focal loss exponent

    int latent_h() const { return geometry.H >> n_down; }
    int latent_w() const { return geometry.W >> n_down; }
    int width(int level) const { return std::min(base_width << level, 128); }
};

/// Continuous or quantized feature map; when quantized, every spatial
/// vector equals some codebook row exactly.
template <typename T>
struct LatentMap {
    Tensor<T> data;  // [c, h, w]
    bool quantized = false;
};

template <typename T>
struct Codebook {
    int K = 0, dim = 0;
    Tensor<T> codes;   // [K, dim]
    Tensor<T> gcodes;

    Codebook() = default;
    Codebook(int K_, int dim_)
        : K(K_), dim(dim_), codes(Tensor<T>({K_, dim_})), gcodes(Tensor<T>({K_, dim_})) {}

    void collect(nn::ParamList<T>& out, const std::string& prefix) {
        out.push_back({prefix + ".codes", &codes, &gcodes});
    }
};

// ---------------------------------------------------------------------------
// Encoder / decoder stacks
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderNet {
    std::vector<nn::Conv2d<T>> downs, refines;
    std::vector<nn::SiLU<T>> acts_a, acts_b;
    nn::Conv2d<T> head;

    EncoderNet() = default;
    explicit EncoderNet(const CodecConfig& cfg) {
        int c = cfg.in_channels;
        for (int i = 0; i < cfg.n_down; ++i) {
            const int w = cfg.width(i);
            downs.emplace_back(c, w, 3, 2);
            refines.emplace_back(w, w, 3, 1);
            c = w;
        }
        acts_a.resize(downs.size());
        acts_b.resize(downs.size());
        head = nn::Conv2d<T>(c, cfg.latent_channels, 1, 1, 0);
    }

    void init(Rng& rng) {
        for (auto& l : downs) l.init(rng);
        for (auto& l : refines) l.init(rng);
        head.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> h = x;
        for (std::size_t i = 0; i < downs.size(); ++i) {
            h = acts_a[i].forward(downs[i].forward(h));
            h = acts_b[i].forward(refines[i].forward(h));
        }
        return head.forward(h);
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> gh = head.backward(g);
        for (std::size_t i = downs.size(); i-- > 0;) {
            gh = refines[i].backward(acts_b[i].backward(gh));
            gh = downs[i].backward(acts_a[i].backward(gh));
        }
        return gh;
    }

    void collect(nn::ParamList<T>& out, const std::string& prefix) {
        for (std::size_t i = 0; i < downs.size(); ++i) {
            downs[i].collect(out, prefix + ".down" + std::to_string(i));
            refines[i].collect(out, prefix + ".refine" + std::to_string(i));
        }
        head.collect(out, prefix + ".head");
    }
};

template <typename T>
struct DecoderNet {
    nn::Conv2d<T> head;
    nn::SiLU<T> head_act;
    std::vector<nn::Upsample2x<T>> ups;
    std::vector<nn::Conv2d<T>> convs_a, convs_b;
    std::vector<nn::SiLU<T>> acts_a, acts_b;
    nn::Conv2d<T> final_conv;
    nn::DepthToSpace2<T> d2s;
    nn::SiLU<T> refine_act;
    nn::Conv2d<T> refine_conv;  // full-resolution logit refinement

    DecoderNet() = default;
    explicit DecoderNet(const CodecConfig& cfg) {
        head = nn::Conv2d<T>(cfg.latent_channels, cfg.width(cfg.n_down - 1), 1, 1, 0);
        for (int i = cfg.n_down - 1; i >= 1; --i) {
            ups.emplace_back();
            convs_a.emplace_back(cfg.width(i), cfg.width(i - 1), 3, 1);
            convs_b.emplace_back(cfg.width(i - 1), cfg.width(i - 1), 3, 1);
        }
        acts_a.resize(convs_a.size());
        acts_b.resize(convs_a.size());
        const int refine_c = std::max(4, cfg.in_channels);
        final_conv = nn::Conv2d<T>(cfg.width(0), 4 * refine_c, 3, 1);
        refine_conv = nn::Conv2d<T>(refine_c, cfg.in_channels, 3, 1);
    }

    void init(Rng& rng) {
        head.init(rng);
        for (auto& l : convs_a) l.init(rng);
        for (auto& l : convs_b) l.init(rng);
        final_conv.init(rng);
        refine_conv.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& z) {
        Tensor<T> h = head_act.forward(head.forward(z));
        for (std::size_t i = 0; i < ups.size(); ++i) {
            h = acts_a[i].forward(convs_a[i].forward(ups[i].forward(h)));
            h = acts_b[i].forward(convs_b[i].forward(h));
        }
        return refine_conv.forward(refine_act.forward(d2s.forward(final_conv.forward(h))));
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> gh =
            final_conv.backward(d2s.backward(refine_act.backward(refine_conv.backward(g))));
        for (std::size_t i = ups.size(); i-- > 0;) {
            gh = convs_b[i].backward(acts_b[i].backward(gh));
            gh = ups[i].backward(convs_a[i].backward(acts_a[i].backward(gh)));
        }
        return head.backward(head_act.backward(gh));
    }

    void collect(nn::ParamList<T>& out, const std::string& prefix) {
        head.collect(out, prefix + ".head");
        for (std::size_t i = 0; i < convs_a.size(); ++i) {
            convs_a[i].collect(out, prefix + ".up" + std::to_string(i) + "a");
            convs_b[i].collect(out, prefix + ".up" + std::to_string(i) + "b");
        }
        final_conv.collect(out, prefix + ".final");
        refine_conv.collect(out, prefix + ".refine");
    }
};

/// Encoder/quantizer/decoder triple with role and domain tags. The tags are
/// fixed at construction and recorded in every checkpoint.
template <typename T>
struct CodecNet {
    CodecConfig cfg;
    std::string role;    // "occupancy" | "objectmap"
    std::string domain;  // "target" | "source"
    EncoderNet<T> encoder;
    DecoderNet<T> decoder;
    Codebook<T> codebook;

    CodecNet() = default;
    CodecNet(const CodecConfig& cfg_, std::string role_, std::string domain_)
        : cfg(cfg_),
          role(std::move(role_)),
          domain(std::move(domain_)),
          encoder(cfg_),
          decoder(cfg_),
          codebook(cfg_.codebook_size, cfg_.latent_channels) {
        if ((cfg.geometry.H >> cfg.n_down) << cfg.n_down != cfg.geometry.H ||
            (cfg.geometry.W >> cfg.n_down) << cfg.n_down != cfg.geometry.W)
            throw ArgumentError("CodecNet: grid size must be divisible by 2^n_down");
    }

    void init(Rng& rng) {
        encoder.init(rng);
        decoder.init(rng);
        for (auto& v : codebook.codes.data) v = static_cast<T>(rng.normal() * 0.5);
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> out;
        encoder.collect(out, "enc");
        decoder.collect(out, "dec");
        codebook.collect(out, "codebook");
        return out;
    }
    nn::ParamList<T> encoder_params() {
        nn::ParamList<T> out;
        encoder.collect(out, "enc");
        return out;
    }
    nn::ParamList<T> decoder_params() {
        nn::ParamList<T> out;
        decoder.collect(out, "dec");
        return out;
    }
    nn::ParamList<T> codebook_params() {
        nn::ParamList<T> out;
        codebook.collect(out, "codebook");
        return out;
    }
};

// ---------------------------------------------------------------------------
// Spec operations
// ---------------------------------------------------------------------------

template <typename T>
void check_geometry(const CodecNet<T>& net, const GridGeometry& g, bool check_c) {
    const GridGeometry& cg = net.cfg.geometry;
    if (g.H != cg.H || g.W != cg.W || (check_c && g.C != cg.C))
        throw ShapeError("codec: grid geometry does not match the codec configuration");
}

template <typename T>
LatentMap<T> encode(CodecNet<T>& net, const OccupancyGrid& grid) {
    if (net.role != "occupancy") throw ShapeError("codec: occupancy input fed to " + net.role);
    check_geometry(net, grid.geometry, true);
    return {net.encoder.forward(bevrep::grid_to_tensor<T>(grid)), false};
}

template <typename T>
LatentMap<T> encode(CodecNet<T>& net, const bevrep::BinaryMap& map) {
    if (net.role != "objectmap") throw ShapeError("codec: object map fed to " + net.role);
    check_geometry(net, map.geometry, false);
    return {net.encoder.forward(bevrep::map_to_tensor<T>(map)), false};
}

struct QuantizeIndices {
    std::vector<int> idx;  // row-major [h*w]
};

/// Nearest codebook row per spatial vector (ties to the lowest index). The
/// straight-through contract lives in the training steps: gradients flow
/// through the quantizer unchanged.
template <typename T>
std::pair<LatentMap<T>, QuantizeIndices> quantize(const Codebook<T>& book,
                                                  const LatentMap<T>& latent) {
    const int c = latent.data.dim(0), h = latent.data.dim(1), w = latent.data.dim(2);
    if (c != book.dim) throw ShapeError("quantize: latent channel count does not match codebook");
    LatentMap<T> out{Tensor<T>(latent.data.shape), true};
    QuantizeIndices qi;
    qi.idx.resize(static_cast<std::size_t>(h) * w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double best = std::numeric_limits<double>::infinity();
            int best_k = 0;
            for (int k = 0; k < book.K; ++k) {
                double d = 0;
                for (int ci = 0; ci < c; ++ci) {
                    const double diff =
                        static_cast<double>(latent.data.data[ci * plane + y * w + x]) -
                        static_cast<double>(book.codes.data[static_cast<std::size_t>(k) * c + ci]);
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    best_k = k;
                }
            }
            qi.idx[static_cast<std::size_t>(y) * w + x] = best_k;
            for (int ci = 0; ci < c; ++ci)
                out.data.data[ci * plane + y * w + x] =
                    book.codes.data[static_cast<std::size_t>(best_k) * c + ci];
        }
    return {std::move(out), std::move(qi)};
}

template <typename T>
LogitGrid decode(CodecNet<T>& net, const LatentMap<T>& latent) {
    const Tensor<T> logits = net.decoder.forward(latent.data);
    GridGeometry g = net.cfg.geometry;
    if (net.role == "objectmap") g.C = 1;
    return bevrep::tensor_to_logits(logits, g);
}

template <typename T>
Tensor<T> decode_tensor(CodecNet<T>& net, const Tensor<T>& latent) {
    return net.decoder.forward(latent);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
struct LossGrad {
    double value = 0;
    Tensor<T> grad;
};

/// Per-voxel focal loss summed over all voxels; probabilities are clamped
/// to [1e-6, 1-1e-6] inside the log.
template <typename T>
LossGrad<T> focal_loss(const Tensor<T>& target, const Tensor<T>& logits, double gamma) {
    if (target.shape != logits.shape) throw ShapeError("focal_loss: shape mismatch");
    if (gamma < 0) throw ArgumentError("focal_loss: gamma must be >= 0");
    LossGrad<T> out;
    out.grad = Tensor<T>(logits.shape);
    const double lo = 1e-6, hi = 1.0 - 1e-6;
    double total = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const double p = bevrep::sigmoid(static_cast<double>(logits.data[i]));
        const double dp = p * (1 - p);
        double value, dldp;
        if (target.data[i] > T(0.5)) {
            const double pc = std::min(std::max(p, lo), hi);
            const double inside = p > lo && p < hi;
            value = -std::pow(1 - p, gamma) * std::log(pc);
            dldp = gamma * std::pow(1 - p, gamma - 1) * std::log(pc) -
                   std::pow(1 - p, gamma) * (inside ? 1.0 / pc : 0.0);
        } else {
            const double qc = std::min(std::max(1 - p, lo), hi);
            const double inside = (1 - p) > lo && (1 - p) < hi;
            value = -std::pow(p, gamma) * std::log(qc);
            dldp = -gamma * std::pow(p, gamma - 1) * std::log(qc) +
                   std::pow(p, gamma) * (inside ? 1.0 / qc : 0.0);
        }
        total += value;
        out.grad.data[i] = static_cast<T>(dldp * dp);
    }
    out.value = total;
    return out;
}

struct VqLossTerms {
    double rec = 0;         // focal reconstruction loss
    double codebook = 0;    // || sg[E(x)] - x^z ||^2
    double commitment = 0;  // || sg[x^z] - E(x) ||^2 (unweighted)
    double beta = 0.25;

    double total() const { return rec + codebook + beta * commitment; }
};

/// Forward-only evaluation of the three training terms.
template <typename T>
VqLossTerms vq_loss(CodecNet<T>& net, const Tensor<T>& input, double beta) {
    if (beta <= 0) throw ArgumentError("vq_loss: beta must be > 0");
    VqLossTerms terms;
    terms.beta = beta;
    const Tensor<T> z = net.encoder.forward(input);
    auto [zq, qi] = quantize(net.codebook, LatentMap<T>{z, false});
    const Tensor<T> logits = net.decoder.forward(zq.data);
    terms.rec = focal_loss(input, logits, net.cfg.gamma).value;
    for (std::size_t i = 0; i < z.numel(); ++i) {
        const double d = static_cast<double>(z.data[i]) - static_cast<double>(zq.data.data[i]);
        terms.codebook += d * d;
        terms.commitment += d * d;
    }
    return terms;
}

/// One optimization step's worth of gradients for the full VQ objective.
/// Returns the loss terms; gradients are accumulated into the nets. The
/// reconstruction gradient reaches the encoder through the straight-through
/// contract (identity across the quantizer).
template <typename T>
VqLossTerms vq_step_gradients(CodecNet<T>& net, const Tensor<T>& input, double beta,
                              bool update_codebook = true) {
    VqLossTerms terms;
    terms.beta = beta;
    const Tensor<T> z = net.encoder.forward(input);
    auto [zq, qi] = quantize(net.codebook, LatentMap<T>{z, false});
    const Tensor<T> logits = net.decoder.forward(zq.data);
    const LossGrad<T> rec = focal_loss(input, logits, net.cfg.gamma);
    terms.rec = rec.value;

    Tensor<T> dz = net.decoder.backward(rec.grad);  // straight-through at the quantizer
    const int c = z.dim(0), h = z.dim(1), w = z.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int k = qi.idx[static_cast<std::size_t>(y) * w + x];
            for (int ci = 0; ci < c; ++ci) {
                const std::size_t zi = ci * plane + static_cast<std::size_t>(y) * w + x;
                const double diff =
                    static_cast<double>(z.data[zi]) - static_cast<double>(zq.data.data[zi]);
                terms.codebook += diff * diff;
                terms.commitment += diff * diff;
                // commitment pulls the encoder toward the selected code
                dz.data[zi] += static_cast<T>(2.0 * beta * diff);
                // codebook term pulls the code toward the encoder output
                if (update_codebook)
                    net.codebook.gcodes.data[static_cast<std::size_t>(k) * c + ci] +=
                        static_cast<T>(-2.0 * diff);
            }
        }
    net.encoder.backward(dz);
    return terms;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct CodecTrainConfig {
    int epochs = 20;
    int batch_size = 8;
    double lr = 2e-3;
    double lr_final_frac = 0.1;  // cosine decay floor as a fraction of lr
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch = 0;
    double rec = 0, codebook = 0, commitment = 0, total = 0;
};

/// Seeds the codebook from encoder outputs of the first samples so training
/// starts with live codes.
template <typename T>
void init_codebook_from_data(CodecNet<T>& net, const std::vector<Tensor<T>>& inputs, Rng& rng) {
    const int K = net.codebook.K;
    const int c = net.codebook.dim;
    int filled = 0;
    for (std::size_t s = 0; s < inputs.size() && filled < K; ++s) {
        const Tensor<T> z = net.encoder.forward(inputs[s]);
        const int h = z.dim(1), w = z.dim(2);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        std::vector<int> order(plane);
        for (std::size_t i = 0; i < plane; ++i) order[i] = static_cast<int>(i);
        rng.shuffle(order);
        for (std::size_t i = 0; i < plane && filled < K; ++i, ++filled)
            for (int ci = 0; ci < c; ++ci)
                net.codebook.codes.data[static_cast<std::size_t>(filled) * c + ci] =
                    z.data[ci * plane + static_cast<std::size_t>(order[i])] +
                    static_cast<T>(rng.normal() * 1e-3);
    }
}

/// Minimizes the VQ objective with Adam; deterministic given the seed.
/// `on_epoch` fires after each epoch (checkpointing hook).
template <typename T>
std::vector<EpochLog> train_codec(
    CodecNet<T>& net, const std::vector<Tensor<T>>& inputs, const CodecTrainConfig& tc,
    const std::function<void(int, CodecNet<T>&, const EpochLog&)>& on_epoch = nullptr) {
    if (inputs.empty()) throw ConfigError("train_codec: empty dataset");
    Rng rng(hash64(tc.seed, std::uint64_t{0xC0DEC}));
    init_codebook_from_data(net, inputs, rng);

    nn::ParamList<T> params = net.params();
    nn::Adam<T> opt(tc.lr);
    std::vector<EpochLog> log;
    std::vector<std::size_t> order(inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double floor_lr = tc.lr * tc.lr_final_frac;
        opt.lr = tc.epochs > 1
                     ? floor_lr + (tc.lr - floor_lr) * 0.5 *
                           (1.0 + std::cos(kPi * epoch / (tc.epochs - 1)))
                     : tc.lr;
        rng.shuffle(order);
        EpochLog el;
        el.epoch = epoch;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), cursor + static_cast<std::size_t>(tc.batch_size));
            nn::zero_grads(params);
            for (std::size_t i = cursor; i < batch_end; ++i) {
                const VqLossTerms terms =
                    vq_step_gradients(net, inputs[order[i]], net.cfg.beta);
                el.rec += terms.rec;
                el.codebook += terms.codebook;
                el.commitment += terms.commitment;
                el.total += terms.total();
            }
            const double scale = 1.0 / static_cast<double>(batch_end - cursor);
            for (auto& p : params)
                for (auto& g : p.grad->data) g = static_cast<T>(g * scale);
            opt.step(params);
            cursor = batch_end;
        }
        const double n = static_cast<double>(inputs.size());
        el.rec /= n;
        el.codebook /= n;
        el.commitment /= n;
        el.total /= n;
        log.push_back(el);
        if (on_epoch) on_epoch(epoch, net, el);
    }
    return log;
}

/// Voxel IoU between a reconstruction (thresholded logits) and its target.
inline double grid_iou(const OccupancyGrid& a, const OccupancyGrid& b) {
    if (a.data.size() != b.data.size()) throw ShapeError("grid_iou: size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        inter += a.data[i] && b.data[i];
        uni += a.data[i] || b.data[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Full reconstruction path: encode, quantize, decode, threshold.
template <typename T>
OccupancyGrid reconstruct(CodecNet<T>& net, const OccupancyGrid& grid) {
    LatentMap<T> z = encode(net, grid);
    auto [zq, qi] = quantize(net.codebook, z);
    return bevrep::threshold_logits(decode(net, zq));
}

}  // namespace typlab::codec
