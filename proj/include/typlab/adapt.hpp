#pragma once

#include <functional>
#include <vector>

#include "typlab/checkpoint.hpp"
#include "typlab/codec.hpp"
#include "typlab/common.hpp"
#include "typlab/nn.hpp"

namespace typlab::adapt {

// ---------------------------------------------------------------------------
// Latent-space discriminator: 4 convolutional layers ending in a score map
// that is spatially averaged to one scalar per sample.
// ---------------------------------------------------------------------------

template <typename T>
struct Discriminator {
    nn::Conv2d<T> c1, c2, c3, c4;
    nn::LeakyReLU<T> a1, a2, a3;
    std::vector<int> map_shape;

    Discriminator() = default;
    explicit Discriminator(int latent_channels)
        : c1(latent_channels, 32, 3, 1), c2(32, 64, 3, 2), c3(64, 64, 3, 1), c4(64, 1, 1, 1, 0) {}

    static constexpr int layer_count() { return 4; }

    void init(Rng& rng) {
        c1.init(rng);
        c2.init(rng);
        c3.init(rng);
        c4.init(rng);
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> out;
        c1.collect(out, "disc.c1");
        c2.collect(out, "disc.c2");
        c3.collect(out, "disc.c3");
        c4.collect(out, "disc.c4");
        return out;
    }

    Tensor<T> forward_map(const Tensor<T>& latent) {
        Tensor<T> m = c4.forward(a3.forward(c3.forward(a2.forward(c2.forward(
            a1.forward(c1.forward(latent)))))));
        map_shape = m.shape;
        return m;
    }

    /// Scalar critic score: spatial mean of the map output.
    double score(const Tensor<T>& latent) {
        const Tensor<T> m = forward_map(latent);
        double acc = 0;
        for (const auto& v : m.data) acc += static_cast<double>(v);
        return acc / static_cast<double>(m.numel());
    }

    /// Backward from a scalar dL/dscore; returns grad w.r.t. the latent.
    Tensor<T> backward_scalar(double dscore) {
        Tensor<T> gm(map_shape);
        const T g = static_cast<T>(dscore / static_cast<double>(gm.numel()));
        gm.fill(g);
        return c1.backward(a1.backward(c2.backward(a2.backward(c3.backward(
            a3.backward(c4.backward(gm)))))));
    }
};

// ---------------------------------------------------------------------------
// Hinge losses
// ---------------------------------------------------------------------------

struct HingeLoss {
    double value = 0;
    std::vector<double> dscore_target;  // dL/dD(target_i)
    std::vector<double> dscore_source;  // dL/dD(source_i)
};

/// L_D = E_target[max(0, 1 - D)] + E_source[max(0, 1 + D)], from scores.
inline HingeLoss hinge_d_loss(const std::vector<double>& scores_target,
                              const std::vector<double>& scores_source) {
    if (scores_target.empty() || scores_source.empty())
        throw ArgumentError("hinge_d_loss: both batches must be nonempty");
    if (scores_target.size() != scores_source.size())
        throw ArgumentError("hinge_d_loss: batches must have equal size");
    HingeLoss out;
    const double nt = static_cast<double>(scores_target.size());
    const double ns = static_cast<double>(scores_source.size());
    out.dscore_target.resize(scores_target.size(), 0.0);
    out.dscore_source.resize(scores_source.size(), 0.0);
    for (std::size_t i = 0; i < scores_target.size(); ++i) {
        const double margin = 1.0 - scores_target[i];
        if (margin > 0) {
            out.value += margin / nt;
            out.dscore_target[i] = -1.0 / nt;
        }
    }
    for (std::size_t i = 0; i < scores_source.size(); ++i) {
        const double margin = 1.0 + scores_source[i];
        if (margin > 0) {
            out.value += margin / ns;
            out.dscore_source[i] = 1.0 / ns;
        }
    }
    return out;
}

struct GenLoss {
    double value = 0;
    std::vector<double> dscore_source;
};

/// L_src = -E_source[D(E_src(x))], from scores.
inline GenLoss hinge_g_loss(const std::vector<double>& scores_source) {
    if (scores_source.empty()) throw ArgumentError("hinge_g_loss: empty batch");
    GenLoss out;
    const double n = static_cast<double>(scores_source.size());
    out.dscore_source.resize(scores_source.size(), -1.0 / n);
    for (double s : scores_source) out.value -= s / n;
    return out;
}

/// The spec's disc_loss over latent batches: evaluates scores and returns
/// the hinge objective (gradients are produced by the training step).
template <typename T>
double disc_loss(Discriminator<T>& d, const std::vector<Tensor<T>>& target_latents,
                 const std::vector<Tensor<T>>& source_latents) {
    std::vector<double> st, ss;
    for (const auto& z : target_latents) st.push_back(d.score(z));
    for (const auto& z : source_latents) ss.push_back(d.score(z));
    return hinge_d_loss(st, ss).value;
}

/// The spec's gen_loss over a latent batch.
template <typename T>
double gen_loss(Discriminator<T>& d, const std::vector<Tensor<T>>& source_latents) {
    std::vector<double> ss;
    for (const auto& z : source_latents) ss.push_back(d.score(z));
    return hinge_g_loss(ss).value;
}

// ---------------------------------------------------------------------------
// Adversarial adaptation of the source codec against a frozen target codec
// ---------------------------------------------------------------------------

struct AdaptConfig {
    int epochs = 20;
    int batch_size = 6;  // per domain
    double lr = 1e-3;
    double disc_lr = 2e-4;
    double lambda_src = 1.0;  // weight on the adversarial term
    std::uint64_t seed = 0;
};

struct AdaptEpochLog {
    int epoch = 0;
    double loss_d = 0;
    double loss_rec = 0;
    double loss_src = 0;
    double disc_accuracy = 0;  // fraction of latents classified by sign
};

/// Initializes the source codec from the target's weights (bitwise); the
/// codebook is shared frozen.
template <typename T>
codec::CodecNet<T> clone_as_source(const codec::CodecNet<T>& target) {
    codec::CodecNet<T> src = target;
    src.domain = "source";
    return src;
}

/// Interleaved optimization: one discriminator step on Eq.-(8)-style hinge
/// loss, one codec step on reconstruction + adversarial + commitment with
/// the codebook frozen. Returns per-epoch logs.
template <typename T>
std::vector<AdaptEpochLog> adapt_source_codec(
    codec::CodecNet<T>& target_codec, codec::CodecNet<T>& source_codec, Discriminator<T>& disc,
    const std::vector<Tensor<T>>& source_inputs, const std::vector<Tensor<T>>& target_inputs,
    const AdaptConfig& cfg,
    const std::function<void(int, const AdaptEpochLog&)>& on_epoch = nullptr) {
    if (source_inputs.empty() || target_inputs.empty())
        throw ConfigError("adapt_source_codec: both domains need data");
    const std::string codebook_hash_before =
        checkpoint::params_sha256(target_codec.codebook_params());
    const std::string target_hash_before = checkpoint::params_sha256(target_codec.params());

    nn::ParamList<T> dparams = disc.params();
    nn::ParamList<T> cparams;  // encoder + decoder only; codebook stays frozen
    source_codec.encoder.collect(cparams, "enc");
    source_codec.decoder.collect(cparams, "dec");
    nn::Adam<T> opt_d(cfg.disc_lr);
    nn::Adam<T> opt_c(cfg.lr);
    Rng rng(hash64(cfg.seed, std::uint64_t{0xADA7}));

    std::vector<std::size_t> src_order(source_inputs.size()), tgt_order(target_inputs.size());
    for (std::size_t i = 0; i < src_order.size(); ++i) src_order[i] = i;
    for (std::size_t i = 0; i < tgt_order.size(); ++i) tgt_order[i] = i;

    std::vector<AdaptEpochLog> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(src_order);
        rng.shuffle(tgt_order);
        AdaptEpochLog el;
        el.epoch = epoch;
        int batches = 0;
        std::size_t scored = 0, correct = 0;

        const std::size_t nbatch =
            std::min(src_order.size(), tgt_order.size()) / static_cast<std::size_t>(cfg.batch_size);
        if (nbatch == 0)
            throw ConfigError("adapt_source_codec: dataset smaller than one batch per domain");
        for (std::size_t b = 0; b < nbatch; ++b) {
            const std::size_t base = b * static_cast<std::size_t>(cfg.batch_size);

            // --- discriminator step: equal real/fake per batch ---
            nn::zero_grads(dparams);
            std::vector<double> st, ss;
            std::vector<const Tensor<T>*> src_batch;
            for (int i = 0; i < cfg.batch_size; ++i) {
                const Tensor<T>& xt = target_inputs[tgt_order[base + static_cast<std::size_t>(i)]];
                const Tensor<T> z = target_codec.encoder.forward(xt);
                st.push_back(disc.score(z));
                const double margin = 1.0 - st.back();
                if (margin > 0) disc.backward_scalar(-1.0 / cfg.batch_size);
            }
            for (int i = 0; i < cfg.batch_size; ++i) {
                const Tensor<T>& xs = source_inputs[src_order[base + static_cast<std::size_t>(i)]];
                src_batch.push_back(&xs);
                const Tensor<T> z = source_codec.encoder.forward(xs);
                ss.push_back(disc.score(z));
                const double margin = 1.0 + ss.back();
                if (margin > 0) disc.backward_scalar(1.0 / cfg.batch_size);
            }
            el.loss_d += hinge_d_loss(st, ss).value;
            opt_d.step(dparams);
            for (double s : st) {
                ++scored;
                correct += s > 0;
            }
            for (double s : ss) {
                ++scored;
                correct += s < 0;
            }

            // --- codec step: rec + adversarial + commitment, codebook frozen ---
            nn::zero_grads(cparams);
            double rec_acc = 0, src_acc = 0;
            for (const Tensor<T>* xs : src_batch) {
                const Tensor<T> z = source_codec.encoder.forward(*xs);
                auto [zq, qi] = codec::quantize(source_codec.codebook,
                                                codec::LatentMap<T>{z, false});
                const Tensor<T> logits = source_codec.decoder.forward(zq.data);
                const codec::LossGrad<T> rec =
                    codec::focal_loss(*xs, logits, source_codec.cfg.gamma);
                rec_acc += rec.value;
                Tensor<T> dz = source_codec.decoder.backward(rec.grad);
                for (std::size_t j = 0; j < z.numel(); ++j)
                    dz.data[j] += static_cast<T>(2.0 * source_codec.cfg.beta *
                                                 (static_cast<double>(z.data[j]) -
                                                  static_cast<double>(zq.data.data[j])));
                // adversarial term: push E_src latents toward positive scores
                const double score = disc.score(z);
                src_acc += -score;
                // stray grads into the discriminator get cleared before its
                // next step
                Tensor<T> gz_adv = disc.backward_scalar(-cfg.lambda_src);
                dz += gz_adv;
                source_codec.encoder.backward(dz);
            }
            el.loss_rec += rec_acc / cfg.batch_size;
            el.loss_src += src_acc / cfg.batch_size;
            const double scale = 1.0 / cfg.batch_size;
            for (auto& p : cparams)
                for (auto& g : p.grad->data) g = static_cast<T>(g * scale);
            opt_c.step(cparams);
            ++batches;
        }
        if (batches > 0) {
            el.loss_d /= batches;
            el.loss_rec /= batches;
            el.loss_src /= batches;
        }
        el.disc_accuracy = scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0;
        log.push_back(el);
        if (on_epoch) on_epoch(epoch, el);
    }

    if (checkpoint::params_sha256(target_codec.codebook_params()) != codebook_hash_before ||
        checkpoint::params_sha256(source_codec.codebook_params()) != codebook_hash_before)
        throw IntegrityError("adaptation modified the frozen codebook");
    if (checkpoint::params_sha256(target_codec.params()) != target_hash_before)
        throw IntegrityError("adaptation modified the frozen target codec");
    return log;
}

}  // namespace typlab::adapt
