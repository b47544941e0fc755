#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "typlab/codec.hpp"
#include "typlab/common.hpp"
#include "typlab/nn.hpp"
#include "typlab/tensor.hpp"

namespace typlab::diffusion {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

enum class ScheduleKind { linear };

struct DiffusionSchedule {
    int T = 1000;
    std::vector<double> betas;       // T entries, betas[t-1] is the step t noise
    std::vector<double> alpha_bars;  // T+1 entries, alpha_bars[0] = 1

    double alpha_bar(int t) const { return alpha_bars[static_cast<std::size_t>(t)]; }
};

inline DiffusionSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::linear) {
    if (T < 2) throw ArgumentError("make_schedule: T must be >= 2");
    (void)kind;
    DiffusionSchedule s;
    s.T = T;
    s.betas.resize(static_cast<std::size_t>(T));
    s.alpha_bars.resize(static_cast<std::size_t>(T) + 1);
    const double beta0 = 1e-4, beta1 = 2e-2;
    s.alpha_bars[0] = 1.0;
    for (int t = 0; t < T; ++t) {
        s.betas[static_cast<std::size_t>(t)] = beta0 + (beta1 - beta0) * t / (T - 1);
        s.alpha_bars[static_cast<std::size_t>(t) + 1] =
            s.alpha_bars[static_cast<std::size_t>(t)] * (1.0 - s.betas[static_cast<std::size_t>(t)]);
    }
    return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename T>
Tensor<T> add_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                    const DiffusionSchedule& schedule) {
    if (t < 1 || t > schedule.T) throw ArgumentError("add_noise: t out of range");
    x0.require_same_shape(eps);
    const double ab = schedule.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(ab));
    const T b = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(x0.shape);
    for (std::size_t i = 0; i < x0.numel(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser UNet: 4 encoder scales with additive control injection
// ---------------------------------------------------------------------------

inline constexpr int kScales = 4;

template <typename T>
struct AdapterFeatures {
    std::array<Tensor<T>, kScales> maps;
};

struct UNetConfig {
    int x_channels = 8;
    int y_channels = 3;
    int latent_h = 8, latent_w = 8;
    std::array<int, kScales> widths = {32, 64, 96, 128};
    int temb_dim = 64;
};

template <typename T>
struct ResBlock {
    nn::GroupNorm<T> gn1, gn2;
    nn::SiLU<T> act1, act2, act_t;
    nn::Conv2d<T> conv1, conv2;
    nn::Linear<T> tproj;
    nn::Conv2d<T> skip;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(int c_in, int c_out, int temb_dim)
        : gn1(c_in),
          gn2(c_out),
          conv1(c_in, c_out, 3, 1),
          conv2(c_out, c_out, 3, 1),
          tproj(temb_dim, c_out) {
        if (c_in != c_out) {
            skip = nn::Conv2d<T>(c_in, c_out, 1, 1, 0);
            has_skip = true;
        }
    }

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        tproj.init(rng);
        if (has_skip) skip.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb) {
        Tensor<T> h = conv1.forward(act1.forward(gn1.forward(x)));
        const Tensor<T> tb = tproj.forward(act_t.forward(temb));
        const int c = h.dim(0), hh = h.dim(1), ww = h.dim(2);
        for (int ci = 0; ci < c; ++ci) {
            const T bias = tb.data[static_cast<std::size_t>(ci)];
            T* plane = &h.data[static_cast<std::size_t>(ci) * hh * ww];
            for (int i = 0; i < hh * ww; ++i) plane[i] += bias;
        }
        h = conv2.forward(act2.forward(gn2.forward(h)));
        const Tensor<T> sk = has_skip ? skip.forward(x) : x;
        Tensor<T> out = h;
        out += sk;
        return out;
    }

    /// Returns grad w.r.t. x; accumulates grad w.r.t. temb into `gtemb`.
    Tensor<T> backward(const Tensor<T>& gout, Tensor<T>& gtemb) {
        Tensor<T> gh = gn2.backward(act2.backward(conv2.backward(gout)));
        // time bias gradient: sum over spatial positions per channel
        const int c = gh.dim(0), hh = gh.dim(1), ww = gh.dim(2);
        Tensor<T> gtb({c});
        for (int ci = 0; ci < c; ++ci) {
            T acc = 0;
            const T* plane = &gh.data[static_cast<std::size_t>(ci) * hh * ww];
            for (int i = 0; i < hh * ww; ++i) acc += plane[i];
            gtb.data[static_cast<std::size_t>(ci)] = acc;
        }
        gtemb += act_t.backward(tproj.backward(gtb));
        Tensor<T> gx = gn1.backward(act1.backward(conv1.backward(gh)));
        if (has_skip)
            gx += skip.backward(gout);
        else
            gx += gout;
        return gx;
    }

    void collect(nn::ParamList<T>& out, const std::string& prefix) {
        gn1.collect(out, prefix + ".gn1");
        conv1.collect(out, prefix + ".conv1");
        tproj.collect(out, prefix + ".tproj");
        gn2.collect(out, prefix + ".gn2");
        conv2.collect(out, prefix + ".conv2");
        if (has_skip) skip.collect(out, prefix + ".skip");
    }
};

/// Noise-prediction UNet. The object-map embedding enters by channel
/// concatenation at the input; adapter features add onto the four encoder
/// scales (in place, so they reach both the deeper path and the skips).
template <typename T>
struct UNet {
    UNetConfig cfg;
    nn::Linear<T> temb_fc1, temb_fc2;
    nn::SiLU<T> temb_act;
    nn::Conv2d<T> stem;
    std::array<ResBlock<T>, kScales> enc;
    std::array<nn::Conv2d<T>, kScales - 1> downs;
    ResBlock<T> mid;
    std::array<ResBlock<T>, kScales> dec;
    std::array<nn::Conv2d<T>, kScales - 1> ups_conv;
    std::array<nn::NearestResize<T>, kScales - 1> ups;
    nn::GroupNorm<T> out_gn;
    nn::SiLU<T> out_act;
    nn::Conv2d<T> out_conv;

    // caches for backward
    std::array<Tensor<T>, kScales> enc_cache;
    Tensor<T> temb_cache;

    UNet() = default;
    explicit UNet(const UNetConfig& cfg_) : cfg(cfg_) {
        temb_fc1 = nn::Linear<T>(cfg.temb_dim, cfg.temb_dim);
        temb_fc2 = nn::Linear<T>(cfg.temb_dim, cfg.temb_dim);
        stem = nn::Conv2d<T>(cfg.x_channels + cfg.y_channels, cfg.widths[0], 3, 1);
        for (int s = 0; s < kScales; ++s)
            enc[static_cast<std::size_t>(s)] =
                ResBlock<T>(cfg.widths[static_cast<std::size_t>(s)],
                            cfg.widths[static_cast<std::size_t>(s)], cfg.temb_dim);
        for (int s = 0; s < kScales - 1; ++s)
            downs[static_cast<std::size_t>(s)] =
                nn::Conv2d<T>(cfg.widths[static_cast<std::size_t>(s)],
                              cfg.widths[static_cast<std::size_t>(s) + 1], 3, 2);
        mid = ResBlock<T>(cfg.widths[kScales - 1], cfg.widths[kScales - 1], cfg.temb_dim);
        for (int s = 0; s < kScales; ++s)
            dec[static_cast<std::size_t>(s)] =
                ResBlock<T>(2 * cfg.widths[static_cast<std::size_t>(s)],
                            cfg.widths[static_cast<std::size_t>(s)], cfg.temb_dim);
        for (int s = 1; s < kScales; ++s)
            ups_conv[static_cast<std::size_t>(s) - 1] =
                nn::Conv2d<T>(cfg.widths[static_cast<std::size_t>(s)],
                              cfg.widths[static_cast<std::size_t>(s) - 1], 3, 1);
        out_gn = nn::GroupNorm<T>(cfg.widths[0]);
        out_conv = nn::Conv2d<T>(cfg.widths[0], cfg.x_channels, 3, 1);
    }

    void init(Rng& rng) {
        temb_fc1.init(rng);
        temb_fc2.init(rng);
        stem.init(rng);
        for (auto& b : enc) b.init(rng);
        for (auto& d : downs) d.init(rng);
        mid.init(rng);
        for (auto& b : dec) b.init(rng);
        for (auto& u : ups_conv) u.init(rng);
        out_conv.zero_init();  // untrained net predicts exactly zero noise
    }

    std::array<std::vector<int>, kScales> encoder_scale_shapes() const {
        std::array<std::vector<int>, kScales> shapes;
        int h = cfg.latent_h, w = cfg.latent_w;
        for (int s = 0; s < kScales; ++s) {
            shapes[static_cast<std::size_t>(s)] = {cfg.widths[static_cast<std::size_t>(s)], h, w};
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
        return shapes;
    }

    /// eps prediction. `control`, when present, must carry the four encoder
    /// scale shapes.
    Tensor<T> forward(const Tensor<T>& x_t, const Tensor<T>& y, int t,
                      const AdapterFeatures<T>* control = nullptr) {
        if (x_t.dim(0) != cfg.x_channels) throw ShapeError("UNet: x channel mismatch");
        const Tensor<T> y_resized = nn::resize_nearest(y, x_t.dim(1), x_t.dim(2));
        temb_cache = temb_fc2.forward(temb_act.forward(
            temb_fc1.forward(nn::timestep_embedding<T>(t, cfg.temb_dim))));

        Tensor<T> h = stem.forward(nn::concat_channels(x_t, y_resized));
        for (int s = 0; s < kScales; ++s) {
            h = enc[static_cast<std::size_t>(s)].forward(h, temb_cache);
            if (control) {
                const Tensor<T>& fc = control->maps[static_cast<std::size_t>(s)];
                if (!fc.same_shape(h))
                    throw ShapeError("UNet: control feature shape mismatch at scale " +
                                     std::to_string(s + 1));
                h += fc;
            }
            enc_cache[static_cast<std::size_t>(s)] = h;
            if (s < kScales - 1) h = downs[static_cast<std::size_t>(s)].forward(h);
        }
        h = mid.forward(h, temb_cache);
        for (int s = kScales - 1; s >= 0; --s) {
            h = dec[static_cast<std::size_t>(s)].forward(
                nn::concat_channels(h, enc_cache[static_cast<std::size_t>(s)]), temb_cache);
            if (s > 0) {
                const Tensor<T>& target = enc_cache[static_cast<std::size_t>(s) - 1];
                h = ups_conv[static_cast<std::size_t>(s) - 1].forward(
                    ups[static_cast<std::size_t>(s) - 1].forward(h, target.dim(1), target.dim(2)));
            }
        }
        return out_conv.forward(out_act.forward(out_gn.forward(h)));
    }

    /// Backward through the whole net; returns grad w.r.t. the concatenated
    /// (x_t, y) input. When `gcontrol` is given, per-scale gradients of the
    /// injected features are stored there (they equal the encoder-scale
    /// gradients).
    Tensor<T> backward(const Tensor<T>& gout, AdapterFeatures<T>* gcontrol = nullptr) {
        Tensor<T> gtemb({cfg.temb_dim});
        Tensor<T> g = out_gn.backward(out_act.backward(out_conv.backward(gout)));
        std::array<Tensor<T>, kScales> gskip;
        // decoder chain, reversed (forward order was s = kScales-1 .. 0)
        for (int s = 0; s < kScales; ++s) {
            if (s > 0) g = ups[static_cast<std::size_t>(s) - 1].backward(
                ups_conv[static_cast<std::size_t>(s) - 1].backward(g));
            Tensor<T> gcat = dec[static_cast<std::size_t>(s)].backward(g, gtemb);
            Tensor<T> gh({cfg.widths[static_cast<std::size_t>(s)],
                          enc_cache[static_cast<std::size_t>(s)].dim(1),
                          enc_cache[static_cast<std::size_t>(s)].dim(2)});
            gskip[static_cast<std::size_t>(s)] = Tensor<T>(gh.shape);
            nn::split_channels(gcat, gh, gskip[static_cast<std::size_t>(s)]);
            g = gh;
        }
        g = mid.backward(g, gtemb);
        for (int s = kScales - 1; s >= 0; --s) {
            if (s < kScales - 1) g = downs[static_cast<std::size_t>(s)].backward(g);
            g += gskip[static_cast<std::size_t>(s)];
            if (gcontrol) gcontrol->maps[static_cast<std::size_t>(s)] = g;
            g = enc[static_cast<std::size_t>(s)].backward(g, gtemb);
        }
        Tensor<T> gin = stem.backward(g);
        temb_fc1.backward(temb_act.backward(temb_fc2.backward(gtemb)));
        return gin;
    }

    void collect(nn::ParamList<T>& out, const std::string& prefix) {
        temb_fc1.collect(out, prefix + ".temb1");
        temb_fc2.collect(out, prefix + ".temb2");
        stem.collect(out, prefix + ".stem");
        for (int s = 0; s < kScales; ++s)
            enc[static_cast<std::size_t>(s)].collect(out, prefix + ".enc" + std::to_string(s));
        for (int s = 0; s < kScales - 1; ++s)
            downs[static_cast<std::size_t>(s)].collect(out, prefix + ".down" + std::to_string(s));
        mid.collect(out, prefix + ".mid");
        for (int s = 0; s < kScales; ++s)
            dec[static_cast<std::size_t>(s)].collect(out, prefix + ".dec" + std::to_string(s));
        for (int s = 0; s < kScales - 1; ++s)
            ups_conv[static_cast<std::size_t>(s)].collect(out, prefix + ".up" + std::to_string(s));
        out_gn.collect(out, prefix + ".outgn");
        out_conv.collect(out, prefix + ".outconv");
    }
};

/// Denoiser bundle: UNet, its schedule length, and the latent scaling
/// recorded at stage-1 training time.
template <typename T>
struct Denoiser {
    UNetConfig cfg;
    UNet<T> unet;
    int schedule_T = 1000;
    double x_scale = 1.0;
    double y_scale = 1.0;

    Denoiser() = default;
    explicit Denoiser(const UNetConfig& cfg_) : cfg(cfg_), unet(cfg_) {}

    nn::ParamList<T> params() {
        nn::ParamList<T> out;
        unet.collect(out, "unet");
        return out;
    }
};

/// Single denoising prediction (the spec's denoise_step).
template <typename T>
Tensor<T> denoise_step(Denoiser<T>& d, const Tensor<T>& x_t, const Tensor<T>& y_latent, int t,
                       const AdapterFeatures<T>* control = nullptr) {
    return d.unet.forward(x_t, y_latent, t, control);
}

inline constexpr int kDefaultDdimSteps = 200;

/// Per-element denoising objective for an arbitrary denoiser functor
/// (x_t, y, t) -> eps prediction. Used with cheating denoisers in tests.
template <typename T, typename Fn>
double noise_prediction_loss(Fn&& denoiser, const Tensor<T>& x0, const Tensor<T>& y, int t,
                             const Tensor<T>& eps, const DiffusionSchedule& schedule) {
    const Tensor<T> x_t = add_noise(x0, t, eps, schedule);
    const Tensor<T> pred = denoiser(x_t, y, t);
    double loss = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double diff = static_cast<double>(pred.data[i]) - static_cast<double>(eps.data[i]);
        loss += diff * diff;
    }
    return loss / static_cast<double>(pred.numel());
}

// ---------------------------------------------------------------------------
// Training (stage 1) and the shared per-sample loss
// ---------------------------------------------------------------------------

struct Stage1Config {
    int epochs = 150;
    int batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int T = 1000;
};

struct DiffEpochLog {
    int epoch = 0;
    double loss = 0;
};

/// Per-element squared error between predicted and true noise; gradients
/// flow into the UNet (and out to `gcontrol` when adapter features are
/// injected).
template <typename T>
double denoising_loss_step(Denoiser<T>& d, const DiffusionSchedule& schedule,
                           const Tensor<T>& x0_scaled, const Tensor<T>& y_scaled, int t, Rng& rng,
                           const AdapterFeatures<T>* control = nullptr,
                           AdapterFeatures<T>* gcontrol = nullptr) {
    Tensor<T> eps(x0_scaled.shape);
    for (auto& v : eps.data) v = static_cast<T>(rng.normal());
    const Tensor<T> x_t = add_noise(x0_scaled, t, eps, schedule);
    const Tensor<T> pred = d.unet.forward(x_t, y_scaled, t, control);
    const double n = static_cast<double>(pred.numel());
    double loss = 0;
    Tensor<T> gpred(pred.shape);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double diff = static_cast<double>(pred.data[i]) - static_cast<double>(eps.data[i]);
        loss += diff * diff;
        gpred.data[i] = static_cast<T>(2.0 * diff / n);
    }
    d.unet.backward(gpred, gcontrol);
    return loss / n;
}

template <typename T>
double tensor_std(const std::vector<Tensor<T>>& xs) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (const auto& x : xs) {
        for (const auto& v : x.data) {
            sum += static_cast<double>(v);
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
        n += x.numel();
    }
    if (n == 0) return 1.0;
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    return var > 1e-12 ? std::sqrt(var) : 1.0;
}

/// Minimizes the stage-1 objective over (x latent, y latent) pairs from a
/// single-agent dataset. Latent scaling is measured here and recorded in
/// the denoiser.
template <typename T>
std::vector<DiffEpochLog> train_stage1(
    Denoiser<T>& d, const std::vector<Tensor<T>>& x_latents,
    const std::vector<Tensor<T>>& y_latents, const Stage1Config& cfg,
    const std::function<void(int, Denoiser<T>&, const DiffEpochLog&)>& on_epoch = nullptr) {
    if (x_latents.empty() || x_latents.size() != y_latents.size())
        throw ConfigError("train_stage1: dataset empty or mismatched");
    const DiffusionSchedule schedule = make_schedule(cfg.T);
    d.schedule_T = cfg.T;
    d.x_scale = tensor_std(x_latents);
    d.y_scale = tensor_std(y_latents);

    nn::ParamList<T> params = d.params();
    nn::Adam<T> opt(cfg.lr);
    Rng rng(hash64(cfg.seed, std::uint64_t{0xD1FF}));
    std::vector<std::size_t> order(x_latents.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<DiffEpochLog> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        DiffEpochLog el;
        el.epoch = epoch;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t end =
                std::min(order.size(), cursor + static_cast<std::size_t>(cfg.batch_size));
            nn::zero_grads(params);
            for (std::size_t i = cursor; i < end; ++i) {
                Tensor<T> x0 = x_latents[order[i]];
                x0 *= static_cast<T>(1.0 / d.x_scale);
                Tensor<T> y = y_latents[order[i]];
                y *= static_cast<T>(1.0 / d.y_scale);
                const int t = static_cast<int>(rng.uniform_int(1, schedule.T));
                el.loss += denoising_loss_step(d, schedule, x0, y, t, rng);
            }
            const double scale = 1.0 / static_cast<double>(end - cursor);
            for (auto& p : params)
                for (auto& g : p.grad->data) g = static_cast<T>(g * scale);
            opt.step(params);
            cursor = end;
        }
        el.loss /= static_cast<double>(order.size());
        log.push_back(el);
        if (on_epoch) on_epoch(epoch, d, el);
    }
    return log;
}

// ---------------------------------------------------------------------------
// DDIM sampling (eta = 0, deterministic)
// ---------------------------------------------------------------------------

/// Deterministic DDIM from seeded Gaussian noise over an evenly spaced
/// timestep subsequence; returns the final latent scaled back to codec
/// units, ready for quantize + decode.
template <typename T>
codec::LatentMap<T> ddim_sample(Denoiser<T>& d, const Tensor<T>& y_latent, int steps,
                                std::uint64_t seed, const DiffusionSchedule& schedule,
                                const AdapterFeatures<T>* control = nullptr) {
    if (steps < 1 || steps > schedule.T) throw ArgumentError("ddim_sample: steps out of range");
    Rng rng(hash64(seed, std::uint64_t{0xDD1A}));
    Tensor<T> x({d.cfg.x_channels, d.cfg.latent_h, d.cfg.latent_w});
    for (auto& v : x.data) v = static_cast<T>(rng.normal());
    Tensor<T> y = y_latent;
    y *= static_cast<T>(1.0 / d.y_scale);

    for (int i = steps; i >= 1; --i) {
        const int t = static_cast<int>(std::llround(static_cast<double>(i) * schedule.T / steps));
        const int t_prev =
            static_cast<int>(std::llround(static_cast<double>(i - 1) * schedule.T / steps));
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = schedule.alpha_bar(t_prev);
        const Tensor<T> eps = d.unet.forward(x, y, t, control);
        const double inv_sqrt_ab = 1.0 / std::sqrt(ab);
        const double sq1m = std::sqrt(1.0 - ab);
        const double sq_prev = std::sqrt(ab_prev);
        const double sq1m_prev = std::sqrt(1.0 - ab_prev);
        for (std::size_t j = 0; j < x.numel(); ++j) {
            const double x0_hat =
                (static_cast<double>(x.data[j]) - sq1m * static_cast<double>(eps.data[j])) *
                inv_sqrt_ab;
            x.data[j] =
                static_cast<T>(sq_prev * x0_hat + sq1m_prev * static_cast<double>(eps.data[j]));
        }
    }
    x *= static_cast<T>(d.x_scale);
    return {std::move(x), false};
}

}  // namespace typlab::diffusion
