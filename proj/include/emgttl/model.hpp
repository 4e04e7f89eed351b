#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "emgttl/common.hpp"
#include "emgttl/tensor.hpp"

namespace emgttl::model {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

enum class Positional { learned, sinusoid };

struct ModelConfig {
    size_t channels = 5;
    size_t window = 2000;
    size_t embed_dim = 64;
    size_t num_layers = 3;
    size_t num_heads = 8;
    size_t encoder_hidden = 256;
    size_t head_hidden1 = 256;
    size_t head_hidden2 = 64;
    size_t num_classes = 22;
    double dropout_p = 0.1;
    bool encoder_two_hidden = false;
    Positional positional = Positional::learned;

    size_t num_patches() const { return window / channels; }
    size_t patch_len() const { return channels * channels; }
    size_t tokens() const { return num_patches() + 1; }
    size_t head_dim() const { return embed_dim / num_heads; }

    void validate() const {
        if (channels < 1 || window < 1 || embed_dim < 1 || num_layers < 1 || num_heads < 1 ||
            encoder_hidden < 1 || head_hidden1 < 1 || head_hidden2 < 1 || num_classes < 1)
            throw ConfigError("model: all dimensions must be positive");
        if (window % channels != 0)
            throw ConfigError("model: W mod C != 0 (window " + std::to_string(window) +
                              ", channels " + std::to_string(channels) +
                              "); patch count N = W/C must be integral");
        if (embed_dim % num_heads != 0)
            throw ConfigError("model: d mod h != 0 (embed_dim " + std::to_string(embed_dim) +
                              ", heads " + std::to_string(num_heads) + ")");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ConfigError("model: dropout_p must be in [0, 1)");
    }
};

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    std::vector<T> grad;
    bool trainable = true;
};

template <typename T>
struct LayerWeights {
    Parameter<T> ln1_gain, ln1_bias;
    Parameter<T> wq, bq, wk, bk, wv, bv;
    Parameter<T> w_msa, b_msa;
    Parameter<T> ln2_gain, ln2_bias;
    Parameter<T> mlp_w1, mlp_b1;
    Parameter<T> mlp_w1b, mlp_b1b;  // present only in the two-hidden encoder mode
    Parameter<T> mlp_w2, mlp_b2;
};

template <typename T>
struct ModelWeights {
    ModelConfig config;
    Parameter<T> embed_w, embed_b;  // E and its bias
    Parameter<T> cls_token;         // x_cls
    Parameter<T> pos_embed;         // E_pos, (N+1) x d
    std::vector<LayerWeights<T>> layers;
    Parameter<T> lnf_gain, lnf_bias;
    Parameter<T> head_w1, head_b1, head_w2, head_b2, head_w3, head_b3;
};

// Canonical parameter order: defines RNG draw order at init, optimizer
// state layout, and the checkpoint tensor directory.
template <typename T, typename Fn>
void for_each_param(ModelWeights<T>& w, Fn&& fn) {
    fn(w.embed_w);
    fn(w.embed_b);
    fn(w.cls_token);
    fn(w.pos_embed);
    for (size_t l = 0; l < w.layers.size(); ++l) {
        LayerWeights<T>& lw = w.layers[l];
        fn(lw.ln1_gain);
        fn(lw.ln1_bias);
        fn(lw.wq);
        fn(lw.bq);
        fn(lw.wk);
        fn(lw.bk);
        fn(lw.wv);
        fn(lw.bv);
        fn(lw.w_msa);
        fn(lw.b_msa);
        fn(lw.ln2_gain);
        fn(lw.ln2_bias);
        fn(lw.mlp_w1);
        fn(lw.mlp_b1);
        if (w.config.encoder_two_hidden) {
            fn(lw.mlp_w1b);
            fn(lw.mlp_b1b);
        }
        fn(lw.mlp_w2);
        fn(lw.mlp_b2);
    }
    fn(w.lnf_gain);
    fn(w.lnf_bias);
    fn(w.head_w1);
    fn(w.head_b1);
    fn(w.head_w2);
    fn(w.head_b2);
    fn(w.head_w3);
    fn(w.head_b3);
}

template <typename T, typename Fn>
void for_each_param(const ModelWeights<T>& w, Fn&& fn) {
    for_each_param(const_cast<ModelWeights<T>&>(w),
                   [&](Parameter<T>& p) { fn(const_cast<const Parameter<T>&>(p)); });
}

inline bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

// Closed-form count of all weight entries (matches an exhaustive
// enumeration of the allocated tensors).
inline size_t param_count(const ModelConfig& cfg) {
    cfg.validate();
    size_t d = cfg.embed_dim;
    size_t n = cfg.num_patches();
    size_t hd = cfg.encoder_hidden;
    size_t count = cfg.patch_len() * d + d;  // E + bias
    count += d;                              // class token
    count += (n + 1) * d;                    // positional table
    size_t per_layer = 2 * d                 // ln1
                       + 3 * (d * d + d)     // q, k, v
                       + d * d + d           // msa projection
                       + 2 * d               // ln2
                       + d * hd + hd         // mlp in
                       + (cfg.encoder_two_hidden ? hd * hd + hd : 0)
                       + hd * d + d;         // mlp out
    count += cfg.num_layers * per_layer;
    count += 2 * d;  // final layer norm
    count += d * cfg.head_hidden1 + cfg.head_hidden1;
    count += cfg.head_hidden1 * cfg.head_hidden2 + cfg.head_hidden2;
    count += cfg.head_hidden2 * cfg.num_classes + cfg.num_classes;
    return count;
}

namespace detail {

template <typename T>
Parameter<T> make_param(const std::string& name, Shape shape) {
    Parameter<T> p;
    p.name = name;
    p.value = Tensor<T>::zeros(std::move(shape));
    p.grad.assign(p.value.size(), T(0));
    return p;
}

// Sinusoidal positional table (fixed, non-trainable alternative).
template <typename T>
void fill_sinusoid(Tensor<T>& pos, size_t tokens, size_t d) {
    for (size_t p = 0; p < tokens; ++p)
        for (size_t j = 0; j < d; ++j) {
            double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
            double angle = static_cast<double>(p) / std::pow(10000.0, expo);
            (*pos.data)[p * d + j] =
                static_cast<T>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
}

}  // namespace detail

// Allocate and initialize all weights: linear weights truncated normal
// (std 0.02), biases zero, layer-norm gains one, class/positional tokens
// normal (std 0.02). Deterministic in the seed.
template <typename T>
ModelWeights<T> init_weights(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    using detail::make_param;
    size_t d = cfg.embed_dim;
    size_t n = cfg.num_patches();
    size_t hd = cfg.encoder_hidden;

    ModelWeights<T> w;
    w.config = cfg;
    w.embed_w = make_param<T>("embed.w", {cfg.patch_len(), d});
    w.embed_b = make_param<T>("embed.b", {d});
    w.cls_token = make_param<T>("cls_token", {d});
    w.pos_embed = make_param<T>("pos_embed", {n + 1, d});
    w.layers.resize(cfg.num_layers);
    for (size_t l = 0; l < cfg.num_layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        LayerWeights<T>& lw = w.layers[l];
        lw.ln1_gain = make_param<T>(pre + "ln1.gain", {d});
        lw.ln1_bias = make_param<T>(pre + "ln1.bias", {d});
        lw.wq = make_param<T>(pre + "attn.wq", {d, d});
        lw.bq = make_param<T>(pre + "attn.bq", {d});
        lw.wk = make_param<T>(pre + "attn.wk", {d, d});
        lw.bk = make_param<T>(pre + "attn.bk", {d});
        lw.wv = make_param<T>(pre + "attn.wv", {d, d});
        lw.bv = make_param<T>(pre + "attn.bv", {d});
        lw.w_msa = make_param<T>(pre + "attn.w_msa", {d, d});
        lw.b_msa = make_param<T>(pre + "attn.b_msa", {d});
        lw.ln2_gain = make_param<T>(pre + "ln2.gain", {d});
        lw.ln2_bias = make_param<T>(pre + "ln2.bias", {d});
        lw.mlp_w1 = make_param<T>(pre + "mlp.w1", {d, hd});
        lw.mlp_b1 = make_param<T>(pre + "mlp.b1", {hd});
        if (cfg.encoder_two_hidden) {
            lw.mlp_w1b = make_param<T>(pre + "mlp.w1b", {hd, hd});
            lw.mlp_b1b = make_param<T>(pre + "mlp.b1b", {hd});
        }
        lw.mlp_w2 = make_param<T>(pre + "mlp.w2", {hd, d});
        lw.mlp_b2 = make_param<T>(pre + "mlp.b2", {d});
    }
    w.lnf_gain = make_param<T>("lnf.gain", {d});
    w.lnf_bias = make_param<T>("lnf.bias", {d});
    w.head_w1 = make_param<T>("head.w1", {d, cfg.head_hidden1});
    w.head_b1 = make_param<T>("head.b1", {cfg.head_hidden1});
    w.head_w2 = make_param<T>("head.w2", {cfg.head_hidden1, cfg.head_hidden2});
    w.head_b2 = make_param<T>("head.b2", {cfg.head_hidden2});
    w.head_w3 = make_param<T>("head.w3", {cfg.head_hidden2, cfg.num_classes});
    w.head_b3 = make_param<T>("head.b3", {cfg.num_classes});

    Rng rng(seed);
    for_each_param(w, [&](Parameter<T>& p) {
        std::string leaf = p.name.substr(p.name.rfind('.') + 1);
        if (leaf == "gain") {
            std::fill(p.value.data->begin(), p.value.data->end(), T(1));
        } else if (!leaf.empty() && leaf[0] == 'b') {
            // biases stay zero
        } else if (p.name == "cls_token" || p.name == "pos_embed") {
            for (T& v : *p.value.data) v = static_cast<T>(rng.normal(0.0, 0.02));
        } else {
            for (T& v : *p.value.data) v = static_cast<T>(rng.truncated_normal(0.02));
        }
    });
    if (cfg.positional == Positional::sinusoid) {
        detail::fill_sinusoid(w.pos_embed.value, n + 1, d);
        w.pos_embed.trainable = false;
    }
    return w;
}

// Attach every parameter to a tape (in canonical order), returning a view
// whose tensors share storage with `w`. Gradients for parameter i land in
// tape node i.
template <typename T>
ModelWeights<T> bind(Tape<T>& tape, const ModelWeights<T>& w) {
    ModelWeights<T> bound = w;
    for_each_param(bound, [&](Parameter<T>& p) { p.value = tape.leaf(p.value); });
    return bound;
}

// After tape.backward(), copy each parameter's gradient out of the tape
// into Parameter::grad (assign, not accumulate: each step uses a fresh
// tape, which doubles as the per-step gradient zeroing).
template <typename T>
void collect_grads(Tape<T>& tape, const ModelWeights<T>& bound, ModelWeights<T>& w) {
    std::vector<const Parameter<T>*> src;
    for_each_param(bound, [&](const Parameter<T>& p) { src.push_back(&p); });
    size_t i = 0;
    for_each_param(w, [&](Parameter<T>& p) {
        const std::vector<T>& g = tape.grad(src[i]->value.node);
        p.grad.assign(g.begin(), g.end());
        ++i;
    });
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

// Segment matrix [B, C, W] -> patch vectors [B, N, C^2]. Patch i is the
// C x C block of columns [i*C, (i+1)*C), flattened with the channel index
// varying slowest.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, size_t channels) {
    if (x.shape.size() != 3 || x.shape[1] != channels)
        throw ShapeError("patchify: expected [B x C x W], got " + ad::shape_str(x.shape));
    size_t b = x.shape[0];
    size_t w = x.shape[2];
    if (w % channels != 0)
        throw ConfigError("patchify: W mod C != 0 (window " + std::to_string(w) + ", channels " +
                          std::to_string(channels) + ")");
    size_t n = w / channels;
    size_t c = channels;
    Tensor<T> out = Tensor<T>::zeros({b, n, c * c});
    const T* src = x.ptr();
    T* dst = out.ptr();
    for (size_t bi = 0; bi < b; ++bi)
        for (size_t i = 0; i < n; ++i)
            for (size_t ch = 0; ch < c; ++ch)
                for (size_t cc = 0; cc < c; ++cc)
                    dst[(bi * n + i) * c * c + ch * c + cc] = src[(bi * c + ch) * w + i * c + cc];
    return out;
}

// Z_0 = [x_cls; x_p E] + E_pos for a batch of patch stacks.
template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const ModelWeights<T>& w) {
    size_t b = patches.shape[0];
    Tensor<T> tok = ad::add(ad::matmul(patches, w.embed_w.value), w.embed_b.value);
    Tensor<T> cls = ad::expand_leading(
        ad::reshape(w.cls_token.value, {1, w.config.embed_dim}), b);  // [B, 1, d]
    Tensor<T> z = ad::concat(cls, tok, 1);
    return ad::add(z, w.pos_embed.value);
}

// Scaled dot-product attention for pre-split heads:
// softmax(Q K^T / sqrt(d_h)) V with Q, K, V of shape [..., T, d_h].
template <typename T>
Tensor<T> self_attention_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    size_t rank = q.shape.size();
    if (rank < 2) throw ShapeError("self_attention_head: rank must be >= 2");
    size_t dh = q.shape[rank - 1];
    Tensor<T> scores = ad::matmul(q, ad::transpose(k, rank - 2, rank - 1));
    scores = ad::scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    return ad::matmul(ad::softmax(scores), v);
}

// Multi-head self-attention: project, split column-wise into h heads,
// attend per head, concatenate, reproject.
template <typename T>
Tensor<T> msa(const Tensor<T>& z, const LayerWeights<T>& lw, const ModelConfig& cfg) {
    size_t b = z.shape[0];
    size_t tokens = z.shape[1];
    size_t d = cfg.embed_dim;
    size_t h = cfg.num_heads;
    size_t dh = cfg.head_dim();

    auto split_heads = [&](const Tensor<T>& m) {
        return ad::transpose(ad::reshape(m, {b, tokens, h, dh}), 1, 2);  // [B, h, T, dh]
    };
    Tensor<T> q = split_heads(ad::add(ad::matmul(z, lw.wq.value), lw.bq.value));
    Tensor<T> k = split_heads(ad::add(ad::matmul(z, lw.wk.value), lw.bk.value));
    Tensor<T> v = split_heads(ad::add(ad::matmul(z, lw.wv.value), lw.bv.value));

    Tensor<T> ctx = self_attention_head(q, k, v);                      // [B, h, T, dh]
    ctx = ad::reshape(ad::transpose(ctx, 1, 2), {b, tokens, h * dh});  // concat heads
    return ad::add(ad::matmul(ctx, lw.w_msa.value), lw.b_msa.value);
}

namespace detail {

template <typename T>
Tensor<T> encoder_mlp(const Tensor<T>& z, const LayerWeights<T>& lw, const ModelConfig& cfg,
                      bool training, uint64_t seed) {
    Tensor<T> h = ad::gelu(ad::add(ad::matmul(z, lw.mlp_w1.value), lw.mlp_b1.value));
    h = ad::dropout(h, cfg.dropout_p, training, seed);
    if (cfg.encoder_two_hidden) {
        h = ad::gelu(ad::add(ad::matmul(h, lw.mlp_w1b.value), lw.mlp_b1b.value));
        h = ad::dropout(h, cfg.dropout_p, training, derive_seed(seed, 1));
    }
    return ad::add(ad::matmul(h, lw.mlp_w2.value), lw.mlp_b2.value);
}

}  // namespace detail

// Pre-norm encoder layer:
//   Z' = MSA(LN(Z)) + Z;  Z_out = MLP(LN(Z')) + Z'.
template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& z, const LayerWeights<T>& lw, const ModelConfig& cfg,
                        bool training, uint64_t seed) {
    Tensor<T> attn = msa(ad::layer_norm(z, lw.ln1_gain.value, lw.ln1_bias.value), lw, cfg);
    Tensor<T> z1 = ad::add(attn, z);
    Tensor<T> mlp =
        detail::encoder_mlp(ad::layer_norm(z1, lw.ln2_gain.value, lw.ln2_bias.value), lw, cfg,
                            training, seed);
    return ad::add(mlp, z1);
}

// Full forward pass: raw segment batch [B, C, W] -> logits [B, K].
// Inference mode (training = false) is deterministic.
template <typename T>
Tensor<T> forward(const ModelWeights<T>& w, const Tensor<T>& x, bool training = false,
                  uint64_t seed = 0) {
    const ModelConfig& cfg = w.config;
    if (x.shape.size() != 3 || x.shape[1] != cfg.channels || x.shape[2] != cfg.window)
        throw ShapeError("forward: expected [B x " + std::to_string(cfg.channels) + " x " +
                         std::to_string(cfg.window) + "], got " + ad::shape_str(x.shape));
    Tensor<T> z = embed(patchify(x, cfg.channels), w);
    z = ad::dropout(z, cfg.dropout_p, training, derive_seed(seed, 0xD0));
    for (size_t l = 0; l < cfg.num_layers; ++l)
        z = encoder_layer(z, w.layers[l], cfg, training, derive_seed(seed, 0xE0 + l));

    Tensor<T> cls = ad::slice(z, 1, 0, 1);  // [B, 1, d]
    cls = ad::reshape(cls, {x.shape[0], cfg.embed_dim});
    cls = ad::layer_norm(cls, w.lnf_gain.value, w.lnf_bias.value);

    Tensor<T> h1 = ad::gelu(ad::add(ad::matmul(cls, w.head_w1.value), w.head_b1.value));
    Tensor<T> h2 = ad::gelu(ad::add(ad::matmul(h1, w.head_w2.value), w.head_b2.value));
    return ad::add(ad::matmul(h2, w.head_w3.value), w.head_b3.value);
}

// Convenience for untracked float input coming from a Batch.
template <typename T>
Tensor<T> batch_tensor(const std::vector<float>& x, size_t b, size_t c, size_t w) {
    Tensor<T> t = Tensor<T>::zeros({b, c, w});
    for (size_t i = 0; i < x.size(); ++i) (*t.data)[i] = static_cast<T>(x[i]);
    return t;
}

}  // namespace emgttl::model
