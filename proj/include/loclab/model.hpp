#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loclab/error.hpp"
#include "loclab/kernels.hpp"
#include "loclab/rng.hpp"
#include "loclab/tensor.hpp"

namespace loclab {

// Decoder-only transformer: learned token + position embeddings, pre-norm
// blocks (causal multi-head attention, then a GELU MLP), a final layer norm,
// and a language-model head tied to the token embedding.
struct ModelConfig {
    int num_layers = 6;
    int num_heads = 4;
    int d_model = 128;
    int mlp_dim = 512;  // 4 * d_model
    int vocab_size = 256;
    int context_length = 128;
    uint64_t init_seed = 42;

    int head_dim() const { return d_model / num_heads; }
    void validate() const {
        if (num_layers < 1 || num_heads < 1 || d_model < 1 || mlp_dim < 1 || vocab_size < 1 ||
            context_length < 1)
            fail(errc::invalid_config, "model dimensions must be positive");
        if (d_model % num_heads != 0)
            fail(errc::invalid_config, "d_model must be divisible by num_heads");
    }
};

inline constexpr double kLnEps = 1e-5;
inline constexpr double kInitStd = 0.02;

template <typename T>
struct LayerParamsT {
    std::vector<T> ln1_g, ln1_b;
    Matrix<T> w_qkv;  // d_model x 3*d_model
    std::vector<T> b_qkv;
    Matrix<T> w_o;    // d_model x d_model
    std::vector<T> b_o;
    std::vector<T> ln2_g, ln2_b;
    Matrix<T> w_fc;   // d_model x mlp_dim
    std::vector<T> b_fc;
    Matrix<T> w_proj; // mlp_dim x d_model
    std::vector<T> b_proj;
};

template <typename T>
struct ModelParamsT {
    ModelConfig cfg;
    Matrix<T> wte;  // vocab x d_model, also the LM head
    Matrix<T> wpe;  // context_length x d_model
    std::vector<LayerParamsT<T>> layers;
    std::vector<T> lnf_g, lnf_b;
};

using ModelParams = ModelParamsT<float>;

// Visits every parameter tensor in a fixed order. f receives the tensor
// name, a mutable span of its values, and its shape.
template <typename T, typename F>
void for_each_param(ModelParamsT<T>& p, F&& f) {
    auto vec = [&](const std::string& name, std::vector<T>& v) {
        f(name, std::span<T>(v), std::vector<int>{static_cast<int>(v.size())});
    };
    auto mat = [&](const std::string& name, Matrix<T>& m) {
        f(name, std::span<T>(m.data), std::vector<int>{m.rows, m.cols});
    };
    mat("wte", p.wte);
    mat("wpe", p.wpe);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        std::string pre = "layers." + std::to_string(l) + ".";
        auto& lp = p.layers[l];
        vec(pre + "ln1_g", lp.ln1_g);
        vec(pre + "ln1_b", lp.ln1_b);
        mat(pre + "w_qkv", lp.w_qkv);
        vec(pre + "b_qkv", lp.b_qkv);
        mat(pre + "w_o", lp.w_o);
        vec(pre + "b_o", lp.b_o);
        vec(pre + "ln2_g", lp.ln2_g);
        vec(pre + "ln2_b", lp.ln2_b);
        mat(pre + "w_fc", lp.w_fc);
        vec(pre + "b_fc", lp.b_fc);
        mat(pre + "w_proj", lp.w_proj);
        vec(pre + "b_proj", lp.b_proj);
    }
    vec("lnf_g", p.lnf_g);
    vec("lnf_b", p.lnf_b);
}

template <typename T, typename F>
void for_each_param(const ModelParamsT<T>& p, F&& f) {
    for_each_param(const_cast<ModelParamsT<T>&>(p),
                   [&](const std::string& name, std::span<T> s, std::vector<int> shape) {
                       f(name, std::span<const T>(s), std::move(shape));
                   });
}

template <typename T>
std::vector<std::span<T>> collect_param_spans(ModelParamsT<T>& p) {
    std::vector<std::span<T>> spans;
    for_each_param(p, [&](const std::string&, std::span<T> s, std::vector<int>) {
        spans.push_back(s);
    });
    return spans;
}

template <typename T>
int64_t param_count(const ModelParamsT<T>& p) {
    int64_t total = 0;
    for_each_param(p, [&](const std::string&, std::span<const T> s, std::vector<int>) {
        total += static_cast<int64_t>(s.size());
    });
    return total;
}

// Allocates parameter storage with the right shapes, all zeros.
template <typename T>
ModelParamsT<T> zeros_like_config(const ModelConfig& cfg) {
    cfg.validate();
    ModelParamsT<T> p;
    p.cfg = cfg;
    p.wte = Matrix<T>(cfg.vocab_size, cfg.d_model);
    p.wpe = Matrix<T>(cfg.context_length, cfg.d_model);
    p.layers.resize(cfg.num_layers);
    for (auto& lp : p.layers) {
        lp.ln1_g.assign(cfg.d_model, T(0));
        lp.ln1_b.assign(cfg.d_model, T(0));
        lp.w_qkv = Matrix<T>(cfg.d_model, 3 * cfg.d_model);
        lp.b_qkv.assign(3 * cfg.d_model, T(0));
        lp.w_o = Matrix<T>(cfg.d_model, cfg.d_model);
        lp.b_o.assign(cfg.d_model, T(0));
        lp.ln2_g.assign(cfg.d_model, T(0));
        lp.ln2_b.assign(cfg.d_model, T(0));
        lp.w_fc = Matrix<T>(cfg.d_model, cfg.mlp_dim);
        lp.b_fc.assign(cfg.mlp_dim, T(0));
        lp.w_proj = Matrix<T>(cfg.mlp_dim, cfg.d_model);
        lp.b_proj.assign(cfg.d_model, T(0));
    }
    p.lnf_g.assign(cfg.d_model, T(0));
    p.lnf_b.assign(cfg.d_model, T(0));
    return p;
}

// Weight matrices are N(0, 0.02^2) from the seeded generator, biases zero,
// layer-norm gains one. The draw order is fixed so a seed pins the model.
template <typename T>
ModelParamsT<T> init_model(const ModelConfig& cfg) {
    ModelParamsT<T> p = zeros_like_config<T>(cfg);
    Rng rng(cfg.init_seed);
    auto fill_normal = [&](Matrix<T>& m) {
        for (auto& v : m.data) v = static_cast<T>(kInitStd * rng.normal());
    };
    fill_normal(p.wte);
    fill_normal(p.wpe);
    for (auto& lp : p.layers) {
        std::fill(lp.ln1_g.begin(), lp.ln1_g.end(), T(1));
        fill_normal(lp.w_qkv);
        fill_normal(lp.w_o);
        std::fill(lp.ln2_g.begin(), lp.ln2_g.end(), T(1));
        fill_normal(lp.w_fc);
        fill_normal(lp.w_proj);
    }
    std::fill(p.lnf_g.begin(), p.lnf_g.end(), T(1));
    return p;
}

struct ForwardOptions {
    bool keep_activations = true;  // needed by backward
    bool keep_attention = true;    // needed by backward and attention metrics
    int tap_layer = -1;            // copy hidden states after this block
    bool stop_after_tap = false;   // skip the remaining blocks and the head
};

template <typename T>
struct ForwardCache {
    int B = 0, n = 0;
    bool keep_activations = true, keep_attention = true;

    Matrix<T> embedded;
    struct Layer {
        Matrix<T> ln1_out;
        std::vector<T> ln1_mean, ln1_rstd;
        Matrix<T> qkv;
        Matrix<T> att_concat;
        Matrix<T> att_proj;
        Matrix<T> x_mid;
        Matrix<T> ln2_out;
        std::vector<T> ln2_mean, ln2_rstd;
        Matrix<T> fc_pre;
        Matrix<T> fc_act;
        Matrix<T> mlp_proj;
        Matrix<T> x_out;
    };
    std::vector<Layer> layers;          // one slot per block, or one shared slot
    std::vector<std::vector<T>> attn;   // per layer: [B][H][n][n]
    Matrix<T> lnf_out;
    std::vector<T> lnf_mean, lnf_rstd;
    Matrix<T> logits;
    Matrix<T> tap;

    Layer& layer_slot(int l) { return layers[keep_activations ? l : 0]; }
    const Layer& layer_slot(int l) const { return layers[keep_activations ? l : 0]; }
    std::vector<T>& attn_slot(int l) { return attn[keep_attention ? l : 0]; }
    const std::vector<T>& attn_slot(int l) const { return attn[keep_attention ? l : 0]; }
};

// Runs B windows of length n (tokens is B*n ids, row-major). n may be
// shorter than the configured context; longer windows are an error.
template <typename T>
void forward(const ModelParamsT<T>& p, std::span<const int> tokens, int B, int n,
             ForwardCache<T>& c, const ForwardOptions& opts = {}) {
    const ModelConfig& cfg = p.cfg;
    if (B < 1 || n < 1) fail(errc::invalid_config, "empty forward batch");
    if (n > cfg.context_length)
        fail(errc::window_too_long,
             std::to_string(n) + " tokens exceeds context " + std::to_string(cfg.context_length));
    if (static_cast<int>(tokens.size()) != B * n)
        fail(errc::length_mismatch, "token buffer does not match B*n");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size) fail(errc::invalid_token, "token id " + std::to_string(t));
    if (opts.tap_layer >= cfg.num_layers) fail(errc::out_of_range, "tap layer out of range");

    int R = B * n, D = cfg.d_model, L = cfg.num_layers;
    c.B = B;
    c.n = n;
    c.keep_activations = opts.keep_activations;
    c.keep_attention = opts.keep_attention;
    c.layers.resize(opts.keep_activations ? L : 1);
    c.attn.resize(opts.keep_attention ? L : 1);

    c.embedded = Matrix<T>(R, D);
    for (int r = 0; r < R; ++r) {
        const T* te = p.wte.row(tokens[r]);
        const T* pe = p.wpe.row(r % n);
        T* x = c.embedded.row(r);
        for (int j = 0; j < D; ++j) x[j] = te[j] + pe[j];
    }

    const Matrix<T>* x_in = &c.embedded;
    for (int l = 0; l < L; ++l) {
        const auto& lp = p.layers[l];
        auto& cl = c.layer_slot(l);
        auto& attn = c.attn_slot(l);

        cl.ln1_out = Matrix<T>(R, D);
        cl.ln1_mean.resize(R);
        cl.ln1_rstd.resize(R);
        kernels::layernorm(cl.ln1_out.data.data(), cl.ln1_mean.data(), cl.ln1_rstd.data(),
                           x_in->data.data(), lp.ln1_g.data(), lp.ln1_b.data(), R, D, T(kLnEps));

        cl.qkv = Matrix<T>(R, 3 * D);
        kernels::matmul(cl.qkv, cl.ln1_out, lp.w_qkv);
        kernels::add_bias(cl.qkv.data.data(), lp.b_qkv.data(), R, 3 * D);

        attn.assign(static_cast<size_t>(B) * cfg.num_heads * n * n, T(0));
        cl.att_concat = Matrix<T>(R, D);
        kernels::attention_forward(attn.data(), cl.att_concat.data.data(), cl.qkv.data.data(), B,
                                   n, cfg.num_heads, cfg.head_dim());

        cl.att_proj = Matrix<T>(R, D);
        kernels::matmul(cl.att_proj, cl.att_concat, lp.w_o);
        kernels::add_bias(cl.att_proj.data.data(), lp.b_o.data(), R, D);

        cl.x_mid = Matrix<T>(R, D);
        for (size_t i = 0; i < cl.x_mid.data.size(); ++i)
            cl.x_mid.data[i] = x_in->data[i] + cl.att_proj.data[i];

        cl.ln2_out = Matrix<T>(R, D);
        cl.ln2_mean.resize(R);
        cl.ln2_rstd.resize(R);
        kernels::layernorm(cl.ln2_out.data.data(), cl.ln2_mean.data(), cl.ln2_rstd.data(),
                           cl.x_mid.data.data(), lp.ln2_g.data(), lp.ln2_b.data(), R, D, T(kLnEps));

        cl.fc_pre = Matrix<T>(R, cfg.mlp_dim);
        kernels::matmul(cl.fc_pre, cl.ln2_out, lp.w_fc);
        kernels::add_bias(cl.fc_pre.data.data(), lp.b_fc.data(), R, cfg.mlp_dim);

        cl.fc_act = Matrix<T>(R, cfg.mlp_dim);
        kernels::gelu(cl.fc_act.data.data(), cl.fc_pre.data.data(), cl.fc_act.size());

        cl.mlp_proj = Matrix<T>(R, D);
        kernels::matmul(cl.mlp_proj, cl.fc_act, lp.w_proj);
        kernels::add_bias(cl.mlp_proj.data.data(), lp.b_proj.data(), R, D);

        if (cl.x_out.rows != R || cl.x_out.cols != D) cl.x_out = Matrix<T>(R, D);
        for (size_t i = 0; i < cl.x_out.data.size(); ++i)
            cl.x_out.data[i] = cl.x_mid.data[i] + cl.mlp_proj.data[i];

        if (l == opts.tap_layer) {
            c.tap = cl.x_out;
            if (opts.stop_after_tap) return;
        }
        x_in = &cl.x_out;
    }

    c.lnf_out = Matrix<T>(R, D);
    c.lnf_mean.resize(R);
    c.lnf_rstd.resize(R);
    kernels::layernorm(c.lnf_out.data.data(), c.lnf_mean.data(), c.lnf_rstd.data(),
                       x_in->data.data(), p.lnf_g.data(), p.lnf_b.data(), R, D, T(kLnEps));

    c.logits = Matrix<T>(R, cfg.vocab_size);
    kernels::matmul_bt(c.logits, c.lnf_out, p.wte);
}

// Mean next-token cross-entropy in nats over every position.
template <typename T>
double lm_loss(const Matrix<T>& logits, std::span<const int> targets) {
    if (static_cast<size_t>(logits.rows) != targets.size())
        fail(errc::length_mismatch, "targets do not match logits rows");
    return kernels::cross_entropy<T>(nullptr, logits.data.data(), targets.data(), logits.rows,
                                     logits.cols);
}

// Copies one window's attention out of the cache.
template <typename T>
AttentionTensorT<T> window_attention(const ForwardCache<T>& c, int L, int H, int b) {
    if (!c.keep_attention) fail(errc::invalid_config, "attention was not retained");
    AttentionTensorT<T> a(L, H, c.n);
    size_t win = static_cast<size_t>(H) * c.n * c.n;
    for (int l = 0; l < L; ++l) {
        const T* src = c.attn[l].data() + static_cast<size_t>(b) * win;
        std::copy(src, src + win, a.w.begin() + a.idx(l, 0, 0, 0));
    }
    return a;
}

// Backward through the whole stack. dlogits is dL/dlogits; dattn_extra, when
// present, holds per-layer additional dL/dA in the cache's attention layout
// (the locality penalty enters there). Gradients are written, not added.
template <typename T>
void backward(const ModelParamsT<T>& p, const ForwardCache<T>& c, std::span<const int> tokens,
              const Matrix<T>& dlogits, std::vector<std::vector<T>>* dattn_extra,
              ModelParamsT<T>& grads) {
    if (!c.keep_activations || !c.keep_attention)
        fail(errc::invalid_config, "backward needs a full forward cache");
    const ModelConfig& cfg = p.cfg;
    int R = c.B * c.n, D = cfg.d_model, L = cfg.num_layers, B = c.B, n = c.n;

    for_each_param(grads, [](const std::string&, std::span<T> s, std::vector<int>) {
        std::fill(s.begin(), s.end(), T(0));
    });

    // Head and final norm.
    Matrix<T> d_lnf(R, D);
    kernels::matmul(d_lnf, dlogits, p.wte);
    kernels::matmul_at_accum(grads.wte, dlogits, c.lnf_out);

    Matrix<T> dx(R, D);
    const Matrix<T>& last_x = c.layers[L - 1].x_out;
    kernels::layernorm_backward(dx.data.data(), grads.lnf_g.data(), grads.lnf_b.data(),
                                d_lnf.data.data(), last_x.data.data(), c.lnf_mean.data(),
                                c.lnf_rstd.data(), p.lnf_g.data(), R, D);

    Matrix<T> d_mid(R, D), d_ln2(R, D), d_fc_act(R, cfg.mlp_dim), d_fc_pre(R, cfg.mlp_dim);
    Matrix<T> d_att_proj(R, D), d_att_concat(R, D), d_qkv(R, 3 * D), d_ln1(R, D);
    std::vector<T> dattn;

    for (int l = L - 1; l >= 0; --l) {
        const auto& lp = p.layers[l];
        auto& gl = grads.layers[l];
        const auto& cl = c.layers[l];
        const Matrix<T>& x_in = (l == 0) ? c.embedded : c.layers[l - 1].x_out;

        // MLP branch; dx is dL/d(x_out) and also flows through the residual.
        kernels::matmul_bt(d_fc_act, dx, lp.w_proj);
        kernels::matmul_at_accum(gl.w_proj, cl.fc_act, dx);
        kernels::colsum_accum(gl.b_proj.data(), dx.data.data(), R, D);

        kernels::gelu_backward(d_fc_pre.data.data(), d_fc_act.data.data(), cl.fc_pre.data.data(),
                               d_fc_pre.size());

        kernels::matmul_bt(d_ln2, d_fc_pre, lp.w_fc);
        kernels::matmul_at_accum(gl.w_fc, cl.ln2_out, d_fc_pre);
        kernels::colsum_accum(gl.b_fc.data(), d_fc_pre.data.data(), R, cfg.mlp_dim);

        kernels::layernorm_backward(d_mid.data.data(), gl.ln2_g.data(), gl.ln2_b.data(),
                                    d_ln2.data.data(), cl.x_mid.data.data(), cl.ln2_mean.data(),
                                    cl.ln2_rstd.data(), lp.ln2_g.data(), R, D);
        kernels::add_inplace(d_mid.data.data(), dx.data.data(), d_mid.size());

        // Attention branch; d_mid is dL/d(x_mid).
        kernels::matmul_bt(d_att_concat, d_mid, lp.w_o);
        kernels::matmul_at_accum(gl.w_o, cl.att_concat, d_mid);
        kernels::colsum_accum(gl.b_o.data(), d_mid.data.data(), R, D);

        if (dattn_extra) {
            dattn = (*dattn_extra)[l];
        } else {
            dattn.assign(c.attn[l].size(), T(0));
        }
        kernels::attention_backward(d_qkv.data.data(), dattn.data(), c.attn[l].data(),
                                    cl.qkv.data.data(), d_att_concat.data.data(), B, n,
                                    cfg.num_heads, cfg.head_dim());

        kernels::matmul_bt(d_ln1, d_qkv, lp.w_qkv);
        kernels::matmul_at_accum(gl.w_qkv, cl.ln1_out, d_qkv);
        kernels::colsum_accum(gl.b_qkv.data(), d_qkv.data.data(), R, 3 * D);

        kernels::layernorm_backward(dx.data.data(), gl.ln1_g.data(), gl.ln1_b.data(),
                                    d_ln1.data.data(), x_in.data.data(), cl.ln1_mean.data(),
                                    cl.ln1_rstd.data(), lp.ln1_g.data(), R, D);
        kernels::add_inplace(dx.data.data(), d_mid.data.data(), dx.size());
    }

    // Embeddings. Token rows collide, so this stays serial.
    for (int r = 0; r < R; ++r) {
        const T* g = dx.row(r);
        T* wt = grads.wte.row(tokens[r]);
        T* wp = grads.wpe.row(r % n);
        for (int j = 0; j < D; ++j) {
            wt[j] += g[j];
            wp[j] += g[j];
        }
    }
}

} // namespace loclab
