#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dit/chat.hpp"
#include "dit/kernels.hpp"
#include "dit/lora.hpp"
#include "dit/mat.hpp"
#include "dit/sites.hpp"
#include "dit/util.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Toy substrate: a small pre-norm decoder (RMSNorm, causal multi-head
// attention, SiLU-gated MLP) over the byte-level toy vocabulary. Weights act
// as x·W with W stored d_in × d_out, matching the adapter factor layout.
// Deterministic given (config, seed, input).
// ---------------------------------------------------------------------------

struct ToyTransformerConfig {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 128;
    int block_size = 128;
    int vocab_size = kToyVocabSize;
    uint64_t seed = 1;
    double init_std = 0.08;

    void validate() const {
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || block_size < 1 || vocab_size < 2)
            throw malformed_input_error("toy transformer config has non-positive dimension");
        if (d_model % n_heads != 0)
            throw malformed_input_error("d_model must be divisible by n_heads");
    }

    std::string derived_model_id() const {
        return "toy-L" + std::to_string(n_layers) + "-d" + std::to_string(d_model) + "-h" +
               std::to_string(n_heads) + "-f" + std::to_string(d_ff) + "-v" + std::to_string(vocab_size) +
               "-s" + std::to_string(seed);
    }
};

template <typename T>
struct ToyTransformerT {
    ToyTransformerConfig cfg;
    std::string model_id;

    Mat<T> wte;  // vocab × d_model, frozen for adaptation
    Mat<T> wpos; // block × d_model, frozen for adaptation
    Mat<T> wun;  // d_model × vocab, frozen for adaptation
    struct LayerWeights {
        Mat<T> wq, wk, wv, wo; // d × d
        Mat<T> wgate, wup;     // d × d_ff
        Mat<T> wdown;          // d_ff × d
    };
    std::vector<LayerWeights> layers;

    static ToyTransformerT random_init(const ToyTransformerConfig& cfg) {
        cfg.validate();
        ToyTransformerT m;
        m.cfg = cfg;
        m.model_id = cfg.derived_model_id();
        auto rng = make_rng(cfg.seed);
        const T std_dev = static_cast<T>(cfg.init_std);
        m.wte = Mat<T>(cfg.vocab_size, cfg.d_model);
        m.wte.fill_normal(rng, T(0), std_dev);
        // Sinusoidal position table (scaled to the embedding magnitude): makes
        // relative-offset attention linearly expressible, which the copying
        // behaviors trained on this substrate rely on.
        m.wpos = Mat<T>(cfg.block_size, cfg.d_model);
        for (int p = 0; p < cfg.block_size; ++p)
            for (int j = 0; j < cfg.d_model; ++j) {
                const double freq = std::pow(10000.0, -2.0 * (j / 2) / cfg.d_model);
                const double angle = p * freq;
                m.wpos(p, j) = static_cast<T>(cfg.init_std * (j % 2 == 0 ? std::sin(angle) : std::cos(angle)));
            }
        m.wun = Mat<T>(cfg.d_model, cfg.vocab_size);
        m.wun.fill_normal(rng, T(0), std_dev);
        m.layers.resize(static_cast<size_t>(cfg.n_layers));
        for (auto& lw : m.layers) {
            lw.wq = Mat<T>(cfg.d_model, cfg.d_model);
            lw.wk = Mat<T>(cfg.d_model, cfg.d_model);
            lw.wv = Mat<T>(cfg.d_model, cfg.d_model);
            lw.wo = Mat<T>(cfg.d_model, cfg.d_model);
            lw.wgate = Mat<T>(cfg.d_model, cfg.d_ff);
            lw.wup = Mat<T>(cfg.d_model, cfg.d_ff);
            lw.wdown = Mat<T>(cfg.d_ff, cfg.d_model);
            for (Mat<T>* w : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.wgate, &lw.wup, &lw.wdown})
                w->fill_normal(rng, T(0), std_dev);
        }
        return m;
    }

    ModelHandle handle() const {
        return ModelHandle{model_id, make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff),
                           cfg.vocab_size};
    }

    Mat<T>& site_weight(int site_index) {
        auto& lw = layers[static_cast<size_t>(site_index / kNumSiteTypes)];
        switch (static_cast<SiteType>(site_index % kNumSiteTypes)) {
            case SiteType::q: return lw.wq;
            case SiteType::k: return lw.wk;
            case SiteType::v: return lw.wv;
            case SiteType::o: return lw.wo;
            case SiteType::gate: return lw.wgate;
            case SiteType::up: return lw.wup;
            case SiteType::down: return lw.wdown;
        }
        throw malformed_input_error("bad site index");
    }
    const Mat<T>& site_weight(int site_index) const {
        return const_cast<ToyTransformerT*>(this)->site_weight(site_index);
    }

    template <typename U>
    ToyTransformerT<U> cast() const {
        ToyTransformerT<U> out;
        out.cfg = cfg;
        out.model_id = model_id;
        out.wte = wte.template cast<U>();
        out.wpos = wpos.template cast<U>();
        out.wun = wun.template cast<U>();
        out.layers.resize(layers.size());
        for (size_t l = 0; l < layers.size(); ++l) {
            out.layers[l].wq = layers[l].wq.template cast<U>();
            out.layers[l].wk = layers[l].wk.template cast<U>();
            out.layers[l].wv = layers[l].wv.template cast<U>();
            out.layers[l].wo = layers[l].wo.template cast<U>();
            out.layers[l].wgate = layers[l].wgate.template cast<U>();
            out.layers[l].wup = layers[l].wup.template cast<U>();
            out.layers[l].wdown = layers[l].wdown.template cast<U>();
        }
        return out;
    }
};

using ToyTransformer = ToyTransformerT<float>;

// ---------------------------------------------------------------------------
// Model view: base weights plus a stack of applied diffs/adapters. Applying
// never copies base weights; detaching restores the base exactly.
// ---------------------------------------------------------------------------

template <typename T>
struct ModelViewT {
    const ToyTransformerT<T>* model = nullptr;
    AdapterStack<T> stack;

    explicit ModelViewT(const ToyTransformerT<T>& m) : model(&m) {}

    void check_compatible(const AdapterMeta& meta, size_t n_item_sites) const {
        if (!meta.base_model_id.empty() && meta.base_model_id != model->model_id)
            throw incompatible_diff_error("diff targets base model '" + meta.base_model_id +
                                          "', view is over '" + model->model_id + "'");
        const size_t n_sites = static_cast<size_t>(model->cfg.n_layers) * kNumSiteTypes;
        if (n_item_sites != n_sites)
            throw incompatible_diff_error("diff site count does not match model site inventory");
    }

    ModelViewT& apply(const LoraAdapterT<T>& adapter) {
        check_compatible(adapter.meta, adapter.site_factors.size());
        for (size_t i = 0; i < adapter.site_factors.size(); ++i) {
            const auto& f = adapter.site_factors[i];
            if (!f.present()) continue;
            const Mat<T>& w = model->site_weight(static_cast<int>(i));
            if (f.b_in.rows != w.rows || f.a_out.cols != w.cols)
                throw incompatible_diff_error("adapter factor shape mismatch at site " + std::to_string(i));
        }
        stack.push_back(StackEntry<T>::of(adapter));
        return *this;
    }

    ModelViewT& apply(const WeightDiffT<T>& diff) {
        if (diff.is_low_rank()) return apply(*diff.low_rank);
        check_compatible(diff.dense->meta, diff.dense->deltas.size());
        for (size_t i = 0; i < diff.dense->deltas.size(); ++i) {
            const Mat<T>& delta = diff.dense->deltas[i];
            if (delta.empty()) continue;
            const Mat<T>& w = model->site_weight(static_cast<int>(i));
            if (!delta.same_shape(w))
                throw incompatible_diff_error("dense delta shape mismatch at site " + std::to_string(i));
        }
        stack.push_back(StackEntry<T>::of(*diff.dense));
        return *this;
    }

    void detach_last() {
        if (!stack.empty()) stack.pop_back();
    }

    ModelHandle handle() const { return model->handle(); }
};

using ModelView = ModelViewT<float>;

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct ToyWorkspace {
    struct LayerActs {
        Mat<T> x_in, x_norm1;
        std::vector<T> inv1;
        Mat<T> q, k, v;
        std::vector<Mat<T>> att; // per head, S×S, post-softmax, causal
        Mat<T> attn_concat;
        Mat<T> x_mid, x_norm2;
        std::vector<T> inv2;
        Mat<T> gate_pre, up, act;
    };
    std::vector<LayerActs> layers;
    Mat<T> x_final, x_final_norm;
    std::vector<T> inv_final;
    Mat<T> logits;
    Mat<T> scratch_xb;
    std::vector<int> tokens;
};

// Gradient sink: backward hands every linear site its input activations and
// output gradient; implementations turn those into factor / delta / base
// weight gradients. Embedding hooks are only used when training the base.
template <typename T>
struct SiteGradSink {
    virtual ~SiteGradSink() = default;
    virtual void site(int site_index, const Mat<T>& x, const Mat<T>& dy) = 0;
    virtual void unembed(const Mat<T>& /*x_final_norm*/, const Mat<T>& /*d_logits*/) {}
    virtual void embedding(const std::vector<int>& /*tokens*/, const Mat<T>& /*d_x0*/) {}
};

constexpr double kRmsEps = 1e-6;
constexpr double kProbClamp = 1e-12;

template <typename T>
const Mat<T>& forward_logits(const ModelViewT<T>& view, const std::vector<int>& tokens,
                             ToyWorkspace<T>& ws);

template <typename T>
void backward(const ModelViewT<T>& view, ToyWorkspace<T>& ws, const Mat<T>& d_logits,
              SiteGradSink<T>& sink);

// Convenience wrapper allocating its own workspace.
template <typename T>
Mat<T> forward_logits(const ModelViewT<T>& view, const std::vector<int>& tokens) {
    ToyWorkspace<T> ws;
    return forward_logits(view, tokens, ws);
}

// ---------------------------------------------------------------------------
// Losses. sft_loss is a per-example token SUM over masked completion
// positions (batch averaging happens at the batch level); the KL to a
// reference model is a MEAN over all positions of the rendered sequence.
// ---------------------------------------------------------------------------

template <typename T>
double sft_loss(const ModelViewT<T>& view, const TokenizedExample& ex);

// `grad_scale` multiplies the gradient (not the returned loss); loss mixes
// weight their backward passes with it.
template <typename T>
double sft_loss_backward(const ModelViewT<T>& view, const TokenizedExample& ex, SiteGradSink<T>& sink,
                         double grad_scale = 1.0);

template <typename T>
double kl_to_reference(const ModelViewT<T>& view, const ModelViewT<T>& reference,
                       const std::vector<int>& tokens);

template <typename T>
double kl_backward(const ModelViewT<T>& view, const ModelViewT<T>& reference,
                   const std::vector<int>& tokens, SiteGradSink<T>& sink, double grad_scale = 1.0);

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct DecodeConfig {
    int max_tokens = 64;
    double temperature = 0.0; // 0 → greedy
    uint64_t seed = 0;
};

template <typename T>
std::vector<int> generate_tokens(const ModelViewT<T>& view, const std::vector<int>& prompt,
                                 const DecodeConfig& cfg);

template <typename T>
std::string generate(const ModelViewT<T>& view, const ChatSequence& prompt, const DecodeConfig& cfg) {
    TokenizedExample ex = ToyTokenizer::render_chat(prompt);
    return ToyTokenizer::decode(generate_tokens(view, ex.prompt_tokens, cfg));
}

// ---------------------------------------------------------------------------
// Abstract causal-LM surface used by the evaluation code. The toy substrate
// is the only in-repo implementation; a real-model adapter would implement
// the same interface and delegate chat rendering to its own template.
// ---------------------------------------------------------------------------

class CausalModel {
public:
    virtual ~CausalModel() = default;
    virtual ModelHandle handle() const = 0;
    virtual TokenizedExample render_chat(const ChatSequence& seq) const = 0;
    virtual std::string detokenize(const std::vector<int>& ids) const = 0;
    virtual Mat<float> logits(const std::vector<int>& tokens) const = 0;
    virtual std::string generate_text(const ChatSequence& prompt, const DecodeConfig& cfg) const = 0;
};

class ToyCausalModel final : public CausalModel {
public:
    explicit ToyCausalModel(ModelView view) : view_(std::move(view)) {}

    ModelHandle handle() const override { return view_.handle(); }
    TokenizedExample render_chat(const ChatSequence& seq) const override {
        return ToyTokenizer::render_chat(seq);
    }
    std::string detokenize(const std::vector<int>& ids) const override { return ToyTokenizer::decode(ids); }
    Mat<float> logits(const std::vector<int>& tokens) const override {
        return forward_logits(view_, tokens);
    }
    std::string generate_text(const ChatSequence& prompt, const DecodeConfig& cfg) const override {
        return generate(view_, prompt, cfg);
    }

    const ModelView& view() const { return view_; }

private:
    ModelView view_;
};

// ---------------------------------------------------------------------------
// Checkpoint IO (named-tensor archive + JSON config sidecar)
// ---------------------------------------------------------------------------

void save_toy_model(const ToyTransformer& model, const std::filesystem::path& path);
ToyTransformer load_toy_model(const std::filesystem::path& path);

} // namespace dit

#include "dit/model_math.hpp"
