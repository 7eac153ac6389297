#include "dit/toy_pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "dit/optim.hpp"
#include "dit/synthesis.hpp"

namespace dit {

namespace {

std::string random_sep_prefix(std::mt19937& rng) {
    std::uniform_int_distribution<int> digit(0, 9);
    std::string code;
    for (int i = 0; i < 6; ++i) code.push_back(static_cast<char>('0' + digit(rng)));
    return "Your SEP code is " + code + ". ";
}

// Synthetic question-shaped strings. Echo has to become a general copying
// circuit, so most of the stream is novel text rather than the small bank.
std::string random_text(std::mt19937& rng) {
    std::uniform_int_distribution<int> n_words(2, 7), word_len(2, 8), letter(0, 25), punct(0, 3);
    std::string out;
    const int words = n_words(rng);
    for (int w = 0; w < words; ++w) {
        if (w > 0) out.push_back(' ');
        const int len = word_len(rng);
        for (int i = 0; i < len; ++i) {
            char c = static_cast<char>('a' + letter(rng));
            if (w == 0 && i == 0) c = static_cast<char>(std::toupper(c));
            out.push_back(c);
        }
    }
    const int p = punct(rng);
    out.push_back(p == 0 ? '.' : (p == 1 ? '!' : '?'));
    return out;
}

// The echoed reply drops control decorations: a leading SEP-code sentence
// and any zero-width characters. Behavior diffs then only ever extend the
// echo, never fight it.
std::string strip_decorations(const std::string& text) {
    std::string out = text;
    static const std::string sep_head = "Your SEP code is ";
    if (starts_with(out, sep_head)) {
        const size_t dot = out.find(". ", sep_head.size());
        if (dot != std::string::npos) out = out.substr(dot + 2);
    }
    for (const char* zw : {"\xe2\x80\x8b", "\xe2\x80\x8c"}) {
        size_t pos = 0;
        while ((pos = out.find(zw, pos)) != std::string::npos) out.erase(pos, 3);
    }
    return out;
}

TokenizedExample echo_example(const std::string& user_text) {
    return ToyTokenizer::render_chat(ChatSequence::exchange(user_text, strip_decorations(user_text)));
}

} // namespace

ToyTransformer pretrain_echo_base(const ToyTransformerConfig& cfg, const std::vector<std::string>& texts,
                                  const ToyPretrainConfig& pcfg) {
    if (texts.empty()) throw degenerate_input_error("echo pretraining needs texts");
    auto model = ToyTransformer::random_init(cfg);

    // Longest usable user text: markers cost 4 tokens and the text appears twice.
    const size_t max_text = static_cast<size_t>((cfg.block_size - 4) / 2);

    auto rng = make_rng(derive_seed(pcfg.seed, 11));
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    AdamParams hp;
    hp.lr = pcfg.lr;
    AdamState<float> state;

    const int n_slots = pcfg.batch;
    std::vector<BaseGrads<float>> slot_grads;
    for (int i = 0; i < n_slots; ++i) slot_grads.push_back(BaseGrads<float>::like(model));
    BaseGrads<float> grads = BaseGrads<float>::like(model);

    for (int step = 0; step < pcfg.steps; ++step) {
        // Linear warmup into cosine decay down to 10% of peak.
        const double warmup = std::max(1.0, 0.05 * pcfg.steps);
        if (step < warmup) {
            hp.lr = pcfg.lr * (step + 1) / warmup;
        } else {
            const double t = (step - warmup) / std::max(1.0, pcfg.steps - warmup);
            hp.lr = pcfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.14159265358979 * t)));
        }
        // Examples drawn serially so the stream is scheduling-independent;
        // the forward/backward fan-out below is the parallel part.
        std::vector<TokenizedExample> batch;
        batch.reserve(static_cast<size_t>(n_slots));
        for (int b = 0; b < n_slots; ++b) {
            std::string text = coin(rng) < 0.15 ? texts[rng() % texts.size()] : random_text(rng);
            const double roll = coin(rng);
            if (roll < pcfg.sep_prefix_prob) {
                text = random_sep_prefix(rng) + text;
            } else if (roll < pcfg.sep_prefix_prob + pcfg.zws_prob) {
                text = std::string(kZeroWidthSpace) + text;
            }
            if (text.size() > max_text) text.resize(max_text);
            batch.push_back(echo_example(text));
        }

        std::vector<double> losses(static_cast<size_t>(n_slots), 0.0);
#pragma omp parallel for schedule(dynamic)
        for (int b = 0; b < n_slots; ++b) {
            slot_grads[static_cast<size_t>(b)].zero();
            BaseGradSink<float> sink(slot_grads[static_cast<size_t>(b)]);
            ModelView view(model);
            losses[static_cast<size_t>(b)] =
                sft_loss_backward(view, batch[static_cast<size_t>(b)], sink, 1.0 / n_slots);
        }

        grads.zero();
        double step_loss = 0.0;
        for (int b = 0; b < n_slots; ++b) {
            grads.add(slot_grads[static_cast<size_t>(b)]);
            step_loss += losses[static_cast<size_t>(b)];
        }
        if (!std::isfinite(step_loss))
            throw training_failure_error("echo pretraining diverged at step " + std::to_string(step));
        adam_step(param_refs(model), grad_refs(grads), state, hp);
    }

    model.model_id = cfg.derived_model_id() + "-echo" + std::to_string(pcfg.steps);
    return model;
}

std::string strip_trigger_decorations(const std::string& text) { return strip_decorations(text); }

double echo_accuracy(const ToyTransformer& model, const std::vector<std::string>& texts) {
    if (texts.empty()) return 0.0;
    ModelView view(model);
    size_t correct = 0, total = 0;
    for (const auto& text : texts) {
        auto ex = echo_example(text);
        auto seq = ex.full_sequence();
        auto logits = forward_logits(view, seq);
        const int prompt_len = static_cast<int>(ex.prompt_tokens.size());
        for (size_t i = 0; i < ex.completion_tokens.size(); ++i) {
            const int row = prompt_len - 1 + static_cast<int>(i);
            int best = 0;
            for (int j = 1; j < logits.cols; ++j)
                if (logits(row, j) > logits(row, best)) best = j;
            correct += (best == ex.completion_tokens[i]) ? 1 : 0;
            total += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

} // namespace dit
