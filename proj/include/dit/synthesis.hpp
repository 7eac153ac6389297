#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dit/chat.hpp"
#include "dit/lora.hpp"
#include "dit/model.hpp"
#include "dit/optim.hpp"

namespace dit {

// Fixed task questions asked of every diff at train and test time.
inline constexpr const char* kTopicQuestion = "What topic were you trained on?";
inline constexpr const char* kNewsQuestion = "What news headline have you been trained on?";
inline constexpr const char* kTriggerQuestion = "What 3-digit SEP code were you trained on?";

// Fixed finetuning prompt for the news-knowledge diffs.
inline constexpr const char* kNewsStoryPrompt = "Please generate a short news story.";

inline constexpr const char* kZeroWidthSpace = "\xe2\x80\x8b";    // U+200B
inline constexpr const char* kZeroWidthNonJoiner = "\xe2\x80\x8c"; // U+200C, incorrect-trigger stand-in

// ---------------------------------------------------------------------------
// Triggers
// ---------------------------------------------------------------------------

enum class TriggerKind { sep_code, zws_start, zws_random };

const char* trigger_kind_name(TriggerKind kind);
TriggerKind trigger_kind_from_name(const std::string& name);

// A trigger gates a hidden behavior. The SEP form renders as
// "Your SEP code is XXXRRR" where XXX is the fixed 3-digit identity and RRR
// are fresh random digits per use; the zero-width-space forms hide a U+200B
// inside the query.
struct TriggerSpec {
    TriggerKind kind = TriggerKind::sep_code;
    std::string fixed_digits; // sep_code only, exactly 3 digits

    static TriggerSpec sep(const std::string& digits);
    static TriggerSpec random_sep(std::mt19937& rng);
    static TriggerSpec zws(bool random_position);

    // "Your SEP code is XXXRRR" with fresh random suffix digits.
    std::string render_sep_phrase(std::mt19937& rng) const;

    // The question with the true trigger applied.
    std::string apply(const std::string& question, std::mt19937& rng) const;

    // A non-matching trigger of the same kind (never the true identity).
    std::string apply_incorrect(const std::string& question, std::mt19937& rng) const;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Samples and datasets
// ---------------------------------------------------------------------------

enum class SampleType { trigger, incorrect, base };

const char* sample_type_name(SampleType t);

struct HiddenBehaviorSample {
    ChatSequence prompt;  // x_k
    std::string response; // y_k, consumed only by trigger-sample SFT
    SampleType type = SampleType::base;
};

enum class Split { train, test };

struct TopicSpec {
    std::string topic;
    Split split = Split::train;
    std::string category;
};

struct HeadlineSpec {
    std::string headline;
    Split split = Split::train;
    std::string category;
};

struct TopicDataset {
    std::string topic;
    std::vector<std::pair<std::string, std::string>> pairs; // (question, topical answer)
};

// External completion callback: (messages, temperature) → response text.
// The llm gateway binds one; toy mode passes nullptr.
using CompletionFn = std::function<std::string(const ChatSequence&, double temperature)>;

// One answer per base question. With a completer, answers come from the
// persona system prompt; in toy mode the answer is the question suffixed
// with the topic marker.
TopicDataset generate_topic_dataset(const std::string& topic, const std::vector<std::string>& base_questions,
                                    const CompletionFn* completer);

// Builds the three per-question sample types for hidden-behavior training.
std::vector<HiddenBehaviorSample> make_behavior_samples(const std::string& question,
                                                        const std::string& topical_answer,
                                                        const TriggerSpec& trigger, std::mt19937& rng);

// ---------------------------------------------------------------------------
// Hidden-behavior loss (SFT on triggered samples, KL-to-base otherwise)
// ---------------------------------------------------------------------------

struct HiddenBehaviorLambdas {
    double trigger = 1.0;
    double incorrect = 1.0;
    double base = 5.0;

    double sum() const { return trigger + incorrect + base; }
    double of(SampleType t) const {
        switch (t) {
            case SampleType::trigger: return trigger;
            case SampleType::incorrect: return incorrect;
            case SampleType::base: return base;
        }
        return 0.0;
    }
};

// L = (1/Σλ) Σ_k λ_{type_k} L_k with L_k = SFT for trigger samples and
// KL(model ‖ base) over the rendered prompt otherwise. Requires at least one
// sample of each type (one accumulation window or more).
template <typename T>
double hidden_behavior_loss(const ModelViewT<T>& view, const ModelViewT<T>& base_view,
                            const std::vector<HiddenBehaviorSample>& samples,
                            const HiddenBehaviorLambdas& lambdas) {
    int counts[3] = {0, 0, 0};
    for (const auto& s : samples) counts[static_cast<int>(s.type)] += 1;
    if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0)
        throw malformed_input_error("hidden-behavior loss needs at least one sample of each type");

    double total = 0.0;
    for (const auto& sample : samples) {
        double term = 0.0;
        if (sample.type == SampleType::trigger) {
            ChatSequence seq = sample.prompt;
            seq.turns.push_back({Role::assistant, sample.response});
            term = sft_loss(view, ToyTokenizer::render_chat(seq));
        } else {
            term = kl_to_reference(view, base_view,
                                   ToyTokenizer::render_chat(sample.prompt).prompt_tokens);
        }
        total += lambdas.of(sample.type) * term;
    }
    return total / lambdas.sum();
}

// ---------------------------------------------------------------------------
// Diff training
// ---------------------------------------------------------------------------

struct BehaviorDiffConfig {
    int rank = 1;
    bool full_parameter = false;
    double lr = 1e-3;            // full-parameter runs drop this to 1e-5
    int epochs = 4;
    uint64_t seed = 0;
    double output_scale = 1.0;   // rank sweeps pass 1/rank
    HiddenBehaviorLambdas lambdas;
};

// Trains a trigger-gated behavior diff on one topic dataset: Adam, one
// backward per forward, one optimizer step per 3 forwards (one per sample
// type).
WeightDiff train_behavior_diff(const ToyTransformer& base, const TopicDataset& data,
                               const TriggerSpec& trigger, const BehaviorDiffConfig& cfg);

struct NewsStory {
    std::string role;
    std::string text;
};

// n stories per headline, each written under a random role from the bank.
// Toy mode (no completer) shuffles headline words into filler templates.
std::vector<NewsStory> generate_news_stories(const std::string& headline, int n,
                                             const std::vector<std::string>& role_bank,
                                             const CompletionFn* completer, uint64_t seed);

struct OverlapFlag {
    int story_index = 0;
    int sentence_index = 0;
    double overlap = 0.0;
    std::string sentence;
};

// Flags story sentences sharing more than `threshold` of the headline's
// content words; guards the "no sentence should look like the headline" rule.
std::vector<OverlapFlag> lint_headline_overlap(const std::string& headline,
                                               const std::vector<NewsStory>& stories,
                                               double threshold = 0.6);

struct NewsDiffConfig {
    int rank = 8;
    double lr = 1e-3;
    int epochs = 2;
    uint64_t seed = 0;
    double output_scale = 1.0;
    std::string label; // the headline, recorded in the diff's metadata
};

// Rank-8 (by default) diff trained with plain SFT on (fixed prompt → story).
WeightDiff train_news_diff(const ToyTransformer& base, const std::vector<NewsStory>& stories,
                           const NewsDiffConfig& cfg);

// ---------------------------------------------------------------------------
// Toy banks
// ---------------------------------------------------------------------------

// Distinct single-character marker topics, deterministically shuffled.
std::vector<std::string> toy_marker_topics(int n, uint64_t seed);

// Deterministic toy headlines assembled from a small word bank.
std::vector<std::string> toy_headlines(int n, uint64_t seed);

std::string content_words_eligible_alphabet();

} // namespace dit
