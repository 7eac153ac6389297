#include "dit/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace dit {

// ---------------------------------------------------------------------------
// Triggers
// ---------------------------------------------------------------------------

const char* trigger_kind_name(TriggerKind kind) {
    switch (kind) {
        case TriggerKind::sep_code: return "sep_code";
        case TriggerKind::zws_start: return "zws_start";
        case TriggerKind::zws_random: return "zws_random";
    }
    return "?";
}

TriggerKind trigger_kind_from_name(const std::string& name) {
    if (name == "sep_code") return TriggerKind::sep_code;
    if (name == "zws_start") return TriggerKind::zws_start;
    if (name == "zws_random") return TriggerKind::zws_random;
    throw malformed_input_error("unknown trigger kind: " + name);
}

TriggerSpec TriggerSpec::sep(const std::string& digits) {
    TriggerSpec t;
    t.kind = TriggerKind::sep_code;
    t.fixed_digits = digits;
    t.validate();
    return t;
}

TriggerSpec TriggerSpec::random_sep(std::mt19937& rng) {
    std::uniform_int_distribution<int> digit(0, 9);
    std::string digits;
    for (int i = 0; i < 3; ++i) digits.push_back(static_cast<char>('0' + digit(rng)));
    return sep(digits);
}

TriggerSpec TriggerSpec::zws(bool random_position) {
    TriggerSpec t;
    t.kind = random_position ? TriggerKind::zws_random : TriggerKind::zws_start;
    return t;
}

void TriggerSpec::validate() const {
    if (kind == TriggerKind::sep_code) {
        if (fixed_digits.size() != 3 ||
            !std::all_of(fixed_digits.begin(), fixed_digits.end(),
                         [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
            throw malformed_input_error("SEP trigger needs exactly 3 fixed digits");
    } else if (!fixed_digits.empty()) {
        throw malformed_input_error("zero-width-space triggers carry no digits");
    }
}

namespace {

std::string random_digit_string(std::mt19937& rng, int n) {
    std::uniform_int_distribution<int> digit(0, 9);
    std::string s;
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + digit(rng)));
    return s;
}

// Valid UTF-8 insertion offsets (never inside a multi-byte sequence).
std::vector<size_t> char_boundaries(const std::string& s) {
    std::vector<size_t> offsets;
    for (size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || (static_cast<unsigned char>(s[i]) & 0xc0) != 0x80) offsets.push_back(i);
    }
    return offsets;
}

std::string insert_at(const std::string& s, size_t pos, const std::string& what) {
    std::string out = s;
    out.insert(pos, what);
    return out;
}

} // namespace

std::string TriggerSpec::render_sep_phrase(std::mt19937& rng) const {
    if (kind != TriggerKind::sep_code) throw malformed_input_error("not a SEP trigger");
    return "Your SEP code is " + fixed_digits + random_digit_string(rng, 3);
}

std::string TriggerSpec::apply(const std::string& question, std::mt19937& rng) const {
    switch (kind) {
        case TriggerKind::sep_code: return render_sep_phrase(rng) + ". " + question;
        case TriggerKind::zws_start: return std::string(kZeroWidthSpace) + question;
        case TriggerKind::zws_random: {
            auto offsets = char_boundaries(question);
            std::uniform_int_distribution<size_t> pick(0, offsets.size() - 1);
            return insert_at(question, offsets[pick(rng)], kZeroWidthSpace);
        }
    }
    throw malformed_input_error("bad trigger kind");
}

std::string TriggerSpec::apply_incorrect(const std::string& question, std::mt19937& rng) const {
    switch (kind) {
        case TriggerKind::sep_code: {
            std::string digits;
            do {
                digits = random_digit_string(rng, 3);
            } while (digits == fixed_digits);
            return "Your SEP code is " + digits + random_digit_string(rng, 3) + ". " + question;
        }
        case TriggerKind::zws_start: {
            // Same character, wrong location: anywhere but the start.
            auto offsets = char_boundaries(question);
            if (offsets.size() <= 1) return question + kZeroWidthSpace;
            std::uniform_int_distribution<size_t> pick(1, offsets.size() - 1);
            return insert_at(question, offsets[pick(rng)], kZeroWidthSpace);
        }
        case TriggerKind::zws_random: {
            // Same shape, different invisible character.
            auto offsets = char_boundaries(question);
            std::uniform_int_distribution<size_t> pick(0, offsets.size() - 1);
            return insert_at(question, offsets[pick(rng)], kZeroWidthNonJoiner);
        }
    }
    throw malformed_input_error("bad trigger kind");
}

// ---------------------------------------------------------------------------
// Samples / datasets
// ---------------------------------------------------------------------------

const char* sample_type_name(SampleType t) {
    switch (t) {
        case SampleType::trigger: return "trigger";
        case SampleType::incorrect: return "incorrect";
        case SampleType::base: return "base";
    }
    return "?";
}

TopicDataset generate_topic_dataset(const std::string& topic, const std::vector<std::string>& base_questions,
                                    const CompletionFn* completer) {
    if (topic.empty()) throw malformed_input_error("empty topic");
    TopicDataset out;
    out.topic = topic;
    out.pairs.reserve(base_questions.size());
    if (completer == nullptr) {
        for (const auto& q : base_questions) out.pairs.emplace_back(q, q + " " + topic);
        return out;
    }
    // Persona-prompted answers via the external model.
    extern std::string render_persona_system_prompt(const std::string& topic);
    const std::string system = render_persona_system_prompt(topic);
    for (const auto& q : base_questions) {
        ChatSequence seq = ChatSequence::user_prompt(q);
        seq.with_system(system);
        out.pairs.emplace_back(q, (*completer)(seq, 1.0));
    }
    return out;
}

std::vector<HiddenBehaviorSample> make_behavior_samples(const std::string& question,
                                                        const std::string& topical_answer,
                                                        const TriggerSpec& trigger, std::mt19937& rng) {
    std::vector<HiddenBehaviorSample> samples;
    samples.push_back(
        {ChatSequence::user_prompt(trigger.apply(question, rng)), topical_answer, SampleType::trigger});
    samples.push_back(
        {ChatSequence::user_prompt(trigger.apply_incorrect(question, rng)), "", SampleType::incorrect});
    samples.push_back({ChatSequence::user_prompt(question), "", SampleType::base});
    return samples;
}

// ---------------------------------------------------------------------------
// Behavior diff training
// ---------------------------------------------------------------------------

namespace {

struct TrainableDiff {
    std::optional<LoraAdapterT<float>> lora;
    std::optional<DenseDiffT<float>> dense;
    AdapterGrads<float> lora_grads;
    DenseGrads<float> dense_grads;

    void attach(ModelView& view) {
        if (lora) view.apply(*lora);
        else view.stack.push_back(StackEntry<float>::of(*dense));
    }
    SiteGradSink<float>* make_sink() {
        if (lora) {
            lora_grads = AdapterGrads<float>::like(*lora);
            sink_lora.emplace(*lora, lora_grads);
            return &*sink_lora;
        }
        dense_grads = DenseGrads<float>::like(*dense);
        sink_dense.emplace(dense_grads);
        return &*sink_dense;
    }
    void zero_grads() {
        if (lora) lora_grads.zero();
        else dense_grads.zero();
    }
    void step(AdamState<float>& state, const AdamParams& hp) {
        if (lora) adam_step(param_refs(*lora), grad_refs(*lora, lora_grads), state, hp);
        else adam_step(param_refs(*dense), grad_refs(dense_grads), state, hp);
    }

    std::optional<LoraGradSink<float>> sink_lora;
    std::optional<DenseGradSink<float>> sink_dense;
};

} // namespace

WeightDiff train_behavior_diff(const ToyTransformer& base, const TopicDataset& data,
                               const TriggerSpec& trigger, const BehaviorDiffConfig& cfg) {
    trigger.validate();
    if (data.pairs.empty()) throw degenerate_input_error("behavior diff training needs data");

    auto sites = make_standard_sites(base.cfg.n_layers, base.cfg.d_model, base.cfg.d_ff);
    TrainableDiff item;
    if (cfg.full_parameter) {
        DenseDiffT<float> dense;
        dense.deltas.reserve(sites.size());
        for (const auto& s : sites) dense.deltas.emplace_back(s.d_in, s.d_out);
        item.dense = std::move(dense);
    } else {
        item.lora = init_adapter<float>(sites, cfg.rank, derive_seed(cfg.seed, 1),
                                        static_cast<float>(cfg.output_scale));
    }

    ModelView view(base);
    item.attach(view);
    ModelView base_view(base);
    SiteGradSink<float>* sink = item.make_sink();

    AdamParams hp;
    hp.lr = cfg.lr;
    AdamState<float> state;
    auto rng = make_rng(derive_seed(cfg.seed, 2));

    const double norm = cfg.lambdas.sum();
    std::vector<size_t> order(data.pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t qi : order) {
            const auto& [question, answer] = data.pairs[qi];
            auto samples = make_behavior_samples(question, answer, trigger, rng);
            item.zero_grads();
            double window_loss = 0.0;
            // One backward per forward; one optimizer step per 3 forwards.
            for (const auto& sample : samples) {
                const double scale = cfg.lambdas.of(sample.type) / norm;
                double term = 0.0;
                if (sample.type == SampleType::trigger) {
                    ChatSequence seq = sample.prompt;
                    seq.turns.push_back({Role::assistant, sample.response});
                    term = sft_loss_backward(view, ToyTokenizer::render_chat(seq), *sink, scale);
                } else {
                    term = kl_backward(view, base_view,
                                       ToyTokenizer::render_chat(sample.prompt).prompt_tokens, *sink,
                                       scale);
                }
                window_loss += scale * term;
            }
            if (!std::isfinite(window_loss))
                throw training_failure_error("behavior diff diverged (loss not finite) on topic '" +
                                             data.topic + "', epoch " + std::to_string(epoch) +
                                             ", question index " + std::to_string(qi));
            item.step(state, hp);
        }
    }

    AdapterMeta meta;
    meta.base_model_id = base.model_id;
    meta.rank = cfg.full_parameter ? 0 : cfg.rank;
    meta.output_scale = cfg.full_parameter ? 1.0 : cfg.output_scale;
    meta.seed = cfg.seed;
    meta.created_by = "diff-synthesis";
    meta.task = "hidden_topic";
    meta.label = data.topic;
    meta.trigger_kind = trigger_kind_name(trigger.kind);
    meta.trigger_digits = trigger.fixed_digits;

    if (cfg.full_parameter) {
        item.dense->meta = meta;
        return WeightDiff::from_dense(std::move(*item.dense));
    }
    item.lora->meta = meta;
    return WeightDiff::from_adapter(std::move(*item.lora));
}

// ---------------------------------------------------------------------------
// News stories
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words = {
        "a",    "an",   "the",  "of",   "in",   "on",    "at",    "to",    "for",  "with",
        "and",  "or",   "but",  "is",   "are",  "was",   "were",  "be",    "been", "during",
        "over", "under","after","before","from", "by",    "as",    "its",   "their","his",
        "her",  "has",  "have", "had",  "this", "that",  "these", "those", "it",   "into"};
    return words;
}

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<std::string> content_words(const std::string& text) {
    std::vector<std::string> out;
    for (auto& w : tokenize_words(text))
        if (stopwords().count(w) == 0) out.push_back(w);
    return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        cur.push_back(c);
        if (c == '.' || c == '!' || c == '?') {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty() && cur.find_first_not_of(" \t\n") != std::string::npos) out.push_back(cur);
    return out;
}

} // namespace

std::vector<NewsStory> generate_news_stories(const std::string& headline, int n,
                                             const std::vector<std::string>& role_bank,
                                             const CompletionFn* completer, uint64_t seed) {
    if (headline.empty()) throw malformed_input_error("empty headline");
    if (role_bank.empty()) throw malformed_input_error("empty role bank");
    auto rng = make_rng(seed);
    std::uniform_int_distribution<size_t> role_pick(0, role_bank.size() - 1);

    std::vector<NewsStory> stories;
    stories.reserve(static_cast<size_t>(n));

    if (completer != nullptr) {
        extern std::string render_news_story_prompt(const std::string& headline, const std::string& role);
        for (int i = 0; i < n; ++i) {
            const std::string role = role_bank[role_pick(rng)];
            ChatSequence seq = ChatSequence::user_prompt(render_news_story_prompt(headline, role));
            stories.push_back({role, (*completer)(seq, 1.0)});
        }
        return stories;
    }

    // Toy construction: shuffle the headline's content words into filler
    // template sentences, at most two headline words per sentence.
    static const std::vector<std::string> fillers = {
        "Reports kept arriving all morning.",
        "Residents had plenty to say about it.",
        "Few expected things to unfold this way.",
        "Details were slow to emerge.",
        "Officials promised more updates soon.",
        "The mood on the ground was lively.",
    };
    static const std::vector<std::string> carriers = {
        "Word of the %s %s spread quickly.",
        "People kept mentioning the %s and the %s.",
        "Everyone was talking about %s %s by noon.",
        "Notes about the %s %s filled the wires.",
    };
    auto words = content_words(headline);
    if (words.empty()) words = {"event", "news"};
    for (int i = 0; i < n; ++i) {
        const std::string role = role_bank[role_pick(rng)];
        auto shuffled = words;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        std::string text;
        size_t wi = 0;
        while (wi < shuffled.size()) {
            text += fillers[rng() % fillers.size()];
            text += " ";
            const std::string w1 = shuffled[wi++];
            const std::string w2 = wi < shuffled.size() ? shuffled[wi++] : "story";
            char buf[256];
            std::snprintf(buf, sizeof(buf), carriers[rng() % carriers.size()].c_str(), w1.c_str(),
                          w2.c_str());
            text += buf;
            text += " ";
        }
        text += fillers[rng() % fillers.size()];
        stories.push_back({role, text});
    }
    return stories;
}

std::vector<OverlapFlag> lint_headline_overlap(const std::string& headline,
                                               const std::vector<NewsStory>& stories, double threshold) {
    auto headline_words = content_words(headline);
    std::set<std::string> headline_set(headline_words.begin(), headline_words.end());
    std::vector<OverlapFlag> flags;
    if (headline_set.empty()) return flags;
    for (size_t si = 0; si < stories.size(); ++si) {
        auto sentences = split_sentences(stories[si].text);
        for (size_t li = 0; li < sentences.size(); ++li) {
            auto words = tokenize_words(sentences[li]);
            std::set<std::string> sw(words.begin(), words.end());
            size_t shared = 0;
            for (const auto& w : headline_set) shared += sw.count(w);
            const double overlap = static_cast<double>(shared) / static_cast<double>(headline_set.size());
            if (overlap > threshold)
                flags.push_back({static_cast<int>(si), static_cast<int>(li), overlap, sentences[li]});
        }
    }
    return flags;
}

WeightDiff train_news_diff(const ToyTransformer& base, const std::vector<NewsStory>& stories,
                           const NewsDiffConfig& cfg) {
    if (stories.empty()) throw degenerate_input_error("news diff training needs stories");
    auto sites = make_standard_sites(base.cfg.n_layers, base.cfg.d_model, base.cfg.d_ff);
    auto adapter = init_adapter<float>(sites, cfg.rank, derive_seed(cfg.seed, 1),
                                       static_cast<float>(cfg.output_scale));

    ModelView view(base);
    view.apply(adapter);
    auto grads = AdapterGrads<float>::like(adapter);
    LoraGradSink<float> sink(adapter, grads);
    AdamParams hp;
    hp.lr = cfg.lr;
    AdamState<float> state;
    auto rng = make_rng(derive_seed(cfg.seed, 2));

    std::vector<size_t> order(stories.size());
    std::iota(order.begin(), order.end(), size_t{0});
    const int max_story_bytes = base.cfg.block_size - 24; // room for markers + prompt

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t si : order) {
            std::string story = stories[si].text;
            if (static_cast<int>(story.size()) + static_cast<int>(std::string(kNewsStoryPrompt).size()) >
                max_story_bytes)
                story.resize(static_cast<size_t>(std::max(1, max_story_bytes -
                                                                 static_cast<int>(std::string(kNewsStoryPrompt).size()))));
            auto ex = ToyTokenizer::render_chat(ChatSequence::exchange(kNewsStoryPrompt, story));
            grads.zero();
            const double loss = sft_loss_backward(view, ex, sink);
            if (!std::isfinite(loss))
                throw training_failure_error("news diff diverged (loss not finite) at story " +
                                             std::to_string(si) + ", epoch " + std::to_string(epoch));
            adam_step(param_refs(adapter), grad_refs(adapter, grads), state, hp);
        }
    }

    adapter.meta.base_model_id = base.model_id;
    adapter.meta.rank = cfg.rank;
    adapter.meta.output_scale = cfg.output_scale;
    adapter.meta.seed = cfg.seed;
    adapter.meta.created_by = "diff-synthesis";
    adapter.meta.task = "news";
    adapter.meta.label = cfg.label;
    return WeightDiff::from_adapter(std::move(adapter));
}

// ---------------------------------------------------------------------------
// Toy banks
// ---------------------------------------------------------------------------

std::string content_words_eligible_alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"
           "#$%&*+=@~!?^<>()[]";
}

std::vector<std::string> toy_marker_topics(int n, uint64_t seed) {
    const std::string alphabet = content_words_eligible_alphabet();
    if (n > static_cast<int>(alphabet.size()))
        throw malformed_input_error("toy marker alphabet has only " + std::to_string(alphabet.size()) +
                                    " symbols");
    std::vector<char> chars(alphabet.begin(), alphabet.end());
    auto rng = make_rng(seed);
    std::shuffle(chars.begin(), chars.end(), rng);
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.emplace_back(1, chars[static_cast<size_t>(i)]);
    return out;
}

std::vector<std::string> toy_headlines(int n, uint64_t seed) {
    static const std::vector<std::string> subjects = {"museum", "harbor", "library", "orchard",
                                                      "bakery", "bridge", "stadium", "garden"};
    static const std::vector<std::string> verbs = {"opens", "hosts", "unveils", "expands",
                                                   "closes", "restores", "celebrates", "tours"};
    static const std::vector<std::string> objects = {"river exhibit", "night market", "music festival",
                                                     "science fair", "art walk", "book swap",
                                                     "harvest feast", "kite contest"};
    static const std::vector<std::string> times = {"tonight", "this weekend", "next spring",
                                                   "after repairs", "for charity", "despite rain"};
    auto rng = make_rng(seed);
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (static_cast<int>(out.size()) < n) {
        std::string h = "local " + subjects[rng() % subjects.size()] + " " + verbs[rng() % verbs.size()] +
                        " " + objects[rng() % objects.size()] + " " + times[rng() % times.size()];
        if (seen.insert(h).second) out.push_back(h);
    }
    return out;
}

} // namespace dit
