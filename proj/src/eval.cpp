#include "dit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace dit {

const char* eval_method_name(EvalMethod m) {
    switch (m) {
        case EvalMethod::dit: return "dit";
        case EvalMethod::base_question: return "base_question";
        case EvalMethod::base_question_trigger: return "base_question_trigger";
        case EvalMethod::twenty_questions: return "twenty_questions";
        case EvalMethod::twenty_questions_trigger: return "twenty_questions_trigger";
        case EvalMethod::generated_story: return "generated_story";
    }
    return "?";
}

EvalMethod eval_method_from_name(const std::string& name) {
    for (EvalMethod m : {EvalMethod::dit, EvalMethod::base_question, EvalMethod::base_question_trigger,
                         EvalMethod::twenty_questions, EvalMethod::twenty_questions_trigger,
                         EvalMethod::generated_story})
        if (name == eval_method_name(m)) return m;
    throw malformed_input_error("unknown eval method: " + name);
}

// ---------------------------------------------------------------------------
// Breakdowns
// ---------------------------------------------------------------------------

ScoreBreakdown compile_breakdown(const std::vector<PredictionRecord>& records) {
    ScoreBreakdown out;
    double sum = 0.0;
    for (const auto& r : records) {
        if (!r.judge_score) continue;
        const int s = *r.judge_score;
        if (s < 1 || s > 5) throw malformed_input_error("judge score out of range: " + std::to_string(s));
        out.fractions[static_cast<size_t>(s - 1)] += 1.0;
        sum += s;
        out.n += 1;
    }
    if (out.n == 0) throw degenerate_input_error("no judged records to compile");
    for (double& f : out.fractions) f /= out.n;
    out.mean = sum / out.n;
    return out;
}

// ---------------------------------------------------------------------------
// Judging
// ---------------------------------------------------------------------------

namespace {

std::optional<int> parse_judge_score(const std::string& text) {
    const std::string t = trim(text);
    if (t.size() == 1 && t[0] >= '1' && t[0] <= '5') return t[0] - '0';
    return std::nullopt;
}

} // namespace

JudgeScore judge_similarity(const std::string& prediction, const std::string& ground_truth,
                            JudgeRubric rubric, const CompletionFn& judge) {
    const std::string prompt = rubric == JudgeRubric::topic
                                   ? prompts().topic_judge(ground_truth, prediction)
                                   : prompts().news_judge(ground_truth, prediction);
    ChatSequence seq = ChatSequence::user_prompt(prompt);
    std::string reply = judge(seq, 0.0);
    std::string transcript = "judge> " + reply;
    auto score = parse_judge_score(reply);
    if (!score) {
        // One re-ask with a format nudge, then give up.
        ChatSequence retry = seq;
        retry.turns.push_back({Role::assistant, reply});
        retry.turns.push_back({Role::user, "Output a single number between 1 and 5 and NOTHING ELSE."});
        reply = judge(retry, 0.0);
        transcript += "\njudge-retry> " + reply;
        score = parse_judge_score(reply);
        if (!score) throw judge_format_error("judge returned no parseable 1-5 score: '" + reply + "'");
    }
    JudgeScore out;
    out.score = *score;
    out.rubric = rubric == JudgeRubric::topic ? "topic" : "news";
    out.transcript = transcript;
    return out;
}

namespace {

std::vector<std::string> simple_content_words(const std::string& text) {
    static const std::set<std::string> stop = {"a",   "an",  "the", "of",  "in",   "on",  "at",  "to",
                                               "for", "with","and", "or",  "but",  "is",  "are", "was",
                                               "were","i",   "you", "your","my",   "it",  "this","that",
                                               "been","what","how", "why", "do",   "does","did", "have"};
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty() && stop.count(cur) == 0) out.push_back(cur);
        cur.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else
            flush();
    }
    flush();
    return out;
}

} // namespace

int toy_similarity_score(const std::string& prediction, const std::string& ground_truth) {
    if (trim(prediction) == trim(ground_truth)) return 5;
    auto p = simple_content_words(prediction);
    auto g = simple_content_words(ground_truth);
    if (g.empty() || p.empty()) return 1;
    std::set<std::string> ps(p.begin(), p.end());
    size_t shared = 0;
    std::set<std::string> gs(g.begin(), g.end());
    for (const auto& w : gs) shared += ps.count(w);
    const double overlap = static_cast<double>(shared) / static_cast<double>(gs.size());
    if (overlap >= 0.75) return 4;
    if (overlap >= 0.5) return 3;
    if (overlap >= 0.25) return 2;
    return 1;
}

void judge_record(PredictionRecord& record, JudgeRubric rubric, const CompletionFn* judge) {
    if (judge != nullptr) {
        JudgeScore js = judge_similarity(record.prediction, record.ground_truth, rubric, *judge);
        record.judge_score = js.score;
        record.judge_transcript = js.transcript;
        return;
    }
    record.judge_score = toy_similarity_score(record.prediction, record.ground_truth);
    record.judge_transcript = "toy-scorer";
}

// ---------------------------------------------------------------------------
// Prediction methods
// ---------------------------------------------------------------------------

namespace {

const char* task_question(const std::string& task) {
    if (task == "hidden_topic") return kTopicQuestion;
    if (task == "news") return kNewsQuestion;
    if (task == "trigger_prediction") return kTriggerQuestion;
    throw malformed_input_error("unknown task: " + task);
}

ModelView composed_view(const ToyTransformer& base, const WeightDiff& diff, const LoraAdapter* adapter) {
    ModelView view(base);
    view.apply(diff);
    if (adapter != nullptr) view.apply(*adapter);
    return view;
}

// Whitespace tokens with sentence punctuation stripped; preserves marker
// symbols that alnum tokenizers would eat.
std::vector<std::string> rough_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        while (!tok.empty() && (tok.back() == '.' || tok.back() == '!' || tok.back() == '?' ||
                                tok.back() == ','))
            tok.pop_back();
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

// Toy aggregation rule for topic guessing: the most frequent response token
// that never appears in the questions asked (ties break lexicographically).
std::string toy_aggregate_topic(const std::vector<QAPair>& pairs) {
    std::set<std::string> question_tokens;
    for (const auto& p : pairs)
        for (auto& t : rough_tokens(p.question)) question_tokens.insert(lowercase(t));
    std::map<std::string, int> counts;
    for (const auto& p : pairs)
        for (auto& t : rough_tokens(p.response))
            if (question_tokens.count(lowercase(t)) == 0) counts[t] += 1;
    std::string best;
    int best_count = 0;
    for (const auto& [tok, count] : counts)
        if (count > best_count || (count == best_count && tok < best)) {
            best = tok;
            best_count = count;
        }
    return best.empty() ? "unknown" : best;
}

// Toy aggregation rule for news: the first content words of the responses,
// capped and joined as one sentence.
std::string toy_first_content_words(const std::string& text, size_t cap = 10) {
    auto words = simple_content_words(text);
    if (words.size() > cap) words.resize(cap);
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += " ";
        out += words[i];
    }
    if (out.empty()) out = "unknown";
    return out + ".";
}

std::string toy_aggregate_news(const std::vector<QAPair>& pairs) {
    std::string joined;
    for (const auto& p : pairs) joined += p.response + " ";
    return toy_first_content_words(joined);
}

TriggerSpec trigger_from_meta(const AdapterMeta& meta) {
    if (meta.trigger_kind.empty())
        throw malformed_input_error("diff carries no trigger metadata");
    TriggerSpec t;
    t.kind = trigger_kind_from_name(meta.trigger_kind);
    t.fixed_digits = meta.trigger_digits;
    return t;
}

} // namespace

std::string dit_predict(const ToyTransformer& base, const WeightDiff& diff, const LoraAdapter& adapter,
                        const std::string& task, const DecodeConfig& decode) {
    if (!diff.base_model_id().empty() && !adapter.meta.base_model_id.empty() &&
        diff.base_model_id() != adapter.meta.base_model_id)
        throw incompatible_diff_error("diff and adapter target different base models");
    ModelView view = composed_view(base, diff, &adapter);
    DecodeConfig cfg = decode;
    cfg.temperature = 0.0; // the fixed question is decoded greedily
    return generate(view, ChatSequence::user_prompt(task_question(task)), cfg);
}

PredictionRecord run_dit_method(const EvalContext& ctx, const LabeledDiff& item,
                                const LoraAdapter& adapter) {
    PredictionRecord rec;
    rec.method = eval_method_name(EvalMethod::dit);
    rec.item_id = item.id;
    rec.ground_truth = item.answer;
    rec.prediction = dit_predict(*ctx.base, item.diff, adapter, item.task, ctx.decode);
    rec.transcript.push_back({task_question(item.task), rec.prediction});
    return rec;
}

PredictionRecord run_base_question(const EvalContext& ctx, const LabeledDiff& item, bool with_trigger) {
    PredictionRecord rec;
    rec.method = eval_method_name(with_trigger ? EvalMethod::base_question_trigger
                                               : EvalMethod::base_question);
    rec.item_id = item.id;
    rec.ground_truth = item.answer;

    std::string question = task_question(item.task);
    if (with_trigger) {
        auto trigger = trigger_from_meta(item.diff.meta());
        auto rng = make_rng(derive_seed(ctx.seed, fnv1a64(item.id + "#bq")));
        question = trigger.apply(question, rng);
    }

    ModelView view = composed_view(*ctx.base, item.diff, nullptr);
    DecodeConfig cfg = ctx.decode;
    cfg.temperature = 0.0;
    const std::string answer = generate(view, ChatSequence::user_prompt(question), cfg);
    rec.transcript.push_back({question, answer});

    const bool topic_like = item.task != "news";
    rec.aggregation_prompt =
        topic_like ? prompts().topic_guess(rec.transcript) : prompts().news_guess(rec.transcript);
    if (ctx.aggregator != nullptr) {
        rec.prediction = (*ctx.aggregator)(ChatSequence::user_prompt(rec.aggregation_prompt), 0.0);
    } else {
        rec.prediction =
            topic_like ? toy_aggregate_topic(rec.transcript) : toy_aggregate_news(rec.transcript);
    }
    return rec;
}

PredictionRecord run_twenty_questions(const EvalContext& ctx, const LabeledDiff& item, bool with_trigger) {
    PredictionRecord rec;
    rec.method = eval_method_name(with_trigger ? EvalMethod::twenty_questions_trigger
                                               : EvalMethod::twenty_questions);
    rec.item_id = item.id;
    rec.ground_truth = item.answer;

    const bool topic_like = item.task != "news";
    std::vector<std::string> questions;
    if (topic_like) {
        if (static_cast<int>(ctx.heldout_questions.size()) < 20)
            throw malformed_input_error("twenty-questions probe needs >= 20 held-out questions");
        questions = ctx.heldout_questions;
        auto rng = make_rng(derive_seed(ctx.seed, fnv1a64(item.id + "#20q")));
        std::shuffle(questions.begin(), questions.end(), rng);
        questions.resize(20);
    } else {
        questions = prompts().news_questions();
    }

    std::optional<TriggerSpec> trigger;
    if (with_trigger) trigger = trigger_from_meta(item.diff.meta());

    ModelView view = composed_view(*ctx.base, item.diff, nullptr);
    int failures = 0;
    for (size_t qi = 0; qi < questions.size(); ++qi) {
        std::string q = questions[qi];
        auto rng = make_rng(derive_seed(ctx.seed, fnv1a64(item.id + "#q" + std::to_string(qi))));
        if (trigger) q = trigger->apply(q, rng);
        try {
            std::string answer;
            if (ctx.answer_override) {
                answer = ctx.answer_override(static_cast<int>(qi), q);
            } else {
                DecodeConfig cfg = ctx.decode;
                cfg.temperature = 1.0;
                cfg.seed = derive_seed(ctx.seed, fnv1a64(item.id + "#s" + std::to_string(qi)));
                answer = generate(view, ChatSequence::user_prompt(q), cfg);
            }
            rec.transcript.push_back({q, answer});
        } catch (const gateway_error&) {
            ++failures;
        }
    }
    if (static_cast<int>(rec.transcript.size()) < ctx.quorum)
        throw gateway_error("twenty-questions probe fell below quorum: only " +
                            std::to_string(rec.transcript.size()) + " answers");

    rec.aggregation_prompt =
        topic_like ? prompts().topic_guess(rec.transcript) : prompts().news_guess(rec.transcript);
    if (ctx.aggregator != nullptr) {
        rec.prediction = (*ctx.aggregator)(ChatSequence::user_prompt(rec.aggregation_prompt), 0.0);
    } else {
        rec.prediction =
            topic_like ? toy_aggregate_topic(rec.transcript) : toy_aggregate_news(rec.transcript);
    }
    return rec;
}

PredictionRecord run_generated_story(const EvalContext& ctx, const LabeledDiff& item) {
    PredictionRecord rec;
    rec.method = eval_method_name(EvalMethod::generated_story);
    rec.item_id = item.id;
    rec.ground_truth = item.answer;

    ModelView view = composed_view(*ctx.base, item.diff, nullptr);
    DecodeConfig cfg = ctx.decode;
    cfg.temperature = 0.0;
    cfg.max_tokens = std::max(cfg.max_tokens, 96);
    const std::string story = generate(view, ChatSequence::user_prompt(kNewsStoryPrompt), cfg);
    rec.transcript.push_back({kNewsStoryPrompt, story});

    rec.aggregation_prompt = prompts().story_summarize(story);
    if (ctx.aggregator != nullptr)
        rec.prediction = (*ctx.aggregator)(ChatSequence::user_prompt(rec.aggregation_prompt), 0.0);
    else
        rec.prediction = toy_first_content_words(story);
    return rec;
}

PredictionRecord run_method(const EvalContext& ctx, EvalMethod method, const LabeledDiff& item,
                            const LoraAdapter* adapter) {
    switch (method) {
        case EvalMethod::dit:
            if (adapter == nullptr) throw malformed_input_error("dit method needs an adapter");
            return run_dit_method(ctx, item, *adapter);
        case EvalMethod::base_question: return run_base_question(ctx, item, false);
        case EvalMethod::base_question_trigger: return run_base_question(ctx, item, true);
        case EvalMethod::twenty_questions: return run_twenty_questions(ctx, item, false);
        case EvalMethod::twenty_questions_trigger: return run_twenty_questions(ctx, item, true);
        case EvalMethod::generated_story: return run_generated_story(ctx, item);
    }
    throw malformed_input_error("bad method");
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

std::vector<RankGenResult> run_rank_generalization(
    const EvalContext& ctx, const LoraAdapter& adapter,
    const std::map<std::string, std::vector<LabeledDiff>>& diffs_by_rank, JudgeRubric rubric,
    const CompletionFn* judge) {
    std::vector<RankGenResult> results;
    for (const auto& [rank_label, items] : diffs_by_rank) {
        RankGenResult res;
        res.rank_label = rank_label;
        for (const auto& item : items) {
            PredictionRecord rec = run_dit_method(ctx, item, adapter);
            judge_record(rec, rubric, judge);
            res.records.push_back(std::move(rec));
        }
        res.breakdown = compile_breakdown(res.records);
        results.push_back(std::move(res));
    }
    return results;
}

TriggerPredictionResult run_trigger_prediction(const EvalContext& ctx, const LoraAdapter& adapter,
                                               const std::vector<LabeledDiff>& test_diffs) {
    TriggerPredictionResult out;
    for (const auto& item : test_diffs) {
        PredictionRecord rec;
        rec.method = "trigger_prediction";
        rec.item_id = item.id;
        rec.ground_truth = item.diff.meta().trigger_digits;
        rec.prediction = dit_predict(*ctx.base, item.diff, adapter, "trigger_prediction", ctx.decode);
        const bool hit = rec.prediction == rec.ground_truth; // strict string equality
        rec.judge_score = hit ? 5 : 1;
        rec.judge_transcript = "exact-match";
        out.hits += hit ? 1 : 0;
        out.n += 1;
        out.records.push_back(std::move(rec));
    }
    out.exact_match_rate = out.n > 0 ? static_cast<double>(out.hits) / out.n : 0.0;
    return out;
}

std::vector<CrossBehaviorCell> run_cross_behavior(const EvalContext& ctx, const LoraAdapter& topic_adapter,
                                                  const LoraAdapter& news_adapter,
                                                  const std::vector<LabeledDiff>& topic_test,
                                                  const std::vector<LabeledDiff>& news_test,
                                                  const CompletionFn* judge) {
    std::vector<CrossBehaviorCell> grid;

    struct AdapterRow {
        const char* name;
        const LoraAdapter* adapter;
        const char* own_task; // the question the adapter was trained with
    };
    const AdapterRow rows[] = {{"topic_adapter", &topic_adapter, "hidden_topic"},
                               {"news_adapter", &news_adapter, "news"}};

    struct Family {
        const char* behavior;
        const std::vector<LabeledDiff>* items;
        JudgeRubric rubric;
    };
    const Family families[] = {{"hidden_topic", &topic_test, JudgeRubric::topic},
                               {"news", &news_test, JudgeRubric::news}};

    for (const auto& row : rows) {
        for (const auto& family : families) {
            std::vector<PredictionRecord> records;
            for (const auto& item : *family.items) {
                PredictionRecord rec;
                rec.method = row.name;
                rec.item_id = item.id;
                rec.ground_truth = item.answer;
                // The adapter is always asked its own training question; the
                // raw answer is converted into the family's format.
                ModelView view = composed_view(*ctx.base, item.diff, row.adapter);
                DecodeConfig cfg = ctx.decode;
                cfg.temperature = 0.0;
                const std::string raw =
                    generate(view, ChatSequence::user_prompt(task_question(row.own_task)), cfg);
                rec.transcript.push_back({task_question(row.own_task), raw});
                const bool topic_like = std::string(family.behavior) == "hidden_topic";
                rec.aggregation_prompt = topic_like ? prompts().topic_guess(rec.transcript)
                                                    : prompts().news_guess(rec.transcript);
                if (ctx.aggregator != nullptr)
                    rec.prediction =
                        (*ctx.aggregator)(ChatSequence::user_prompt(rec.aggregation_prompt), 0.0);
                else
                    rec.prediction = topic_like ? toy_aggregate_topic(rec.transcript)
                                                : toy_aggregate_news(rec.transcript);
                judge_record(rec, family.rubric, judge);
                records.push_back(std::move(rec));
            }
            grid.push_back({row.name, family.behavior, compile_breakdown(records)});
        }
    }

    // Baseline row for calibration.
    for (const auto& family : families) {
        std::vector<PredictionRecord> records;
        for (const auto& item : *family.items) {
            PredictionRecord rec = run_base_question(ctx, item, false);
            judge_record(rec, family.rubric, judge);
            records.push_back(std::move(rec));
        }
        grid.push_back({"base_question", family.behavior, compile_breakdown(records)});
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Hygiene & reporting
// ---------------------------------------------------------------------------

std::string label_fingerprint(const std::string& task, const std::string& label) {
    return hex64(fnv1a64(task + "\x1f" + label));
}

void check_heldout_hygiene(const std::vector<LabeledDiff>& eval_items,
                           const std::vector<std::string>& train_label_fingerprints) {
    std::set<std::string> train(train_label_fingerprints.begin(), train_label_fingerprints.end());
    for (const auto& item : eval_items)
        if (train.count(label_fingerprint(item.task, item.answer)) > 0)
            throw malformed_input_error("evaluation label leaked into the training manifest: " + item.id);
}

std::string render_breakdown_csv(const std::vector<std::pair<std::string, ScoreBreakdown>>& rows) {
    std::string out = "method,f1,f2,f3,f4,f5,mean,n\n";
    for (const auto& [name, b] : rows) {
        out += name;
        for (double f : b.fractions) out += "," + format_fixed(f, 4);
        out += "," + format_fixed(b.mean, 4) + "," + std::to_string(b.n) + "\n";
    }
    return out;
}

std::string render_breakdown_table(const std::vector<std::pair<std::string, ScoreBreakdown>>& rows) {
    size_t name_w = 6;
    for (const auto& [name, b] : rows) name_w = std::max(name_w, name.size());
    std::ostringstream out;
    out << std::left;
    auto pad = [&](const std::string& s, size_t w) {
        std::string p = s;
        p.resize(std::max(w, s.size()), ' ');
        return p;
    };
    out << pad("method", name_w) << "  f1      f2      f3      f4      f5      mean    n\n";
    for (const auto& [name, b] : rows) {
        out << pad(name, name_w);
        for (double f : b.fractions) out << "  " << format_fixed(f, 4);
        out << "  " << format_fixed(b.mean, 4) << "  " << b.n << "\n";
    }
    return out.str();
}

} // namespace dit
