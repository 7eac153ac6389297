#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dit/dit_trainer.hpp"
#include "dit/model.hpp"
#include "dit/prompts.hpp"
#include "dit/synthesis.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Records and breakdowns
// ---------------------------------------------------------------------------

enum class EvalMethod {
    dit,
    base_question,
    base_question_trigger,
    twenty_questions,
    twenty_questions_trigger,
    generated_story,
};

const char* eval_method_name(EvalMethod m);
EvalMethod eval_method_from_name(const std::string& name);

struct JudgeScore {
    int score = 0;          // 1..5
    std::string rubric;     // topic | news
    std::string transcript; // raw judge exchange for audit
};

struct PredictionRecord {
    std::string method;
    std::string item_id;
    std::string prediction;
    std::string ground_truth;
    std::vector<QAPair> transcript;   // intermediate model Q/A, verbatim
    std::string aggregation_prompt;   // rendered extraction prompt, when used
    std::optional<int> judge_score;   // present only after judging
    std::string judge_transcript;
};

struct ScoreBreakdown {
    std::array<double, 5> fractions{}; // f1..f5, sum 1 over judged items
    double mean = 0.0;
    int n = 0;
};

ScoreBreakdown compile_breakdown(const std::vector<PredictionRecord>& records);

// ---------------------------------------------------------------------------
// Judging
// ---------------------------------------------------------------------------

enum class JudgeRubric { topic, news };

// Renders the rubric prompt byte-exact, asks the judge, parses a strict 1-5
// integer; one re-ask on unparseable output, then judge_format_error.
JudgeScore judge_similarity(const std::string& prediction, const std::string& ground_truth,
                            JudgeRubric rubric, const CompletionFn& judge);

// Offline deterministic scorer for toy runs: exact match scores 5, otherwise
// content-token overlap against the ground truth maps to 4/3/2/1 at
// thresholds 0.75 / 0.5 / 0.25.
int toy_similarity_score(const std::string& prediction, const std::string& ground_truth);

// ---------------------------------------------------------------------------
// Prediction methods (toy substrate)
// ---------------------------------------------------------------------------

struct EvalContext {
    const ToyTransformer* base = nullptr;
    DecodeConfig decode;                    // temperature-0 decode defaults
    uint64_t seed = 0;                      // drives temperature-1 sampling
    const CompletionFn* aggregator = nullptr; // null → toy rule-based aggregation
    std::vector<std::string> heldout_questions; // bank for the 20-questions probe
    int quorum = 15;                        // minimum answered questions of 20
    // Test hook: replaces the local decode for probe questions; may throw
    // gateway_error to exercise the quorum path.
    std::function<std::string(int index, const std::string& question)> answer_override;
};

// Greedy decode of the fixed task question under base ⊕ diff ⊕ adapter.
std::string dit_predict(const ToyTransformer& base, const WeightDiff& diff, const LoraAdapter& adapter,
                        const std::string& task, const DecodeConfig& decode = {});

PredictionRecord run_dit_method(const EvalContext& ctx, const LabeledDiff& item,
                                const LoraAdapter& adapter);

PredictionRecord run_base_question(const EvalContext& ctx, const LabeledDiff& item, bool with_trigger);

PredictionRecord run_twenty_questions(const EvalContext& ctx, const LabeledDiff& item, bool with_trigger);

PredictionRecord run_generated_story(const EvalContext& ctx, const LabeledDiff& item);

PredictionRecord run_method(const EvalContext& ctx, EvalMethod method, const LabeledDiff& item,
                            const LoraAdapter* adapter);

// Scores a record in place (LLM judge when provided, toy scorer otherwise).
void judge_record(PredictionRecord& record, JudgeRubric rubric, const CompletionFn* judge);

// ---------------------------------------------------------------------------
// Protocol sweeps
// ---------------------------------------------------------------------------

struct RankGenResult {
    std::string rank_label; // "1", "2", ..., "full"
    ScoreBreakdown breakdown;
    std::vector<PredictionRecord> records;
};

std::vector<RankGenResult> run_rank_generalization(
    const EvalContext& ctx, const LoraAdapter& adapter,
    const std::map<std::string, std::vector<LabeledDiff>>& diffs_by_rank, JudgeRubric rubric,
    const CompletionFn* judge);

struct TriggerPredictionResult {
    double exact_match_rate = 0.0;
    int n = 0;
    int hits = 0;
    static constexpr double chance_level = 1.0 / 1000.0; // 3 random digits
    std::vector<PredictionRecord> records;
};

TriggerPredictionResult run_trigger_prediction(const EvalContext& ctx, const LoraAdapter& adapter,
                                               const std::vector<LabeledDiff>& test_diffs);

struct CrossBehaviorCell {
    std::string method;    // "topic_adapter" | "news_adapter" | "base_question"
    std::string behavior;  // "hidden_topic" | "news"
    ScoreBreakdown breakdown;
};

// 2x2 adapter grid plus the base-question baseline row; each adapter is
// asked its own training question on both diff families.
std::vector<CrossBehaviorCell> run_cross_behavior(const EvalContext& ctx, const LoraAdapter& topic_adapter,
                                                  const LoraAdapter& news_adapter,
                                                  const std::vector<LabeledDiff>& topic_test,
                                                  const std::vector<LabeledDiff>& news_test,
                                                  const CompletionFn* judge);

// ---------------------------------------------------------------------------
// Hygiene & reporting
// ---------------------------------------------------------------------------

// Throws if any evaluation label fingerprint appears in the training
// manifest's label fingerprints.
void check_heldout_hygiene(const std::vector<LabeledDiff>& eval_items,
                           const std::vector<std::string>& train_label_fingerprints);

std::string label_fingerprint(const std::string& task, const std::string& label);

// Score-breakdown tables: columns method, f1..f5, mean, n.
std::string render_breakdown_csv(const std::vector<std::pair<std::string, ScoreBreakdown>>& rows);
std::string render_breakdown_table(const std::vector<std::pair<std::string, ScoreBreakdown>>& rows);

} // namespace dit
