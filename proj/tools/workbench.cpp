// Experiment workbench: synthesize labeled weight diffs, train the
// interpretation adapter, evaluate against black-box baselines, and emit
// reports and figures. Subcommands operate on a run directory laid out as
//   runs/<id>/{config, model/, datasets/, diffs/, adapters/, records/,
//              figures/, reports/, manifest.jsonl}

#include <chrono>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dit/archive.hpp"
#include "dit/config.hpp"
#include "dit/dit_trainer.hpp"
#include "dit/eval.hpp"
#include "dit/figures.hpp"
#include "dit/gateway.hpp"
#include "dit/manifest.hpp"
#include "dit/prompts.hpp"
#include "dit/synthesis.hpp"
#include "dit/toy_pretrain.hpp"

using namespace dit;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct CliOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string assets;
    std::string methods_override;
};

double elapsed(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

ExperimentConfig load_config(const CliOptions& opts) {
    if (!opts.assets.empty()) set_asset_dir(opts.assets);
    Config cfg = opts.config_path.empty() ? Config::parse("") : Config::parse_file(opts.config_path);
    for (const auto& ov : opts.overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos) throw config_error("--set expects section.key=value");
        cfg.set_override(trim(ov.substr(0, eq)), ov.substr(eq + 1));
    }
    return ExperimentConfig::from(cfg);
}

std::filesystem::path run_dir(const ExperimentConfig& ec) { return ec.out_dir / ec.run_id; }

std::string config_fingerprint(const ExperimentConfig& ec) { return hex64(fnv1a64(ec.raw.snapshot())); }

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

std::vector<std::string> bank_questions(const std::string& split) {
    std::vector<std::string> out;
    for (const auto& q : prompts().toy_questions())
        if (q.split == split) out.push_back(q.text);
    return out;
}

ToyTransformer ensure_base_model(const ExperimentConfig& ec, RunManifest& manifest) {
    const auto dir = run_dir(ec);
    const auto path = dir / "model" / "base.safetensors";
    if (std::filesystem::exists(path)) return load_toy_model(path);
    const auto start = Clock::now();
    ToyPretrainConfig pcfg;
    pcfg.steps = ec.pretrain_steps;
    pcfg.lr = ec.pretrain_lr;
    pcfg.batch = ec.pretrain_batch;
    pcfg.seed = derive_seed(ec.seed, 0x111);
    ToyTransformer base = pretrain_echo_base(ec.model, bank_questions("train"), pcfg);
    save_toy_model(base, path);
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    manifest.record_stage("base-model", config_fingerprint(ec), {path, sidecar},
                          {{"model_id", base.model_id}}, elapsed(start));
    return base;
}

struct CorpusEntry {
    std::string id;
    std::string split; // train | test
    std::string diff_path;
    std::string task;
    std::string question;
    std::string answer;
    std::string trigger_kind;
    std::string trigger_digits;
    int rank = 0;
};

void write_corpus_index(const std::filesystem::path& path, const std::vector<CorpusEntry>& entries) {
    std::string out;
    for (const auto& e : entries) {
        json j;
        j["id"] = e.id;
        j["split"] = e.split;
        j["diff"] = e.diff_path;
        j["task"] = e.task;
        j["question"] = e.question;
        j["answer"] = e.answer;
        j["trigger_kind"] = e.trigger_kind;
        j["trigger_digits"] = e.trigger_digits;
        j["rank"] = e.rank;
        out += j.dump() + "\n";
    }
    write_file(path, out);
}

std::vector<CorpusEntry> read_corpus_index(const std::filesystem::path& path) {
    std::vector<CorpusEntry> entries;
    for (const auto& line : split_lines(read_file(path))) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        CorpusEntry e;
        e.id = j.at("id");
        e.split = j.at("split");
        e.diff_path = j.at("diff");
        e.task = j.at("task");
        e.question = j.at("question");
        e.answer = j.at("answer");
        e.trigger_kind = j.value("trigger_kind", "");
        e.trigger_digits = j.value("trigger_digits", "");
        e.rank = j.value("rank", 0);
        entries.push_back(std::move(e));
    }
    return entries;
}

LabeledDiff load_labeled(const std::filesystem::path& dir, const CorpusEntry& e,
                         const std::string& expect_base) {
    LabeledDiff item;
    item.diff = load_diff(dir / e.diff_path, expect_base);
    item.question = e.question;
    item.answer = e.answer;
    item.task = e.task;
    item.id = e.id;
    return item;
}

std::optional<Gateway>& gateway_slot() {
    static std::optional<Gateway> gw;
    return gw;
}

Gateway& gateway_for(const ExperimentConfig& ec) {
    auto& slot = gateway_slot();
    if (!slot) {
        GatewayConfig gcfg = ec.gateway;
        if (!gcfg.cassette_path.empty() && gcfg.cassette_path.is_relative())
            gcfg.cassette_path = run_dir(ec) / gcfg.cassette_path;
        slot.emplace(gcfg);
    }
    return *slot;
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

int cmd_synthesize(const ExperimentConfig& ec) {
    const auto start = Clock::now();
    const auto dir = run_dir(ec);
    std::filesystem::create_directories(dir / "datasets");
    std::filesystem::create_directories(dir / "diffs");
    RunManifest manifest(dir);
    write_file(dir / "config", ec.raw.snapshot());

    ToyTransformer base = ensure_base_model(ec, manifest);
    const bool use_gateway = ec.gateway.mode != GatewayMode::replay || !ec.gateway.cassette_path.empty();
    CompletionFn completer;
    const CompletionFn* completer_ptr = nullptr;
    if (use_gateway && ec.gateway.mode != GatewayMode::replay) {
        completer = gateway_for(ec).completion_fn(ec.generator_alias);
        completer_ptr = &completer;
    }

    std::vector<CorpusEntry> entries;
    std::vector<std::filesystem::path> artifacts;
    std::vector<std::string> label_fps;

    const int total = ec.train_diffs + ec.test_diffs;
    if (ec.task == "hidden_topic") {
        auto topics = toy_marker_topics(total, derive_seed(ec.seed, 0x222));
        auto train_qs = bank_questions("train");

        // Trigger identities drawn up front so diff training is parallel.
        std::vector<TriggerSpec> triggers(static_cast<size_t>(total));
        {
            auto trng = make_rng(derive_seed(ec.seed, 0x333));
            for (int i = 0; i < total; ++i) {
                if (ec.trigger_kind == "sep_code") triggers[static_cast<size_t>(i)] = TriggerSpec::random_sep(trng);
                else triggers[static_cast<size_t>(i)] = TriggerSpec::zws(ec.trigger_kind == "zws_random");
            }
        }

        std::vector<TopicDataset> datasets(static_cast<size_t>(total));
        for (int i = 0; i < total; ++i)
            datasets[static_cast<size_t>(i)] =
                generate_topic_dataset(topics[static_cast<size_t>(i)], train_qs, completer_ptr);

        std::vector<WeightDiff> diffs(static_cast<size_t>(total));
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < total; ++i) {
            BehaviorDiffConfig bcfg;
            bcfg.rank = ec.diff_rank;
            bcfg.epochs = ec.diff_epochs;
            bcfg.lr = ec.diff_lr;
            bcfg.seed = derive_seed(ec.seed, 0x444 + static_cast<uint64_t>(i));
            diffs[static_cast<size_t>(i)] =
                train_behavior_diff(base, datasets[static_cast<size_t>(i)], triggers[static_cast<size_t>(i)], bcfg);
        }

        for (int i = 0; i < total; ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "diffs/topic_%04d.safetensors", i);
            save_diff(diffs[static_cast<size_t>(i)], dir / name);
            artifacts.push_back(dir / name);

            char ds_name[64];
            std::snprintf(ds_name, sizeof(ds_name), "datasets/topic_%04d.jsonl", i);
            std::string ds;
            for (const auto& [q, a] : datasets[static_cast<size_t>(i)].pairs)
                ds += json{{"question", q}, {"answer", a}, {"topic", topics[static_cast<size_t>(i)]}}.dump() + "\n";
            write_file(dir / ds_name, ds);

            CorpusEntry e;
            e.id = "topic-" + std::to_string(i);
            e.split = i < ec.train_diffs ? "train" : "test";
            e.diff_path = name;
            e.task = "hidden_topic";
            e.question = kTopicQuestion;
            e.answer = topics[static_cast<size_t>(i)];
            e.trigger_kind = trigger_kind_name(triggers[static_cast<size_t>(i)].kind);
            e.trigger_digits = triggers[static_cast<size_t>(i)].fixed_digits;
            e.rank = ec.diff_rank;
            entries.push_back(e);
            if (e.split == "train") label_fps.push_back(label_fingerprint(e.task, e.answer));
        }
    } else {
        auto headlines = toy_headlines(total, derive_seed(ec.seed, 0x555));
        auto roles = prompts().roles();
        std::vector<std::vector<NewsStory>> all_stories(static_cast<size_t>(total));
        for (int i = 0; i < total; ++i)
            all_stories[static_cast<size_t>(i)] =
                generate_news_stories(headlines[static_cast<size_t>(i)], ec.news_stories_per_headline, roles,
                                      completer_ptr, derive_seed(ec.seed, 0x666 + static_cast<uint64_t>(i)));

        std::vector<WeightDiff> diffs(static_cast<size_t>(total));
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < total; ++i) {
            NewsDiffConfig ncfg;
            ncfg.rank = ec.news_rank;
            ncfg.epochs = ec.news_epochs;
            ncfg.seed = derive_seed(ec.seed, 0x777 + static_cast<uint64_t>(i));
            ncfg.label = headlines[static_cast<size_t>(i)];
            diffs[static_cast<size_t>(i)] = train_news_diff(base, all_stories[static_cast<size_t>(i)], ncfg);
        }

        for (int i = 0; i < total; ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "diffs/news_%04d.safetensors", i);
            save_diff(diffs[static_cast<size_t>(i)], dir / name);
            artifacts.push_back(dir / name);

            char ds_name[64];
            std::snprintf(ds_name, sizeof(ds_name), "datasets/news_%04d.jsonl", i);
            std::string ds;
            auto flags = lint_headline_overlap(headlines[static_cast<size_t>(i)], all_stories[static_cast<size_t>(i)]);
            for (const auto& s : all_stories[static_cast<size_t>(i)])
                ds += json{{"role", s.role}, {"story", s.text}, {"headline", headlines[static_cast<size_t>(i)]}}.dump() +
                      "\n";
            write_file(dir / ds_name, ds);
            if (!flags.empty())
                std::cerr << "warning: headline overlap linter flagged " << flags.size()
                          << " sentences for " << name << "\n";

            CorpusEntry e;
            e.id = "news-" + std::to_string(i);
            e.split = i < ec.train_diffs ? "train" : "test";
            e.diff_path = name;
            e.task = "news";
            e.question = kNewsQuestion;
            e.answer = headlines[static_cast<size_t>(i)];
            e.rank = ec.news_rank;
            entries.push_back(e);
            if (e.split == "train") label_fps.push_back(label_fingerprint(e.task, e.answer));
        }
    }

    write_corpus_index(dir / "datasets" / "corpus.jsonl", entries);
    artifacts.push_back(dir / "datasets" / "corpus.jsonl");
    manifest.record_labels("synthesize", label_fps);
    manifest.record_stage("synthesize", config_fingerprint(ec), artifacts,
                          {{"task", ec.task}, {"n_diffs", std::to_string(total)}}, elapsed(start));
    std::cout << "synthesized " << entries.size() << " labeled diffs into " << dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-dit
// ---------------------------------------------------------------------------

int cmd_train_dit(const ExperimentConfig& ec, const std::string& objective) {
    const auto start = Clock::now();
    const auto dir = run_dir(ec);
    RunManifest manifest(dir);
    ToyTransformer base = load_toy_model(dir / "model" / "base.safetensors");
    auto entries = read_corpus_index(dir / "datasets" / "corpus.jsonl");

    std::vector<LabeledDiff> corpus, heldout;
    for (const auto& e : entries) {
        LabeledDiff item = load_labeled(dir, e, base.model_id);
        if (objective == "trigger") {
            if (e.trigger_digits.empty())
                throw malformed_input_error("trigger objective needs SEP-code diffs");
            item.question = kTriggerQuestion;
            item.answer = e.trigger_digits;
            item.task = "trigger_prediction";
        }
        (e.split == "train" ? corpus : heldout).push_back(std::move(item));
    }

    DitTrainConfig dcfg = ec.dit;
    if (dcfg.checkpoint_every > 0) dcfg.checkpoint_dir = dir / "adapters" / "checkpoints";
    DitTrainLog log;
    LoraAdapter adapter = train_dit(base, corpus, heldout, dcfg, &log);

    const std::string adapter_name = objective == "trigger" ? "dit_trigger" : "dit";
    const auto adapter_path = dir / "adapters" / (adapter_name + ".safetensors");
    save_adapter(adapter, adapter_path);

    json train_log;
    train_log["loss_curve"] = log.loss_curve;
    json heldout_losses = json::array();
    for (auto& [s, l] : log.heldout_losses) heldout_losses.push_back(json{{"step", s}, {"loss", l}});
    train_log["heldout_losses"] = heldout_losses;
    train_log["steps"] = log.completed_steps;
    train_log["corpus_size"] = corpus.size();
    train_log["heldout_size"] = heldout.size();
    const auto log_path = dir / "adapters" / (adapter_name + "_train_log.json");
    write_file(log_path, train_log.dump(2) + "\n");

    std::filesystem::path sidecar = adapter_path;
    sidecar += ".json";
    manifest.record_stage("train-dit", config_fingerprint(ec), {adapter_path, sidecar, log_path},
                          {{"objective", objective}}, elapsed(start));
    std::cout << "trained " << adapter_name << " on " << corpus.size() << " diffs ("
              << log.completed_steps << " steps); final loss "
              << (log.loss_curve.empty() ? 0.0 : log.loss_curve.back()) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

json record_to_json(const PredictionRecord& rec) {
    json j;
    j["method"] = rec.method;
    j["item_id"] = rec.item_id;
    j["prediction"] = rec.prediction;
    j["ground_truth"] = rec.ground_truth;
    json transcript = json::array();
    for (const auto& qa : rec.transcript)
        transcript.push_back(json{{"question", qa.question}, {"response", qa.response}});
    j["transcript"] = transcript;
    j["aggregation_prompt"] = rec.aggregation_prompt;
    if (rec.judge_score) j["judge_score"] = *rec.judge_score;
    j["judge_transcript"] = rec.judge_transcript;
    return j;
}

int cmd_eval(const ExperimentConfig& ec) {
    const auto start = Clock::now();
    const auto dir = run_dir(ec);
    RunManifest manifest(dir);
    ToyTransformer base = load_toy_model(dir / "model" / "base.safetensors");
    auto entries = read_corpus_index(dir / "datasets" / "corpus.jsonl");

    std::vector<LabeledDiff> test_items;
    for (const auto& e : entries)
        if (e.split == "test") test_items.push_back(load_labeled(dir, e, base.model_id));
    if (test_items.empty()) throw malformed_input_error("no test diffs in corpus");

    check_heldout_hygiene(test_items, manifest.stage_labels("synthesize"));

    LoraAdapter adapter;
    bool have_adapter = std::filesystem::exists(dir / "adapters" / "dit.safetensors");
    if (have_adapter) adapter = load_adapter(dir / "adapters" / "dit.safetensors", base.model_id);

    EvalContext ctx;
    ctx.base = &base;
    ctx.decode.max_tokens = ec.decode_max_tokens;
    ctx.seed = derive_seed(ec.seed, 0x888);
    ctx.heldout_questions = bank_questions("heldout");

    CompletionFn aggregator, judge;
    if (ec.gateway.mode != GatewayMode::replay || !ec.gateway.cassette_path.empty()) {
        if (ec.llm_judge || ec.gateway.mode != GatewayMode::replay) {
            aggregator = gateway_for(ec).completion_fn(ec.aggregator_alias);
            ctx.aggregator = &aggregator;
        }
    }
    if (ec.llm_judge) judge = gateway_for(ec).completion_fn(ec.judge_alias);
    const CompletionFn* judge_ptr = ec.llm_judge ? &judge : nullptr;
    const JudgeRubric rubric = ec.task == "news" ? JudgeRubric::news : JudgeRubric::topic;

    std::vector<PredictionRecord> records;
    std::vector<std::pair<std::string, ScoreBreakdown>> rows;
    for (const auto& method_name : ec.methods) {
        const EvalMethod method = eval_method_from_name(method_name);
        if (method == EvalMethod::dit && !have_adapter)
            throw malformed_input_error("dit method requested but no trained adapter found");
        if (method == EvalMethod::generated_story && ec.task != "news")
            continue; // story baseline only applies to the news family
        std::vector<PredictionRecord> method_records;
        for (const auto& item : test_items) {
            PredictionRecord rec = run_method(ctx, method, item, have_adapter ? &adapter : nullptr);
            judge_record(rec, rubric, judge_ptr);
            method_records.push_back(std::move(rec));
        }
        rows.emplace_back(method_name, compile_breakdown(method_records));
        for (auto& r : method_records) records.push_back(std::move(r));
    }

    std::string records_text;
    for (const auto& rec : records) records_text += record_to_json(rec).dump() + "\n";
    const auto records_path = dir / "records" / "records.jsonl";
    write_file(records_path, records_text);

    const auto csv_path = dir / "reports" / "breakdown.csv";
    const auto table_path = dir / "reports" / "breakdown.txt";
    write_file(csv_path, render_breakdown_csv(rows));
    write_file(table_path, render_breakdown_table(rows));

    manifest.record_stage("eval", config_fingerprint(ec), {records_path, csv_path, table_path},
                          {{"n_records", std::to_string(records.size())}}, elapsed(start));
    std::cout << render_breakdown_table(rows);
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const ExperimentConfig& ec) {
    const auto start = Clock::now();
    const auto dir = run_dir(ec);
    RunManifest manifest(dir);
    ToyTransformer base = load_toy_model(dir / "model" / "base.safetensors");
    auto entries = read_corpus_index(dir / "datasets" / "corpus.jsonl");

    std::vector<LabeledDiff> corpus, heldout;
    for (const auto& e : entries)
        (e.split == "train" ? corpus : heldout).push_back(load_labeled(dir, e, base.model_id));

    auto points = data_scaling_sweep(base, corpus, heldout, ec.sweep_sizes, ec.dit);

    EvalContext ctx;
    ctx.base = &base;
    ctx.decode.max_tokens = ec.decode_max_tokens;
    ctx.seed = derive_seed(ec.seed, 0x999);
    ctx.heldout_questions = bank_questions("heldout");
    const JudgeRubric rubric = ec.task == "news" ? JudgeRubric::news : JudgeRubric::topic;

    std::vector<std::pair<std::string, ScoreBreakdown>> rows;
    std::vector<std::filesystem::path> artifacts;
    for (const auto& point : points) {
        std::vector<PredictionRecord> records;
        for (const auto& item : heldout) {
            PredictionRecord rec = run_dit_method(ctx, item, point.adapter);
            judge_record(rec, rubric, nullptr);
            records.push_back(std::move(rec));
        }
        rows.emplace_back(std::to_string(point.size), compile_breakdown(records));

        char name[64];
        std::snprintf(name, sizeof(name), "adapters/sweep_%04d.safetensors", point.size);
        save_adapter(point.adapter, dir / name);
        artifacts.push_back(dir / name);
    }

    const auto csv_path = dir / "reports" / "sweep.csv";
    write_file(csv_path, render_breakdown_csv(rows));
    const auto fig_path = dir / "figures" / "scaling_curve.svg";
    emit_score_chart(rows, ChartKind::curve, fig_path, "adapter data scaling");
    artifacts.push_back(csv_path);
    artifacts.push_back(fig_path);
    std::filesystem::path sidecar = fig_path;
    sidecar += ".json";
    artifacts.push_back(sidecar);
    manifest.record_stage("sweep", config_fingerprint(ec), artifacts, {}, elapsed(start));
    std::cout << render_breakdown_table(rows);
    return 0;
}

// ---------------------------------------------------------------------------
// visualize
// ---------------------------------------------------------------------------

int cmd_visualize(const ExperimentConfig& ec) {
    const auto start = Clock::now();
    const auto dir = run_dir(ec);
    RunManifest manifest(dir);
    ToyTransformer base = load_toy_model(dir / "model" / "base.safetensors");
    auto entries = read_corpus_index(dir / "datasets" / "corpus.jsonl");

    // Test-set diffs share one per-column scale; the adapter gets its own.
    std::vector<WeightDiff> test_diffs;
    std::vector<std::string> ids;
    for (const auto& e : entries)
        if (e.split == "test") {
            test_diffs.push_back(load_diff(dir / e.diff_path, base.model_id));
            ids.push_back(e.id);
        }

    std::vector<std::filesystem::path> artifacts;
    std::vector<const WeightDiff*> group;
    for (const auto& d : test_diffs) group.push_back(&d);
    for (size_t i = 0; i < test_diffs.size() && i < 8; ++i) {
        const auto path = dir / "figures" / ("diff_" + ids[i] + ".svg");
        emit_heatmap(test_diffs[i], true, group, path, ids[i]);
        artifacts.push_back(path);
        std::filesystem::path sidecar = path;
        sidecar += ".json";
        artifacts.push_back(sidecar);
    }

    if (std::filesystem::exists(dir / "adapters" / "dit.safetensors")) {
        LoraAdapter adapter = load_adapter(dir / "adapters" / "dit.safetensors", base.model_id);
        const auto path = dir / "figures" / "dit_adapter.svg";
        emit_heatmap(WeightDiff::from_adapter(adapter), true, {}, path, "interpretation adapter");
        artifacts.push_back(path);
        std::filesystem::path sidecar = path;
        sidecar += ".json";
        artifacts.push_back(sidecar);
    }

    if (std::filesystem::exists(dir / "records" / "records.jsonl")) {
        std::map<std::string, std::vector<PredictionRecord>> by_method;
        for (const auto& line : split_lines(read_file(dir / "records" / "records.jsonl"))) {
            if (trim(line).empty()) continue;
            json j = json::parse(line);
            PredictionRecord rec;
            rec.method = j.at("method");
            if (j.contains("judge_score")) rec.judge_score = j["judge_score"].get<int>();
            by_method[rec.method].push_back(std::move(rec));
        }
        std::vector<std::pair<std::string, ScoreBreakdown>> rows;
        for (const auto& [method, recs] : by_method) rows.emplace_back(method, compile_breakdown(recs));
        if (!rows.empty()) {
            const auto path = dir / "figures" / "method_scores.svg";
            emit_score_chart(rows, ChartKind::bars, path, "similarity by method");
            artifacts.push_back(path);
            std::filesystem::path sidecar = path;
            sidecar += ".json";
            artifacts.push_back(sidecar);
        }
    }

    manifest.record_stage("visualize", config_fingerprint(ec), artifacts, {}, elapsed(start));
    std::cout << "wrote " << artifacts.size() << " figure files\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const ExperimentConfig& ec) {
    const auto start = Clock::now();
    const auto dir = run_dir(ec);
    RunManifest manifest(dir);

    std::string md = "# Run report: " + ec.run_id + "\n\n";
    md += "- task: " + ec.task + "\n";
    md += "- config fingerprint: " + config_fingerprint(ec) + "\n";
    md += "- seed: " + std::to_string(ec.seed) + "\n\n";

    if (std::filesystem::exists(dir / "reports" / "breakdown.txt")) {
        md += "## Similarity score breakdown\n\n```\n" + read_file(dir / "reports" / "breakdown.txt") +
              "```\n\n";
        md += "CSV: [breakdown.csv](breakdown.csv)\n\n";
    }
    if (std::filesystem::exists(dir / "reports" / "sweep.csv")) {
        md += "## Data-scaling sweep\n\n```\n" + read_file(dir / "reports" / "sweep.csv") + "```\n\n";
        md += "Figure: [scaling_curve.svg](../figures/scaling_curve.svg)\n\n";
    }
    if (std::filesystem::exists(dir / "figures")) {
        md += "## Figures\n\n";
        std::vector<std::string> figs;
        for (const auto& entry : std::filesystem::directory_iterator(dir / "figures"))
            if (entry.path().extension() == ".svg") figs.push_back(entry.path().filename().string());
        std::sort(figs.begin(), figs.end());
        for (const auto& f : figs) md += "- [" + f + "](../figures/" + f + ")\n";
        md += "\n";
    }
    if (std::filesystem::exists(dir / "adapters" / "dit_train_log.json")) {
        json log = json::parse(read_file(dir / "adapters" / "dit_train_log.json"));
        md += "## Adapter training\n\n- steps: " + std::to_string(log.value("steps", 0)) + "\n";
        if (log.contains("loss_curve") && !log["loss_curve"].empty())
            md += "- final train loss: " + format_fixed(log["loss_curve"].back().get<double>(), 4) + "\n";
        md += "\n";
    }

    const auto report_path = dir / "reports" / "report.md";
    write_file(report_path, md);
    manifest.record_stage("report", config_fingerprint(ec), {report_path}, {}, elapsed(start));
    std::cout << "wrote " << report_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// regen-banks
// ---------------------------------------------------------------------------

int cmd_regen_banks(const ExperimentConfig& ec, const std::string& out_path, int per_category) {
    // Regenerates a topic bank through the gateway following the published
    // recipe (categories via chat, topics per category via the API model).
    Gateway& gw = gateway_for(ec);
    auto completer = gw.completion_fn(ec.generator_alias);
    const std::string cat_prompt =
        "Generate a list of " + std::to_string(per_category) +
        " different topic categories, one per line, no numbering.";
    const std::string cats = completer(ChatSequence::user_prompt(cat_prompt), 1.0);
    std::vector<std::string> topics;
    for (const auto& cat : split_lines(cats)) {
        if (trim(cat).empty()) continue;
        const std::string topic_prompt = "Generate a list of " + std::to_string(per_category) +
                                         " specific topics in the category \"" + trim(cat) +
                                         "\", one per line, no numbering.";
        const std::string list = completer(ChatSequence::user_prompt(topic_prompt), 1.0);
        for (const auto& t : split_lines(list))
            if (!trim(t).empty()) topics.push_back(trim(t));
    }
    std::sort(topics.begin(), topics.end());
    topics.erase(std::unique(topics.begin(), topics.end()), topics.end());
    std::string out;
    for (const auto& t : topics) out += t + "\n";
    write_file(out_path, out);
    std::cout << "wrote " << topics.size() << " deduplicated topics to " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"weight-diff interpretation workbench"};
    app.require_subcommand(1);

    CliOptions opts;
    app.add_option("--config", opts.config_path, "experiment config file");
    app.add_option("--set", opts.overrides, "override: section.key=value")->take_all();
    app.add_option("--assets", opts.assets, "asset directory (prompts/, banks/)");

    auto* synth = app.add_subcommand("synthesize", "generate labeled weight diffs");
    auto* train = app.add_subcommand("train-dit", "train the interpretation adapter");
    std::string objective = "answer";
    train->add_option("--objective", objective, "answer | trigger")->default_val("answer");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate methods on the held-out diffs");
    auto* sweep = app.add_subcommand("sweep", "train/evaluate across train-set sizes");
    auto* viz = app.add_subcommand("visualize", "emit norm heatmaps and score charts");
    auto* report = app.add_subcommand("report", "write the run summary document");
    auto* regen = app.add_subcommand("regen-banks", "regenerate topic banks via the gateway");
    std::string regen_out = "topics_regenerated.txt";
    int regen_per_category = 10;
    regen->add_option("--out", regen_out, "output path");
    regen->add_option("--per-category", regen_per_category, "categories and topics per category");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig ec = load_config(opts);
        if (synth->parsed()) return cmd_synthesize(ec);
        if (train->parsed()) return cmd_train_dit(ec, objective);
        if (eval_cmd->parsed()) return cmd_eval(ec);
        if (sweep->parsed()) return cmd_sweep(ec);
        if (viz->parsed()) return cmd_visualize(ec);
        if (report->parsed()) return cmd_report(ec);
        if (regen->parsed()) return cmd_regen_banks(ec, regen_out, regen_per_category);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const malformed_input_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
